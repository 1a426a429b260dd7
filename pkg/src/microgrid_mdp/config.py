"""Scenario configuration: YAML on disk, validated pydantic models in memory."""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .domain import AdlJob, GridParams, Variant
from .errors import ConfigError
from .processes import FiniteMarkovChain, RenewableSource


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MicrogridConfig(_Model):
    name: str
    kind: Literal["solar", "wind", "none"] = "solar"
    battery_capacity: int = Field(8, ge=0)
    max_grid_buy: int = Field(14, ge=0)
    renewable_cap: int = Field(8, ge=0)
    # per-slot Poisson rates; omitted means the default profile for ``kind``
    rates: Optional[list[float]] = None
    daily_jobs: list[tuple[int, int]] = [(1, 2), (1, 3), (2, 4)]

    @field_validator("rates")
    @classmethod
    def _rates_nonneg(cls, v):
        if v is not None and any(r < 0 for r in v):
            raise ValueError("rates must be >= 0")
        return v

    @field_validator("daily_jobs")
    @classmethod
    def _jobs_valid(cls, v):
        for energy, deadline in v:
            if energy < 1 or deadline < 0:
                raise ValueError(f"job ({energy}, {deadline}) needs energy >= 1, deadline >= 0")
        return v


class ChainConfig(_Model):
    alphabet: list[int]
    seed: int

    @field_validator("alphabet")
    @classmethod
    def _distinct(cls, v):
        if not v:
            raise ValueError("alphabet must be non-empty")
        if len(set(v)) != len(v):
            raise ValueError("alphabet values must be distinct")
        return v


class TrainingConfig(_Model):
    cycles: int = Field(1_000_000, ge=0)
    trace_stride: int = Field(1000, ge=1)
    epsilon: float = Field(0.1, ge=0.0, le=1.0)
    alpha_c0: float = Field(1.0, gt=0.0)
    alpha_c1: float = Field(10.0, gt=0.0)
    alpha_power: float = Field(0.9, gt=0.5, le=1.0)
    # fixed step size instead of the visit-count schedule
    alpha_constant: Optional[float] = Field(None, gt=0.0, le=1.0)

    @model_validator(mode="after")
    def _alpha_bounded(self):
        if self.alpha_constant is None and self.alpha_c0 > self.alpha_c1 ** self.alpha_power:
            raise ValueError("alpha_c0 / alpha_c1**alpha_power must be <= 1")
        return self


class EvaluationConfig(_Model):
    runs: int = Field(1000, ge=1)
    run_days: int = Field(1, ge=1)
    settle: bool = True
    write_flows: bool = True


class OracleConfig(_Model):
    max_pairs: int = Field(2_000_000, ge=1)
    tol: float = Field(1e-8, gt=0.0)
    max_sweeps: int = Field(1_000_000, ge=1)


class ScenarioConfig(_Model):
    name: str = "scenario"
    slots_per_day: int = Field(4, ge=1)
    microgrids: list[MicrogridConfig]
    demand: ChainConfig
    price: ChainConfig
    variants: list[Variant] = list(Variant)
    penalties: list[float] = [0.0, 5.0, 10.0, 30.0]
    master_seed: int = Field(0, ge=0)
    # compare runs master seeds master_seed .. master_seed + compare_seeds - 1
    compare_seeds: int = Field(5, ge=1)
    penalize_scheduled_at_deadline: bool = False
    observe_demand: bool = False
    training: TrainingConfig = TrainingConfig()
    evaluation: EvaluationConfig = EvaluationConfig()
    oracle: OracleConfig = OracleConfig()

    @field_validator("penalties")
    @classmethod
    def _penalties_nonneg(cls, v):
        if any(c < 0 for c in v):
            raise ValueError("penalties must be >= 0")
        return v

    @model_validator(mode="after")
    def _rates_match_slots(self):
        if not self.microgrids:
            raise ValueError("at least one microgrid is required")
        for mg in self.microgrids:
            if mg.rates is not None and len(mg.rates) != self.slots_per_day:
                raise ValueError(
                    f"microgrid {mg.name!r}: {len(mg.rates)} rates for {self.slots_per_day} slots"
                )
            if mg.rates is None and mg.kind == "solar" and self.slots_per_day != 4:
                raise ValueError(f"microgrid {mg.name!r}: solar needs explicit rates unless 4 slots/day")
            if mg.kind == "none" and mg.rates and any(mg.rates):
                raise ValueError(f"microgrid {mg.name!r}: kind 'none' must have zero rates")
        return self

    def grid_params(self, agent: int, penalty: float | None = None) -> GridParams:
        mg = self.microgrids[agent]
        return GridParams(
            battery_capacity=mg.battery_capacity,
            max_grid_buy=mg.max_grid_buy,
            penalty=self.penalties[0] if penalty is None else penalty,
            slots_per_day=self.slots_per_day,
            daily_jobs=tuple(AdlJob(*j) for j in mg.daily_jobs),
            penalize_scheduled_at_deadline=self.penalize_scheduled_at_deadline,
            observe_demand=self.observe_demand,
        )

    def source(self, agent: int) -> RenewableSource:
        mg = self.microgrids[agent]
        if mg.rates is None:
            return RenewableSource.default(mg.kind, self.slots_per_day, mg.renewable_cap)
        return RenewableSource(mg.kind, tuple(mg.rates), mg.renewable_cap)

    def demand_chain(self) -> FiniteMarkovChain:
        return FiniteMarkovChain.random(self.demand.alphabet, self.demand.seed)

    def price_chain(self) -> FiniteMarkovChain:
        return FiniteMarkovChain.random(self.price.alphabet, self.price.seed)

    def to_yaml(self) -> str:
        data = self.model_dump(mode="json")
        for mg in data["microgrids"]:
            mg["daily_jobs"] = [list(j) for j in mg["daily_jobs"]]
        return yaml.safe_dump(data, sort_keys=False)


def _path(loc) -> str:
    out = ""
    for part in loc:
        if isinstance(part, int):
            out += f"[{part}]"
        else:
            out += f".{part}" if out else str(part)
    return out or "<root>"


def parse_config(data: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        raise ConfigError(_path(err["loc"]), err["msg"]) from None


def load_config(path: str | Path) -> ScenarioConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("<root>", "expected a mapping")
    return parse_config(data)


def default_scenario() -> ScenarioConfig:
    """Three microgrids (two solar, one wind) with the published constants."""
    return ScenarioConfig(
        name="three-microgrid",
        slots_per_day=4,
        microgrids=[
            MicrogridConfig(name="MG-1", kind="solar"),
            MicrogridConfig(name="MG-2", kind="solar"),
            MicrogridConfig(name="MG-3", kind="wind"),
        ],
        demand=ChainConfig(alphabet=[2, 4, 6], seed=2018),
        price=ChainConfig(alphabet=[5, 10, 15], seed=2019),
    )


def five_microgrid_scenario() -> ScenarioConfig:
    cfg = default_scenario()
    return cfg.model_copy(
        update={
            "name": "five-microgrid",
            "microgrids": [
                MicrogridConfig(name="MG-1", kind="solar"),
                MicrogridConfig(name="MG-2", kind="solar"),
                MicrogridConfig(name="MG-3", kind="wind"),
                MicrogridConfig(name="MG-4", kind="wind"),
                MicrogridConfig(name="MG-5", kind="none"),
            ],
        }
    )


def tiny_scenario() -> ScenarioConfig:
    """One microgrid small enough for the exact solver."""
    return ScenarioConfig(
        name="tiny",
        slots_per_day=2,
        microgrids=[
            MicrogridConfig(
                name="MG-1",
                kind="wind",
                battery_capacity=2,
                max_grid_buy=4,
                renewable_cap=2,
                rates=[1.5, 1.5],
                daily_jobs=[(1, 1)],
            )
        ],
        demand=ChainConfig(alphabet=[2, 4], seed=5),
        price=ChainConfig(alphabet=[5, 10], seed=6),
        variants=[Variant.ADL_SHARING],
        penalties=[5.0],
        observe_demand=True,
        training=TrainingConfig(epsilon=0.3, alpha_power=0.8),
    )
