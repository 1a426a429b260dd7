"""Training/evaluation orchestration, model comparison and CSV output.

CSV schemas (version 1, headers always written)
-----------------------------------------------
convergence.csv  master_seed, variant, penalty, iteration, agent, f_of_Q, cumulative_mean_reward
profits.csv      master_seed, variant, penalty, microgrid, mean_profit, std_error, runs
runs.csv         master_seed, variant, penalty, run, microgrid, profit
flows.csv        master_seed, variant, penalty, day, slot, seller, buyer, units, price
gaps.csv         microgrid, comparison, penalty, mean_gap, std_error, seeds, flag

Profits are per slot. A run is ``run_days`` simulated days starting from a
fresh slot-1 state: empty battery, demand and price drawn from their
stationary laws, the daily jobs just issued.
"""

from __future__ import annotations

import csv
import json
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, domain
from .config import ScenarioConfig
from .domain import JointAction, Variant
from .errors import ConfigError
from .learner import TrainResult, extract_policy, train
from .market import SettlementRecord, settle
from .processes import Stream, draw_index, sample_renewable, spawn_rng

CSV_VERSION = 1


def _num(x: float) -> str:
    return repr(float(x))


@dataclass
class CellReport:
    variant: Variant
    penalty: float
    master_seed: int
    profits: np.ndarray  # runs x microgrids, per-slot average
    settlement: dict = field(default_factory=dict)
    flows: list[SettlementRecord] = field(default_factory=list)
    training: list[TrainResult] = field(default_factory=list)

    def mean(self) -> np.ndarray:
        return self.profits.mean(axis=0)

    def std_error(self) -> np.ndarray:
        n = self.profits.shape[0]
        if n < 2:
            return np.zeros(self.profits.shape[1])
        return self.profits.std(axis=0, ddof=1) / np.sqrt(n)


@dataclass
class EvaluationReport:
    scenario: str
    master_seed: int
    microgrids: list[str]
    cells: list[CellReport]
    metadata: dict = field(default_factory=dict)

    def cell(self, variant, penalty: float) -> CellReport:
        variant = Variant(variant)
        for c in self.cells:
            if c.variant is variant and c.penalty == float(penalty):
                return c
        raise KeyError(f"no cell for {variant.value} at c={penalty}")

    def profit(self, variant, penalty: float) -> np.ndarray:
        return self.cell(variant, penalty).mean()

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "master_seed": self.master_seed,
            "microgrids": self.microgrids,
            "metadata": self.metadata,
            "cells": [
                {
                    "variant": c.variant.value,
                    "penalty": c.penalty,
                    "runs": int(c.profits.shape[0]),
                    "mean_profit": c.mean().tolist(),
                    "std_error": c.std_error().tolist(),
                    "settlement": c.settlement,
                    "reference_states": [t.table.reference_state for t in c.training],
                    "final_f_of_Q": [t.table.reference_value() for t in c.training],
                }
                for c in self.cells
            ],
        }


def build_id() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True, text=True, timeout=5, cwd=Path(__file__).parent,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def evaluate_policies(
    scenario: ScenarioConfig,
    results: list[TrainResult],
    runs: int | None = None,
    settle_trades: bool | None = None,
    keep_flows: bool = False,
) -> tuple[np.ndarray, dict, list[SettlementRecord]]:
    """Run the frozen greedy policies of all microgrids jointly.

    Returns per-run, per-microgrid average profit per slot, settlement
    totals, and (if ``keep_flows``) the per-slot settlement records.
    """
    ev = scenario.evaluation
    runs = ev.runs if runs is None else runs
    settle_trades = ev.settle if settle_trades is None else settle_trades
    T = scenario.slots_per_day
    steps = T * ev.run_days
    n = len(results)
    variant = results[0].variant

    demand = scenario.demand_chain()
    price = scenario.price_chain()
    demand_start = np.cumsum(demand.stationary())
    price_start = np.cumsum(price.stationary())
    price_rng = spawn_rng(scenario.master_seed, Stream.EVAL_PRICE)
    rngs = [spawn_rng(scenario.master_seed, Stream.EVAL_ENV, i) for i in range(n)]
    models = [r.model for r in results]
    params = [m.params for m in models]
    sources = [m.source for m in models]
    greedy = []
    for r in results:
        pol = r.model.act_ptr[:-1] + extract_policy(r.table)
        greedy.append((r.model.act_trade[pol], r.model.act_mask[pol]))

    profits = np.zeros((runs, n))
    totals = {"peer_units": 0, "main_grid_absorbed": 0, "main_grid_supplied": 0}
    records: list[SettlementRecord] = []
    for run in range(runs):
        p_idx = draw_index(price_start, price_rng.random())
        d_idx = []
        snaps = []
        for i in range(n):
            d = draw_index(demand_start, rngs[i].random())
            r = sample_renewable(sources[i], 1, rngs[i])
            d_idx.append(d)
            snaps.append(domain.initial_snapshot(r, demand.alphabet[d], price.alphabet[p_idx], params[i], variant))
        for t in range(steps):
            slot = snaps[0].state.slot
            p_now = price.alphabet[p_idx]
            p_idx = draw_index(price.cumulative[p_idx], price_rng.random())
            nxt_slot = domain.next_slot(slot, T)
            trades = []
            for i in range(n):
                st = snaps[i].state
                s = models[i].index(st)
                action = JointAction(int(greedy[i][0][s]), int(greedy[i][1][s]))
                trades.append(action.trade + action.adl_draw(st.jobs))
                d_idx[i] = draw_index(demand.cumulative[d_idx[i]], rngs[i].random())
                r = sample_renewable(sources[i], nxt_slot, rngs[i])
                new_jobs = params[i].daily_jobs if nxt_slot == 1 else ()
                snaps[i], g = domain.step(
                    snaps[i], action, r, demand.alphabet[d_idx[i]], price.alphabet[p_idx],
                    new_jobs, params[i], variant,
                )
                profits[run, i] += g
            if settle_trades:
                rec = settle(trades, slot, p_now, day=run * ev.run_days + t // T)
                totals["peer_units"] += rec.peer_units
                totals["main_grid_absorbed"] += rec.main_grid_absorbed
                totals["main_grid_supplied"] += rec.main_grid_supplied
                if keep_flows:
                    records.append(rec)
    profits /= steps
    return profits, (totals if settle_trades else {}), records


def run_cell(
    scenario: ScenarioConfig, variant: Variant, penalty: float, cycles: int | None = None,
    tables: dict | None = None,
) -> CellReport:
    """Train (or reuse ``tables``), freeze, evaluate one (variant, penalty) cell."""
    results = []
    for agent in range(len(scenario.microgrids)):
        if tables and agent in tables:
            results.append(tables[agent])
        else:
            results.append(train(scenario, agent, cycles, variant=variant, penalty=penalty))
    before = [r.table.checksum() for r in results]
    profits, totals, records = evaluate_policies(
        scenario, results, keep_flows=scenario.evaluation.write_flows
    )
    after = [r.table.checksum() for r in results]
    if before != after:
        raise RuntimeError("Q-table changed during evaluation")
    return CellReport(variant, float(penalty), scenario.master_seed, profits, totals, records, results)


def run_experiment(
    config: ScenarioConfig,
    out_dir: str | Path | None = None,
    *,
    parallel: int = 1,
    variants: list | None = None,
    cycles: int | None = None,
    trained: dict | None = None,
) -> EvaluationReport:
    """Train and evaluate every (variant, penalty) cell; write CSVs if ``out_dir``.

    ``trained`` may map ``(variant, penalty)`` to ``{agent: TrainResult}`` to
    skip training for those cells.
    """
    variants = [Variant(v) for v in (variants or config.variants)]
    cells = [(v, float(c)) for v in variants for c in config.penalties]
    trained = trained or {}

    def job(cell):
        v, c = cell
        return run_cell(config, v, c, cycles, trained.get((v, c)))

    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            reports = list(pool.map(job, cells))
    else:
        reports = [job(cell) for cell in cells]

    report = EvaluationReport(
        scenario=config.name,
        master_seed=config.master_seed,
        microgrids=[mg.name for mg in config.microgrids],
        cells=reports,
        metadata={
            "build": build_id(),
            "csv_version": CSV_VERSION,
            "master_seed": config.master_seed,
            "demand_seed": config.demand.seed,
            "price_seed": config.price.seed,
            "cycles": config.training.cycles if cycles is None else cycles,
            "runs": config.evaluation.runs,
            "run_days": config.evaluation.run_days,
        },
    )
    if out_dir is not None:
        write_outputs(report, out_dir)
    return report


def write_convergence(path: Path, cells: list[CellReport], append: bool = False) -> None:
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["master_seed", "variant", "penalty", "iteration", "agent", "f_of_Q",
                        "cumulative_mean_reward"])
        for c in cells:
            for tr in c.training:
                for it, agent, f, m in tr.trace_rows():
                    w.writerow([c.master_seed, c.variant.value, _num(c.penalty), it, agent, _num(f), _num(m)])


def write_outputs(report: EvaluationReport, out_dir: str | Path, append: bool = False) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mode = "a" if append else "w"
    write_convergence(out / "convergence.csv", report.cells, append)

    def opened(name, header):
        path = out / name
        new = not (append and path.exists())
        fh = open(path, mode, newline="")
        w = csv.writer(fh)
        if new:
            w.writerow(header)
        return fh, w

    fh, w = opened("profits.csv", ["master_seed", "variant", "penalty", "microgrid", "mean_profit",
                                   "std_error", "runs"])
    with fh:
        for c in report.cells:
            for i, name in enumerate(report.microgrids):
                w.writerow([c.master_seed, c.variant.value, _num(c.penalty), name, _num(c.mean()[i]),
                            _num(c.std_error()[i]), c.profits.shape[0]])
    fh, w = opened("runs.csv", ["master_seed", "variant", "penalty", "run", "microgrid", "profit"])
    with fh:
        for c in report.cells:
            for run, row in enumerate(c.profits):
                for i, name in enumerate(report.microgrids):
                    w.writerow([c.master_seed, c.variant.value, _num(c.penalty), run, name, _num(row[i])])
    fh, w = opened("flows.csv", ["master_seed", "variant", "penalty", "day", "slot", "seller", "buyer",
                                 "units", "price"])
    with fh:
        for c in report.cells:
            for rec in c.flows:
                for f in rec.flows:
                    w.writerow([c.master_seed, c.variant.value, _num(c.penalty), rec.day, rec.slot,
                                _party(report, f.seller), _party(report, f.buyer), f.units, rec.price])
    name = "report.json" if not append else f"report_seed{report.master_seed}.json"
    (out / name).write_text(json.dumps(report.to_dict(), indent=2) + "\n")


def _party(report: EvaluationReport, p) -> str:
    return report.microgrids[p] if isinstance(p, int) else str(p)


@dataclass
class GapRow:
    microgrid: str
    comparison: str
    penalty: float
    mean_gap: float
    std_error: float
    seeds: int
    flag: str = ""


@dataclass
class GapReport:
    rows: list[GapRow]
    verdicts: dict  # microgrid -> "pass" | "flag" for gap growth over c
    reports: list[EvaluationReport] = field(default_factory=list)

    def series(self, microgrid: str, comparison: str) -> list[GapRow]:
        return sorted(
            (r for r in self.rows if r.microgrid == microgrid and r.comparison == comparison),
            key=lambda r: r.penalty,
        )

    @property
    def flags(self) -> list[GapRow]:
        return [r for r in self.rows if r.flag]


def gap_matrix(reports: list[EvaluationReport], a, b, penalty: float) -> np.ndarray:
    """seeds x microgrids matrix of profit(a) - profit(b)."""
    return np.array([r.profit(a, penalty) - r.profit(b, penalty) for r in reports])


def gap_rows(reports, penalties, a, b, names, expect_positive: bool) -> list[GapRow]:
    label = f"{Variant(a).value} - {Variant(b).value}"
    rows = []
    for c in penalties:
        gaps = gap_matrix(reports, a, b, c)
        n = gaps.shape[0]
        se = gaps.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(gaps.shape[1])
        for i, name in enumerate(names):
            mean = float(gaps[:, i].mean())
            flag = "non-positive gap" if expect_positive and mean <= 0 else ""
            rows.append(GapRow(name, label, float(c), mean, float(se[i]), n, flag))
    return rows


def compare_models(
    config: ScenarioConfig,
    reports: list[EvaluationReport] | None = None,
    out_dir: str | Path | None = None,
    *,
    parallel: int = 1,
    cycles: int | None = None,
) -> GapReport:
    """Per-penalty profit gaps between the ADL-sharing model and the two baselines.

    Orderings that contradict the expected behaviour are flagged, not raised.
    """
    needed = {Variant.ADL_SHARING, Variant.NON_ADL, Variant.GREEDY_ADL}
    if reports is None:
        missing = needed - set(Variant(v) for v in config.variants)
        if missing:
            raise ConfigError("variants", f"compare needs {sorted(v.value for v in missing)}")
        reports = []
        for k in range(config.compare_seeds):
            cfg = config.model_copy(update={"master_seed": config.master_seed + k})
            reports.append(run_experiment(cfg, parallel=parallel, cycles=cycles))
    for r in reports:
        have = {c.variant for c in r.cells}
        if needed - have:
            raise ConfigError("variants", f"report for seed {r.master_seed} lacks "
                              f"{sorted(v.value for v in needed - have)}")
    names = reports[0].microgrids
    penalties = sorted(config.penalties)
    rows = gap_rows(reports, penalties, Variant.ADL_SHARING, Variant.NON_ADL, names, expect_positive=False)
    rows += gap_rows(reports, penalties, Variant.ADL_SHARING, Variant.GREEDY_ADL, names, expect_positive=True)

    verdicts = {}
    label = f"{Variant.ADL_SHARING.value} - {Variant.NON_ADL.value}"
    for name in names:
        series = [r for r in rows if r.microgrid == name and r.comparison == label]
        series.sort(key=lambda r: r.penalty)
        ok = True
        for prev, cur in zip(series, series[1:]):
            if cur.mean_gap < prev.mean_gap:
                cur.flag = "gap shrinks as penalty grows"
                ok = False
        verdicts[name] = "pass" if ok else "flag"

    gap = GapReport(rows, verdicts, reports)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_gaps(out / "gaps.csv", gap)
        for k, r in enumerate(reports):
            write_outputs(r, out, append=k > 0)
    return gap


def write_gaps(path: Path, gap: GapReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["microgrid", "comparison", "penalty", "mean_gap", "std_error", "seeds", "flag"])
        for r in gap.rows:
            w.writerow([r.microgrid, r.comparison, _num(r.penalty), _num(r.mean_gap), _num(r.std_error),
                        r.seeds, r.flag])
