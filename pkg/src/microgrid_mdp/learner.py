"""Average-reward (RVI) Q-learning, one independent agent per microgrid.

The update for a transition ``(s, a, g, s')`` is::

    Q(s, a) += alpha * (g + max_u Q(s', u) - max_u Q(ref, u) - Q(s, a))

where ``ref`` is a fixed reference state (the first state of the run). The
subtracted term ``f(Q) = max_u Q(ref, u)`` tracks the optimal average reward.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels
from .config import ScenarioConfig
from .domain import Variant
from .model import AgentModel, build_model
from .processes import Stream, draw_index, spawn_rng

CHUNK = 1 << 18


@dataclass(frozen=True)
class LearningSchedule:
    """Step size ``c0 / (c1 + visits(s, a)) ** power`` unless ``constant`` is set.

    Any ``power`` in (0.5, 1] keeps sum(alpha) infinite and sum(alpha**2) finite.
    """

    epsilon: float = 0.1
    c0: float = 1.0
    c1: float = 10.0
    power: float = 0.9
    constant: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.constant is not None:
            if not 0.0 < self.constant <= 1.0:
                raise ValueError("constant step size must lie in (0, 1]")
        else:
            if not 0.5 < self.power <= 1.0:
                raise ValueError("power must lie in (0.5, 1]")
            if not (self.c0 > 0 and self.c1 > 0 and self.c0 <= self.c1 ** self.power):
                raise ValueError("need 0 < c0 <= c1**power so that alpha stays in (0, 1]")

    @classmethod
    def from_config(cls, scenario: ScenarioConfig) -> "LearningSchedule":
        tr = scenario.training
        return cls(tr.epsilon, tr.alpha_c0, tr.alpha_c1, tr.alpha_power, tr.alpha_constant)

    def alpha(self, iteration: int, visits: int) -> float:
        if self.constant is not None:
            return self.constant
        return self.c0 / (self.c1 + visits) ** self.power


@dataclass
class QTable:
    """Q-values for every (state, action) pair, stored row-per-state."""

    ptr: np.ndarray
    values: np.ndarray
    visits: np.ndarray
    reference_state: int = -1

    @classmethod
    def zeros(cls, model: AgentModel, reference_state: int = -1) -> "QTable":
        n = model.n_pairs
        return cls(model.act_ptr, np.zeros(n), np.zeros(n, dtype=np.int64), reference_state)

    @property
    def n_states(self) -> int:
        return len(self.ptr) - 1

    def _check(self, s: int) -> None:
        if not 0 <= s < self.n_states:
            raise IndexError(f"unknown state index {s}")

    def row(self, s: int) -> np.ndarray:
        self._check(s)
        return self.values[self.ptr[s]:self.ptr[s + 1]]

    def state_visits(self) -> np.ndarray:
        return np.add.reduceat(self.visits, self.ptr[:-1]) if len(self.visits) else self.visits

    def reference_value(self) -> float:
        """f(Q): the greedy value of the reference state."""
        if self.reference_state < 0:
            return 0.0
        return float(self.row(self.reference_state).max())

    def checksum(self) -> str:
        h = hashlib.sha256(self.values.tobytes())
        h.update(self.visits.tobytes())
        return h.hexdigest()

    def copy(self) -> "QTable":
        return QTable(self.ptr, self.values.copy(), self.visits.copy(), self.reference_state)


def q_update(
    table: QTable, s: int, a: int, g: float, s_next: int, schedule: LearningSchedule, iteration: int
) -> QTable:
    """One RVI Q-learning step on the local action ``a`` of state ``s`` (in place)."""
    row = table.row(s)
    table._check(s_next)
    if not 0 <= a < len(row):
        raise IndexError(f"action {a} out of range for state {s}")
    if table.reference_state < 0:
        table.reference_state = s
    gi = table.ptr[s] + a
    alpha = schedule.alpha(iteration, int(table.visits[gi]))
    target = g + table.row(s_next).max() - table.reference_value()
    table.values[gi] += alpha * (target - table.values[gi])
    table.visits[gi] += 1
    return table


def select_action(
    table: QTable, s: int, feasible, epsilon: float, rng: np.random.Generator
) -> int:
    """Epsilon-greedy over ``feasible`` local action indices; ties go to the lowest index."""
    feasible = np.asarray(feasible, dtype=np.int64)
    if feasible.size == 0:
        raise ValueError("no feasible actions")
    if rng.random() < epsilon:
        return int(feasible[rng.integers(feasible.size)])
    q = table.row(s)[feasible]
    best = np.flatnonzero(q == q.max())
    return int(feasible[best].min())


def extract_policy(table: QTable) -> np.ndarray:
    """Greedy local action index for every state (lowest index on ties)."""
    out = np.empty(table.n_states, dtype=np.int64)
    for s in range(table.n_states):
        out[s] = int(np.argmax(table.row(s)))
    return out


def to_global(ptr: np.ndarray, policy: np.ndarray) -> np.ndarray:
    return ptr[:-1] + policy


@dataclass
class TrainResult:
    model: AgentModel
    table: QTable
    cycles: int
    trace_iter: np.ndarray
    trace_f: np.ndarray
    trace_mean: np.ndarray
    agent: int = 0
    variant: Variant = Variant.ADL_SHARING
    penalty: float = 0.0
    mean_reward: float = 0.0
    meta: dict = field(default_factory=dict)

    def trace_rows(self):
        for it, f, m in zip(self.trace_iter, self.trace_f, self.trace_mean):
            yield int(it), self.agent, float(f), float(m)


@lru_cache(maxsize=64)
def _cached_model(params, variant, source, demand, price) -> AgentModel:
    return build_model(params, variant, source, demand, price)


def agent_model(scenario: ScenarioConfig, agent: int, variant, penalty: float) -> AgentModel:
    """The flat model for one agent; built once per distinct parameter set and shared read-only."""
    return _cached_model(
        scenario.grid_params(agent, penalty),
        Variant(variant),
        scenario.source(agent),
        tuple(scenario.demand.alphabet),
        tuple(scenario.price.alphabet),
    )


class _Streams:
    """Exogenous draws for one agent's training run, produced chunk by chunk.

    The price stream depends only on the master seed, so every agent in a
    run sees the same global price path.
    """

    def __init__(self, scenario: ScenarioConfig, agent: int, model: AgentModel):
        seed = scenario.master_seed
        self.agent_rng = spawn_rng(seed, Stream.TRAIN_AGENT, agent)
        self.price_rng = spawn_rng(seed, Stream.TRAIN_PRICE)
        demand = scenario.demand_chain()
        price = scenario.price_chain()
        self.demand_cum = demand.cumulative
        self.price_cum = price.cumulative
        self.T = scenario.slots_per_day
        self.source = model.source
        self.rates = np.array([self.source.rate(k) for k in range(1, self.T + 1)])
        self.d0 = draw_index(np.cumsum(demand.stationary()), self.agent_rng.random())
        self.p0 = draw_index(np.cumsum(price.stationary()), self.price_rng.random())
        r0 = min(int(self.agent_rng.poisson(self.rates[0])), self.source.cap)
        self.s0 = int(model.next_state[model.initial_post, r0, self.d0, self.p0])
        self.last_price = self.p0

    def chunk(self, t0: int, n: int):
        rng = self.agent_rng
        u_explore = rng.random(n)
        u_pick = rng.random(n)
        u_demand = rng.random(n)
        # the state reached after global step t sits in slot (t + 1) mod T + 1
        rate_idx = (np.arange(t0, t0 + n) + 1) % self.T
        renew = np.minimum(rng.poisson(self.rates[rate_idx]), self.source.cap).astype(np.int64)
        prices = _kernels.sample_path(self.price_cum, self.last_price, self.price_rng.random(n))
        self.last_price = int(prices[-1])
        return u_explore, u_pick, u_demand, renew, prices


def train(
    scenario: ScenarioConfig,
    agent: int,
    cycles: int | None = None,
    *,
    variant: Variant | str | None = None,
    penalty: float | None = None,
    schedule: LearningSchedule | None = None,
    model: AgentModel | None = None,
) -> TrainResult:
    """Train one agent for ``cycles`` simulate-select-update steps."""
    if not 0 <= agent < len(scenario.microgrids):
        raise IndexError(f"no microgrid {agent}")
    variant = Variant(variant if variant is not None else scenario.variants[0])
    penalty = float(scenario.penalties[0] if penalty is None else penalty)
    cycles = scenario.training.cycles if cycles is None else int(cycles)
    schedule = schedule or LearningSchedule.from_config(scenario)
    model = model or agent_model(scenario, agent, variant, penalty)

    streams = _Streams(scenario, agent, model)
    table = QTable.zeros(model, reference_state=streams.s0)
    stride = scenario.training.trace_stride
    n_trace = cycles // stride
    trace_iter = np.zeros(n_trace, dtype=np.int64)
    trace_f = np.zeros(n_trace)
    trace_mean = np.zeros(n_trace)

    s, d, total, k = streams.s0, streams.d0, 0.0, 0
    alpha_const = schedule.constant or 0.0
    t0 = 0
    while t0 < cycles:
        n = min(CHUNK, cycles - t0)
        u_explore, u_pick, u_demand, renew, prices = streams.chunk(t0, n)
        s, d, total, k = _kernels.train_chunk(
            model.act_ptr, model.act_reward, model.act_post, model.next_state,
            table.values, table.visits, table.reference_state,
            s, d, t0, total,
            streams.demand_cum, prices, renew, u_explore, u_pick, u_demand,
            schedule.epsilon, schedule.c0, schedule.c1, schedule.power, alpha_const,
            stride, trace_iter, trace_f, trace_mean, k,
        )
        t0 += n

    return TrainResult(
        model=model,
        table=table,
        cycles=cycles,
        trace_iter=trace_iter,
        trace_f=trace_f,
        trace_mean=trace_mean,
        agent=agent,
        variant=variant,
        penalty=penalty,
        mean_reward=total / cycles if cycles else 0.0,
        meta={"reference_state": table.reference_state, "master_seed": scenario.master_seed},
    )


def rollout_gain(
    scenario: ScenarioConfig,
    agent: int,
    model: AgentModel,
    policy_global: np.ndarray,
    steps: int,
) -> float:
    """Monte-Carlo long-run average reward of a fixed policy."""
    streams = _Streams(scenario, agent, model)
    s, d, total = streams.s0, streams.d0, 0.0
    t0 = 0
    while t0 < steps:
        n = min(CHUNK, steps - t0)
        _, _, u_demand, renew, prices = streams.chunk(t0, n)
        s, d, total = _kernels.rollout_chunk(
            model.act_ptr, model.act_reward, model.act_post, model.next_state,
            policy_global, s, d, total, streams.demand_cum, prices, renew, u_demand,
        )
        t0 += n
    return total / steps


def trace_tail_stats(trace_f: np.ndarray, fraction: float = 0.1) -> tuple[float, float]:
    """(std, mean magnitude) of the last ``fraction`` of an f(Q) trace."""
    n = max(1, int(round(len(trace_f) * fraction)))
    tail = np.asarray(trace_f[-n:])
    return float(tail.std()), float(abs(tail.mean()))
