"""Exact solvers for small instances.

The MDP is enumerated over the Markov state (slot, net demand, price, jobs,
demand level) with exact exogenous probabilities. Relative value iteration
runs on the aperiodic transform ``tau * I + (1 - tau) * P``, which keeps the
gain and the optimal policies but removes the periodicity introduced by the
deterministic slot clock.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import domain
from .config import ScenarioConfig
from .domain import GridParams, JointAction, MicrogridState, StateInterner, Variant
from .errors import ConfigError, ConvergenceError, MultichainError, SizeError
from .learner import QTable, extract_policy


@dataclass
class EnumeratedMDP:
    states: list[MicrogridState]
    ptr: np.ndarray  # actions of state s are pairs ptr[s] .. ptr[s+1]-1
    actions: list[JointAction]
    reward: np.ndarray  # per pair
    transition: sp.csr_matrix  # pairs x states
    index: dict

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_pairs(self) -> int:
        return int(self.ptr[-1])

    def state_of_pair(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_states), np.diff(self.ptr))

    def actions_of(self, s: int) -> list[JointAction]:
        return self.actions[self.ptr[s]:self.ptr[s + 1]]

    @classmethod
    def from_arrays(cls, ptr, reward, rows: list[dict[int, float]]) -> "EnumeratedMDP":
        """Abstract MDP from per-pair successor distributions (for tests and toys)."""
        ptr = np.asarray(ptr, dtype=np.int64)
        n_states = len(ptr) - 1
        P = sp.lil_matrix((int(ptr[-1]), n_states))
        for i, row in enumerate(rows):
            for j, p in row.items():
                P[i, j] = p
        states = [MicrogridState(1, s, 0) for s in range(n_states)]
        return cls(
            states, ptr, [JointAction(0, 0)] * int(ptr[-1]), np.asarray(reward, dtype=float),
            P.tocsr(), {st.key: i for i, st in enumerate(states)},
        )


def enumerate_mdp(
    scenario: ScenarioConfig,
    agent: int,
    variant: Variant | str | None = None,
    penalty: float | None = None,
    max_pairs: int | None = None,
) -> EnumeratedMDP:
    """Breadth-first closure from the start-of-day states under all feasible actions."""
    variant = Variant(variant if variant is not None else scenario.variants[0])
    params: GridParams = replace(scenario.grid_params(agent, penalty), observe_demand=True)
    bound = scenario.oracle.max_pairs if max_pairs is None else max_pairs
    source = scenario.source(agent)
    demand = scenario.demand_chain()
    price = scenario.price_chain()
    T = params.slots_per_day
    extra = params.daily_job_energy if variant is Variant.NON_ADL else 0
    pmf = {slot: source.pmf(slot) for slot in range(1, T + 1)}

    interner = StateInterner()
    for r, pr in enumerate(pmf[1]):
        if pr == 0:
            continue
        for d in demand.alphabet:
            for p in price.alphabet:
                snap = domain.initial_snapshot(r, d, p, params, variant)
                interner.index(snap.state)

    ptr = [0]
    actions: list[JointAction] = []
    rewards: list[float] = []
    rows, cols, vals = [], [], []
    s = 0
    while s < len(interner):
        state = interner.states[s]
        di = demand.index_of(state.demand)
        pi = price.index_of(state.price)
        slot = domain.next_slot(state.slot, T)
        for action in domain.feasible_actions(state, params, variant):
            pair = len(actions)
            if pair >= bound:
                raise SizeError(pair + 1, bound)
            actions.append(action)
            rewards.append(domain.reward(state, action, params, variant))
            battery = domain.next_battery(state, action, params)
            carried = domain.carry_over(state.jobs, action.subset)
            if variant is Variant.NON_ADL:
                jobs = ()
            elif slot == 1:
                jobs = params.daily_jobs + carried
            else:
                jobs = carried
            succ: dict[int, float] = {}
            for r, pr in enumerate(pmf[slot]):
                if pr == 0:
                    continue
                for dj, pd in enumerate(demand.row(di)):
                    if pd == 0:
                        continue
                    d = demand.alphabet[dj]
                    load = d + (extra if slot == 1 else 0)
                    for pk, pp in enumerate(price.row(pi)):
                        if pp == 0:
                            continue
                        nxt = MicrogridState(slot, r + battery - load, price.alphabet[pk], jobs, d)
                        j = interner.index(nxt)
                        succ[j] = succ.get(j, 0.0) + pr * pd * pp
            for j, prob in succ.items():
                rows.append(pair)
                cols.append(j)
                vals.append(prob)
        ptr.append(len(actions))
        s += 1

    n = len(interner)
    P = sp.csr_matrix((vals, (rows, cols)), shape=(len(actions), n))
    return EnumeratedMDP(
        states=list(interner.states),
        ptr=np.asarray(ptr, dtype=np.int64),
        actions=actions,
        reward=np.asarray(rewards, dtype=float),
        transition=P,
        index={st.key: i for i, st in enumerate(interner.states)},
    )


@dataclass
class RVIResult:
    gain: float
    policy: np.ndarray  # local action index per state
    bias: np.ndarray  # relative values on the original (untransformed) scale
    sweeps: int
    span: float
    converged: bool


def _segment_max(values: np.ndarray, ptr: np.ndarray) -> np.ndarray:
    return np.maximum.reduceat(values, ptr[:-1])


def _segment_argmax(values: np.ndarray, ptr: np.ndarray, atol: float = 0.0) -> np.ndarray:
    """First index (per segment) whose value is within ``atol`` of the segment max."""
    best = _segment_max(values, ptr)
    out = np.empty(len(ptr) - 1, dtype=np.int64)
    for s in range(len(out)):
        seg = values[ptr[s]:ptr[s + 1]]
        out[s] = int(np.flatnonzero(seg >= best[s] - atol)[0])
    return out


def q_factors(mdp: EnumeratedMDP, bias: np.ndarray) -> np.ndarray:
    """r(s, a) + sum_s' P(s' | s, a) h(s') for every pair."""
    return mdp.reward + mdp.transition @ bias


def relative_value_iteration(
    mdp: EnumeratedMDP,
    tol: float = 1e-8,
    max_sweeps: int = 1_000_000,
    tau: float = 0.5,
    init: np.ndarray | None = None,
    reference: int = 0,
    strict: bool = False,
) -> RVIResult:
    """Optimal gain and a gain-optimal deterministic policy.

    Stops when the span of successive value differences drops below ``tol``.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    pair_state = mdp.state_of_pair()
    h = np.zeros(mdp.n_states) if init is None else np.array(init, dtype=float)
    P, R = mdp.transition, mdp.reward
    span = np.inf
    lo = hi = 0.0
    sweep = 0
    while sweep < max_sweeps:
        sweep += 1
        q = R + tau * h[pair_state] + (1.0 - tau) * (P @ h)
        th = _segment_max(q, mdp.ptr)
        diff = th - h
        lo, hi = float(diff.min()), float(diff.max())
        span = hi - lo
        h = th - th[reference]
        if span < tol:
            break
    converged = span < tol
    if strict and not converged:
        raise ConvergenceError(f"span {span:.3e} after {sweep} sweeps")
    bias = (1.0 - tau) * h
    policy = _segment_argmax(q_factors(mdp, bias), mdp.ptr, atol=1e-9 * max(1.0, np.abs(R).max()))
    return RVIResult(0.5 * (lo + hi), policy, bias, sweep, span, converged)


def policy_chain(mdp: EnumeratedMDP, policy: np.ndarray) -> tuple[sp.csr_matrix, np.ndarray]:
    pairs = mdp.ptr[:-1] + np.asarray(policy, dtype=np.int64)
    if np.any(pairs >= mdp.ptr[1:]) or np.any(np.asarray(policy) < 0):
        raise ValueError("policy selects an action outside a state's action list")
    return mdp.transition[pairs], mdp.reward[pairs]


def stationary(P_pi: sp.csr_matrix) -> np.ndarray:
    n = P_pi.shape[0]
    A = (P_pi.T - sp.identity(n, format="csr")).tolil()
    A[n - 1, :] = np.ones(n)
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        pi = splu(A.tocsc()).solve(b)
    except RuntimeError as exc:
        raise MultichainError(f"policy chain is not unichain: {exc}") from None
    resid = np.abs(P_pi.T @ pi - pi).max()
    if not np.all(np.isfinite(pi)) or resid > 1e-8 or pi.min() < -1e-8:
        raise MultichainError(f"stationary solve failed (residual {resid:.2e})")
    return np.clip(pi, 0.0, None) / np.clip(pi, 0.0, None).sum()


def evaluate_policy(mdp: EnumeratedMDP, policy: np.ndarray) -> float:
    """Exact long-run average reward of a deterministic stationary policy."""
    P_pi, r_pi = policy_chain(mdp, policy)
    return float(stationary(P_pi) @ r_pi)


def random_policy(mdp: EnumeratedMDP, rng: np.random.Generator) -> np.ndarray:
    counts = np.diff(mdp.ptr)
    return (rng.random(mdp.n_states) * counts).astype(np.int64)


def optimal_action_sets(mdp: EnumeratedMDP, result: RVIResult, atol: float = 1e-6) -> list[set[int]]:
    q = q_factors(mdp, result.bias)
    out = []
    for s in range(mdp.n_states):
        seg = q[mdp.ptr[s]:mdp.ptr[s + 1]]
        out.append(set(np.flatnonzero(seg >= seg.max() - atol).tolist()))
    return out


@dataclass
class OracleComparison:
    f_end: float
    gain: float
    relative_error: float
    states_checked: int
    mismatches: list[int]

    @property
    def policy_matches(self) -> bool:
        return not self.mismatches


def compare_with_oracle(
    table: QTable,
    model,
    mdp: EnumeratedMDP,
    result: RVIResult,
    min_visits: int = 100,
    atol: float = 1e-6,
) -> OracleComparison:
    """Check a learned table against the exact solution.

    A state counts as matched when the learner's greedy action is one of the
    oracle's optimal actions there.
    """
    if not model.params.observe_demand:
        raise ConfigError("observe_demand", "oracle comparison needs the demand level in the state")
    learned = extract_policy(table)
    visits = table.state_visits()
    optimal = optimal_action_sets(mdp, result, atol)
    checked = 0
    mismatches = []
    for s, st in enumerate(model.states):
        if visits[s] < min_visits:
            continue
        o = mdp.index.get(st.key)
        if o is None:
            continue
        checked += 1
        action = model.actions(s)[learned[s]]
        if mdp.actions_of(o).index(action) not in optimal[o]:
            mismatches.append(s)
    f_end = table.reference_value()
    rel = abs(f_end - result.gain) / max(abs(result.gain), 1e-12)
    return OracleComparison(f_end, result.gain, rel, checked, mismatches)


def write_oracle_csv(path: str | Path, mdp: EnumeratedMDP, result: RVIResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "slot", "net_demand", "price", "demand", "jobs", "trade", "subset", "gain"])
        for s, st in enumerate(mdp.states):
            a = mdp.actions_of(s)[result.policy[s]]
            jobs = ";".join(f"{j.energy}:{j.deadline}" for j in st.jobs)
            w.writerow([s, st.slot, st.net_demand, st.price, st.demand, jobs, a.trade, a.subset,
                        repr(result.gain)])
