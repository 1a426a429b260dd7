"""Per-microgrid MDP: states, joint actions, feasibility, rewards and transitions.

Everything here is a pure function of its arguments. Energies, demands and
trades are integer units; a positive trade sells, a negative one buys.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

from .errors import ArrivalError, CapacityError, FeasibilityError

MAX_JOBS = 16


class Variant(str, Enum):
    ADL_SHARING = "adl-sharing"
    GREEDY_ADL = "greedy-adl"
    NON_ADL = "non-adl"


@dataclass(frozen=True, order=True)
class AdlJob:
    """A deferrable load.

    ``deadline`` counts the future slots (after the current one) in which the
    job can still be served without penalty.
    """

    energy: int
    deadline: int

    def __post_init__(self):
        if self.energy < 1:
            raise ValueError(f"job energy must be >= 1, got {self.energy}")
        if self.deadline < 0:
            raise ValueError(f"job deadline must be >= 0, got {self.deadline}")


def canonical_jobs(jobs: Iterable[AdlJob | tuple[int, int]]) -> tuple[AdlJob, ...]:
    return tuple(sorted(j if isinstance(j, AdlJob) else AdlJob(*j) for j in jobs))


@dataclass(frozen=True)
class MicrogridState:
    """What a microgrid controller observes at the start of a slot.

    ``demand`` is the current non-ADL demand level of the demand chain. It is
    None when the controller is configured to see only the net demand.
    """

    slot: int
    net_demand: int
    price: int
    jobs: tuple[AdlJob, ...] = ()
    demand: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "jobs", canonical_jobs(self.jobs))

    @property
    def key(self) -> tuple:
        return (self.slot, self.net_demand, self.price, self.jobs, self.demand)


@dataclass(frozen=True)
class JointAction:
    trade: int  # u: positive sells, negative buys
    subset: int = 0  # bitmask over state.jobs (canonical order)

    def adl_draw(self, jobs: Sequence[AdlJob]) -> int:
        """v: minus the energy of the scheduled jobs (never positive)."""
        return -subset_energy(jobs, self.subset)


@dataclass(frozen=True)
class GridParams:
    battery_capacity: int = 8
    max_grid_buy: int = 14
    penalty: float = 0.0
    slots_per_day: int = 4
    daily_jobs: tuple[AdlJob, ...] = field(
        default_factory=lambda: canonical_jobs([(1, 2), (1, 3), (2, 4)])
    )
    # literal reading: charge expiring jobs even when scheduled this slot
    penalize_scheduled_at_deadline: bool = False
    # expose the demand level in the observed state (keeps it Markov)
    observe_demand: bool = True

    def __post_init__(self):
        object.__setattr__(self, "daily_jobs", canonical_jobs(self.daily_jobs))
        if self.battery_capacity < 0:
            raise ValueError("battery_capacity must be >= 0")
        if self.max_grid_buy < 0:
            raise ValueError("max_grid_buy must be >= 0")
        if self.slots_per_day < 1:
            raise ValueError("slots_per_day must be >= 1")
        if self.penalty < 0:
            raise ValueError("penalty must be >= 0")

    @property
    def daily_job_energy(self) -> int:
        return sum(j.energy for j in self.daily_jobs)


@dataclass(frozen=True)
class EnvSnapshot:
    """Simulator-side state, including quantities folded into net demand."""

    state: MicrogridState
    battery: int
    renewable: int
    non_adl_demand: int

    def __post_init__(self):
        if self.battery < 0:
            raise ValueError(f"negative battery level {self.battery}")
        nd = self.renewable + self.battery - self.non_adl_demand
        if nd != self.state.net_demand:
            raise ValueError(
                f"net demand {self.state.net_demand} != r + b - d = {nd}"
            )


def subset_energy(jobs: Sequence[AdlJob], mask: int) -> int:
    total = 0
    k = 0
    while mask:
        if mask & 1:
            total += jobs[k].energy
        mask >>= 1
        k += 1
    return total


def enumerate_adl_subsets(jobs: Sequence[AdlJob]) -> list[tuple[int, int]]:
    """All ``2**n`` subsets as ``(bitmask, total_energy)``, bitmask ascending."""
    n = len(jobs)
    if n > MAX_JOBS:
        raise CapacityError(f"{n} pending jobs exceeds the cap of {MAX_JOBS}")
    return [(mask, subset_energy(jobs, mask)) for mask in range(1 << n)]


def feasible_trade_interval(
    state: MicrogridState,
    params: GridParams,
    chosen_energy: int,
    variant: Variant = Variant.ADL_SHARING,
) -> tuple[int, int]:
    """Inclusive integer bounds on the trade u once ``chosen_energy`` is scheduled.

    The bounds constrain u + v; with v = -chosen_energy they shift by
    ``chosen_energy``.
    """
    nd = state.net_demand
    max_adl = sum(j.energy for j in state.jobs)
    lower = -min(params.max_grid_buy, params.battery_capacity - nd + max_adl)
    if Variant(variant) is Variant.GREEDY_ADL:
        upper = max(0, nd - params.battery_capacity)
    else:
        upper = max(0, nd)
    return lower + chosen_energy, upper + chosen_energy


def feasible_actions(
    state: MicrogridState, params: GridParams, variant: Variant = Variant.ADL_SHARING
) -> list[JointAction]:
    """Feasible joint actions in (subset bitmask, trade) lexicographic order."""
    out = []
    for mask, energy in enumerate_adl_subsets(state.jobs):
        lo, hi = feasible_trade_interval(state, params, energy, variant)
        out.extend(JointAction(u, mask) for u in range(lo, hi + 1))
    return out


def check_feasible(
    state: MicrogridState,
    action: JointAction,
    params: GridParams,
    variant: Variant = Variant.ADL_SHARING,
) -> None:
    if action.subset < 0 or action.subset >= (1 << len(state.jobs)):
        raise FeasibilityError(
            f"subset mask {action.subset} invalid for {len(state.jobs)} jobs"
        )
    lo, hi = feasible_trade_interval(
        state, params, subset_energy(state.jobs, action.subset), variant
    )
    if not lo <= action.trade <= hi:
        raise FeasibilityError(f"trade {action.trade} outside [{lo}, {hi}]")


def expiring_energy(state: MicrogridState, action: JointAction, params: GridParams) -> int:
    total = 0
    for k, job in enumerate(state.jobs):
        if job.deadline != 0:
            continue
        scheduled = bool(action.subset >> k & 1)
        if not scheduled or params.penalize_scheduled_at_deadline:
            total += job.energy
    return total


def reward(
    state: MicrogridState,
    action: JointAction,
    params: GridParams,
    variant: Variant = Variant.ADL_SHARING,
    check: bool = True,
) -> float:
    """Single-slot profit: trade revenue minus unmet-demand and expiry penalties.

    ``check=False`` evaluates the formula for any action, feasible or not.
    """
    if check:
        check_feasible(state, action, params, variant)
    u = action.trade
    v = action.adl_draw(state.jobs)
    c = params.penalty
    return (
        state.price * (u + v)
        + c * min(0, state.net_demand - u)
        - c * expiring_energy(state, action, params)
    )


def next_battery(state: MicrogridState, action: JointAction, params: GridParams) -> int:
    # overflow past capacity is wasted
    return min(params.battery_capacity, max(0, state.net_demand - action.trade))


def carry_over(jobs: Sequence[AdlJob], mask: int) -> tuple[AdlJob, ...]:
    """Unscheduled jobs that survive to the next slot, deadlines decremented."""
    return tuple(
        AdlJob(j.energy, j.deadline - 1)
        for k, j in enumerate(jobs)
        if not mask >> k & 1 and j.deadline > 0
    )


def next_slot(slot: int, slots_per_day: int) -> int:
    return slot % slots_per_day + 1


def step(
    snapshot: EnvSnapshot,
    action: JointAction,
    next_renewable: int,
    next_demand: int,
    next_price: int,
    new_jobs: Iterable[AdlJob],
    params: GridParams,
    variant: Variant = Variant.ADL_SHARING,
) -> tuple[EnvSnapshot, float]:
    """Advance one slot given the exogenous draws for the next slot.

    Under the non-ADL variant, ``new_jobs`` are folded into the next slot's
    non-ADL demand instead of entering the job set.
    """
    state = snapshot.state
    g = reward(state, action, params, variant)
    slot = next_slot(state.slot, params.slots_per_day)
    new_jobs = canonical_jobs(new_jobs)
    if new_jobs and slot != 1:
        raise ArrivalError(f"jobs issued at slot {slot}; arrivals only at slot 1")

    battery = next_battery(state, action, params)
    demand = next_demand
    if Variant(variant) is Variant.NON_ADL:
        demand += sum(j.energy for j in new_jobs)
        jobs: tuple[AdlJob, ...] = ()
    else:
        jobs = new_jobs + carry_over(state.jobs, action.subset)

    nd = next_renewable + battery - demand
    observed = next_demand if params.observe_demand else None
    nxt = MicrogridState(slot, nd, next_price, jobs, observed)
    return EnvSnapshot(nxt, battery, next_renewable, demand), g


def initial_snapshot(
    renewable: int,
    demand: int,
    price: int,
    params: GridParams,
    variant: Variant = Variant.ADL_SHARING,
    battery: int = 0,
) -> EnvSnapshot:
    """Start of a day (slot 1) with the daily jobs freshly issued."""
    if Variant(variant) is Variant.NON_ADL:
        load, jobs = demand + params.daily_job_energy, ()
    else:
        load, jobs = demand, params.daily_jobs
    observed = demand if params.observe_demand else None
    state = MicrogridState(1, renewable + battery - load, price, jobs, observed)
    return EnvSnapshot(state, battery, renewable, load)


class StateInterner:
    """Append-only map from canonical states to dense indices."""

    def __init__(self):
        self._index: dict[tuple, int] = {}
        self.states: list[MicrogridState] = []
        self._lock = threading.Lock()

    def __len__(self):
        return len(self.states)

    def __contains__(self, state: MicrogridState) -> bool:
        return state.key in self._index

    def get(self, state: MicrogridState) -> int | None:
        return self._index.get(state.key)

    def index(self, state: MicrogridState) -> int:
        idx = self._index.get(state.key)
        if idx is not None:
            return idx
        with self._lock:
            idx = self._index.get(state.key)
            if idx is None:
                idx = len(self.states)
                self.states.append(state)
                self._index[state.key] = idx
        return idx


def state_index(state: MicrogridState, interner: StateInterner) -> int:
    return interner.index(state)


def with_penalty(params: GridParams, penalty: float) -> GridParams:
    return replace(params, penalty=penalty)
