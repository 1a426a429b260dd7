"""Flat-array form of one microgrid's MDP, shared by the trainer and evaluator.

The reachable observed states are enumerated once by breadth-first closure
over the domain rules. Each (state, action) pair gets its reward and a
post-decision key ``(next slot, next battery, next jobs)``; the next observed
state is then a table lookup on that key and the exogenous draws
``(renewable, demand index, price index)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import domain
from .domain import AdlJob, GridParams, JointAction, MicrogridState, StateInterner, Variant
from .processes import RenewableSource


@dataclass
class AgentModel:
    params: GridParams
    variant: Variant
    source: RenewableSource
    demand_alphabet: tuple[int, ...]
    price_alphabet: tuple[int, ...]
    interner: StateInterner
    act_ptr: np.ndarray  # CSR offsets: actions of state s live in [ptr[s], ptr[s+1])
    act_trade: np.ndarray
    act_mask: np.ndarray
    act_reward: np.ndarray
    act_post: np.ndarray
    post_keys: list[tuple[int, int, tuple[AdlJob, ...]]]
    next_state: np.ndarray  # [post, renewable, demand idx, price idx] -> state, -1 if unreachable
    initial_post: int = 0  # post key of a fresh day with an empty battery
    _post_index: dict = field(default_factory=dict, repr=False)

    @property
    def n_states(self) -> int:
        return len(self.interner)

    @property
    def n_pairs(self) -> int:
        return int(self.act_ptr[-1])

    @property
    def states(self) -> list[MicrogridState]:
        return self.interner.states

    def actions(self, s: int) -> list[JointAction]:
        lo, hi = self.act_ptr[s], self.act_ptr[s + 1]
        return [JointAction(int(u), int(m)) for u, m in zip(self.act_trade[lo:hi], self.act_mask[lo:hi])]

    def n_actions(self, s: int) -> int:
        return int(self.act_ptr[s + 1] - self.act_ptr[s])

    def local_action(self, s: int, action: JointAction) -> int:
        lo, hi = self.act_ptr[s], self.act_ptr[s + 1]
        hit = np.nonzero((self.act_trade[lo:hi] == action.trade) & (self.act_mask[lo:hi] == action.subset))[0]
        if len(hit) == 0:
            raise KeyError(f"{action} not feasible in state {s}")
        return int(hit[0])

    def index(self, state: MicrogridState) -> int:
        idx = self.interner.get(state)
        if idx is None:
            raise KeyError(f"state not in model: {state}")
        return idx

    def lookup(self, slot: int, battery: int, jobs, renewable: int, demand_idx: int, price_idx: int) -> int:
        post = self._post_index[(slot, battery, domain.canonical_jobs(jobs))]
        return int(self.next_state[post, renewable, demand_idx, price_idx])


def _post_jobs(params: GridParams, variant: Variant, slot: int, carried) -> tuple[AdlJob, ...]:
    if variant is Variant.NON_ADL:
        return ()
    if slot == 1:
        return domain.canonical_jobs(params.daily_jobs + tuple(carried))
    return tuple(carried)


def build_model(
    params: GridParams,
    variant: Variant | str,
    source: RenewableSource,
    demand_alphabet,
    price_alphabet,
) -> AgentModel:
    variant = Variant(variant)
    demand_alphabet = tuple(int(d) for d in demand_alphabet)
    price_alphabet = tuple(int(p) for p in price_alphabet)
    T = params.slots_per_day
    extra = params.daily_job_energy if variant is Variant.NON_ADL else 0
    support = {
        slot: [k for k, m in enumerate(source.pmf(slot)) if m > 0] for slot in range(1, T + 1)
    }

    interner = StateInterner()
    post_index: dict = {}
    post_keys: list = []
    post_succ: list[list[tuple[int, int, int, int]]] = []

    def successors_of_post(key) -> list[tuple[int, int, int, int]]:
        slot, battery, jobs = key
        out = []
        for r in support[slot]:
            for di, d in enumerate(demand_alphabet):
                load = d + (extra if slot == 1 else 0)
                observed = d if params.observe_demand else None
                for pi, p in enumerate(price_alphabet):
                    st = MicrogridState(slot, r + battery - load, p, jobs, observed)
                    out.append((r, di, pi, interner.index(st)))
        return out

    def post_id(key) -> int:
        pid = post_index.get(key)
        if pid is None:
            pid = len(post_keys)
            post_index[key] = pid
            post_keys.append(key)
            post_succ.append(successors_of_post(key))
        return pid

    initial = post_id((1, 0, _post_jobs(params, variant, 1, ())))

    trades: list[int] = []
    masks: list[int] = []
    rewards: list[float] = []
    posts: list[int] = []
    ptr = [0]
    s = 0
    # interner grows while we walk it: plain index loop is the BFS queue
    while s < len(interner):
        state = interner.states[s]
        for action in domain.feasible_actions(state, params, variant):
            g = domain.reward(state, action, params, variant)
            slot = domain.next_slot(state.slot, T)
            battery = domain.next_battery(state, action, params)
            carried = domain.carry_over(state.jobs, action.subset)
            pid = post_id((slot, battery, _post_jobs(params, variant, slot, carried)))
            trades.append(action.trade)
            masks.append(action.subset)
            rewards.append(g)
            posts.append(pid)
        ptr.append(len(trades))
        s += 1

    table = np.full(
        (len(post_keys), source.cap + 1, len(demand_alphabet), len(price_alphabet)), -1, dtype=np.int64
    )
    for pid, succ in enumerate(post_succ):
        for r, di, pi, sidx in succ:
            table[pid, r, di, pi] = sidx

    return AgentModel(
        params=params,
        variant=variant,
        source=source,
        demand_alphabet=demand_alphabet,
        price_alphabet=price_alphabet,
        interner=interner,
        act_ptr=np.asarray(ptr, dtype=np.int64),
        act_trade=np.asarray(trades, dtype=np.int64),
        act_mask=np.asarray(masks, dtype=np.int64),
        act_reward=np.asarray(rewards, dtype=np.float64),
        act_post=np.asarray(posts, dtype=np.int64),
        post_keys=post_keys,
        next_state=table,
        initial_post=initial,
        _post_index=post_index,
    )

