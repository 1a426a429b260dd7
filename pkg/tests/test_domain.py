import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from microgrid_mdp import domain
from microgrid_mdp.domain import (
    AdlJob,
    EnvSnapshot,
    GridParams,
    JointAction,
    MicrogridState,
    StateInterner,
    Variant,
)
from microgrid_mdp.errors import ArrivalError, CapacityError, FeasibilityError

P = GridParams()  # B=8, M=14, jobs (1,2),(1,3),(2,4)


def jobs_of(*pairs):
    return tuple(AdlJob(*p) for p in pairs)


# ---------------------------------------------------------------- subsets

def test_subsets_of_default_jobs():
    subsets = domain.enumerate_adl_subsets(jobs_of((1, 2), (1, 3), (2, 4)))
    assert [m for m, _ in subsets] == list(range(8))
    assert sorted(e for _, e in subsets) == [0, 1, 1, 2, 2, 3, 3, 4]
    assert max(e for _, e in subsets) == 4


def test_subsets_of_nothing():
    assert domain.enumerate_adl_subsets(()) == [(0, 0)]


def test_subsets_of_single_expiring_job():
    assert domain.enumerate_adl_subsets(jobs_of((2, 0))) == [(0, 0), (1, 2)]


def test_subset_cap():
    with pytest.raises(CapacityError):
        domain.enumerate_adl_subsets([AdlJob(1, 1)] * (domain.MAX_JOBS + 1))


# ---------------------------------------------------------------- feasibility

def test_interval_adl_sharing():
    # jobs with total 4; scheduling one unit-job
    s = MicrogridState(1, 5, 10, jobs_of((1, 2), (1, 3), (2, 4)))
    assert domain.feasible_trade_interval(s, P, 1, Variant.ADL_SHARING) == (-6, 6)


def test_interval_greedy_adl():
    s = MicrogridState(1, 5, 10, jobs_of((1, 2), (1, 3), (2, 4)))
    assert domain.feasible_trade_interval(s, P, 0, Variant.GREEDY_ADL) == (-7, 0)


def test_interval_zero_state():
    s = MicrogridState(1, 0, 10)
    assert domain.feasible_trade_interval(s, P, 0) == (-8, 0)


def test_check_feasible_rejects():
    s = MicrogridState(1, 0, 10)
    with pytest.raises(FeasibilityError):
        domain.check_feasible(s, JointAction(1), P)
    with pytest.raises(FeasibilityError):
        domain.check_feasible(s, JointAction(0, subset=1), P)


def test_feasible_actions_order():
    s = MicrogridState(1, 1, 10, jobs_of((1, 0)))
    acts = domain.feasible_actions(s, GridParams(battery_capacity=1, max_grid_buy=2))
    keys = [(a.subset, a.trade) for a in acts]
    assert keys == sorted(keys)
    assert {a.subset for a in acts} == {0, 1}


# ---------------------------------------------------------------- reward

def test_reward_sell_with_adl_purchase():
    s = MicrogridState(1, 3, 10, jobs_of((1, 2)))
    a = JointAction(2, subset=1)
    assert domain.reward(s, a, GridParams(penalty=5)) == 10


def test_reward_all_terms_vanish():
    for c in (0.0, 5.0, 30.0):
        assert domain.reward(MicrogridState(1, 0, 10), JointAction(0), GridParams(penalty=c)) == 0


def test_reward_oversell_and_expiry_terms():
    s = MicrogridState(1, 1, 5, jobs_of((2, 0)))
    a = JointAction(4)
    params = GridParams(penalty=10)
    assert domain.reward(s, a, params, check=False) == -30
    # selling 4 with only 1 unit of net demand lies outside the feasible region
    with pytest.raises(FeasibilityError):
        domain.reward(s, a, params)


def test_expiry_literal_reading():
    s = MicrogridState(1, 0, 5, jobs_of((2, 0)))
    a = JointAction(0, subset=1)  # buy the job's 2 units at the last moment
    assert domain.reward(s, a, GridParams(penalty=10)) == -10
    literal = GridParams(penalty=10, penalize_scheduled_at_deadline=True)
    assert domain.reward(s, a, literal) == -30


# ---------------------------------------------------------------- step

def _snap(nd, jobs=(), slot=1, price=10):
    # renewable = nd + 2, demand = 2, battery 0 when nd >= -2
    r = max(nd + 2, 0)
    d = r - nd
    return EnvSnapshot(MicrogridState(slot, nd, price, jobs), 0, r, d)


def test_battery_after_selling_part_of_surplus():
    nxt, _ = domain.step(_snap(5, slot=2), JointAction(2), 0, 0, 10, (), P)
    assert nxt.battery == 3


def test_battery_after_overbuying():
    nxt, _ = domain.step(_snap(-2, slot=2), JointAction(-4), 0, 0, 10, (), P)
    assert nxt.battery == 2


def test_battery_overflow_is_clipped():
    # the bound covers u + v, so skipping the job leaves 10 units for an 8-unit battery
    snap = _snap(12, jobs_of((2, 3)), slot=2)
    assert domain.feasible_trade_interval(snap.state, P, 0)[0] == 2
    nxt, _ = domain.step(snap, JointAction(2), 0, 0, 10, (), P)
    assert nxt.battery == P.battery_capacity


def test_carry_over():
    assert domain.carry_over(jobs_of((1, 2), (2, 4)), 0b01) == jobs_of((2, 3))


def test_step_transition_fields():
    snap = _snap(1, jobs_of((1, 2), (2, 4)), slot=4)
    nxt, g = domain.step(snap, JointAction(0, subset=0b01), 3, 4, 15, P.daily_jobs, P)
    assert nxt.state.slot == 1
    assert nxt.state.price == 15
    assert nxt.battery == 1
    assert nxt.state.net_demand == 3 + 1 - 4
    assert nxt.state.jobs == domain.canonical_jobs(P.daily_jobs + jobs_of((2, 3)))
    assert g == -10


def test_arrivals_outside_slot_one_rejected():
    with pytest.raises(ArrivalError):
        domain.step(_snap(0, slot=1), JointAction(0), 0, 0, 10, P.daily_jobs, P)


def test_snapshot_invariants():
    with pytest.raises(ValueError):
        EnvSnapshot(MicrogridState(1, 3, 10), 0, 2, 0)
    with pytest.raises(ValueError):
        EnvSnapshot(MicrogridState(1, 0, 10), -1, 1, 0)


def test_step_from_table_example():
    # MG-1 interval 1: demand 1, supply 2, battery 0
    snap = domain.initial_snapshot(2, 1, 5, GridParams(daily_jobs=()))
    assert snap.state.net_demand == 1


# ---------------------------------------------------------------- interning

def test_interning_idempotent():
    it = StateInterner()
    s = MicrogridState(1, 2, 10, jobs_of((1, 2)))
    assert domain.state_index(s, it) == domain.state_index(MicrogridState(1, 2, 10, jobs_of((1, 2))), it)


def test_interning_distinguishes_price():
    it = StateInterner()
    assert domain.state_index(MicrogridState(1, 2, 10), it) != domain.state_index(MicrogridState(1, 2, 5), it)


def test_interning_canonical_job_order():
    it = StateInterner()
    a = MicrogridState(1, 2, 10, [AdlJob(1, 2), AdlJob(2, 4)])
    b = MicrogridState(1, 2, 10, [AdlJob(2, 4), AdlJob(1, 2)])
    assert domain.state_index(a, it) == domain.state_index(b, it)
    assert len(it) == 1


# ---------------------------------------------------------------- properties

job_st = st.builds(AdlJob, st.integers(1, 3), st.integers(0, 4))
params_st = st.builds(
    GridParams,
    battery_capacity=st.integers(0, 8),
    max_grid_buy=st.integers(0, 14),
    penalty=st.sampled_from([0.0, 5.0, 10.0, 30.0]),
    slots_per_day=st.integers(1, 4),
)
variant_st = st.sampled_from(list(Variant))


@st.composite
def states(draw):
    jobs = draw(st.lists(job_st, max_size=4))
    return MicrogridState(1, draw(st.integers(-20, 20)), draw(st.sampled_from([5, 10, 15])), jobs)


@given(states(), params_st, variant_st)
def test_feasible_interval_never_empty(state, params, variant):
    for _, energy in domain.enumerate_adl_subsets(state.jobs):
        lo, hi = domain.feasible_trade_interval(state, params, energy, variant)
        assert lo <= hi


@st.composite
def snapshots(draw):
    params = draw(params_st)
    b = draw(st.integers(0, params.battery_capacity))
    r = draw(st.integers(0, 8))
    d = draw(st.integers(0, 8))
    jobs = draw(st.lists(job_st, max_size=3))
    slot = draw(st.integers(1, params.slots_per_day))
    return params, EnvSnapshot(MicrogridState(slot, r + b - d, 10, jobs), b, r, d)


@given(snapshots(), st.data())
def test_battery_stays_in_bounds(ps, data):
    params, snap = ps
    for _ in range(6):
        acts = domain.feasible_actions(snap.state, params)
        a = data.draw(st.sampled_from(acts))
        slot = domain.next_slot(snap.state.slot, params.slots_per_day)
        new = params.daily_jobs if slot == 1 else ()
        snap, _ = domain.step(snap, a, data.draw(st.integers(0, 8)), data.draw(st.integers(0, 8)), 10, new, params)
        assert 0 <= snap.battery <= params.battery_capacity


@given(st.lists(job_st, min_size=1, max_size=4), st.data())
def test_job_conservation_and_deadlines(jobs, data):
    params = GridParams(slots_per_day=8, daily_jobs=())
    issued = sum(j.energy for j in jobs)
    snap = EnvSnapshot(MicrogridState(1, 0, 10, jobs), 0, 0, 0)
    scheduled = penalized = 0
    for _ in range(6):
        st_ = snap.state
        mask = data.draw(st.integers(0, (1 << len(st_.jobs)) - 1))
        lo, hi = domain.feasible_trade_interval(st_, params, domain.subset_energy(st_.jobs, mask))
        a = JointAction(data.draw(st.integers(lo, hi)), mask)
        scheduled += domain.subset_energy(st_.jobs, mask)
        penalized += domain.expiring_energy(st_, a, params)
        snap, _ = domain.step(snap, a, 0, 0, 10, (), params)
        survivors = [j for k, j in enumerate(st_.jobs) if not mask >> k & 1 and j.deadline > 0]
        assert snap.state.jobs == domain.canonical_jobs(AdlJob(j.energy, j.deadline - 1) for j in survivors)
    assert not snap.state.jobs
    assert scheduled + penalized == issued


def _reference_reward(nd, price, jobs, trade, mask, c):
    v = -sum(j.energy for k, j in enumerate(jobs) if mask >> k & 1)
    unmet = min(0, nd - trade)
    expired = sum(j.energy for k, j in enumerate(jobs) if j.deadline == 0 and not mask >> k & 1)
    return price * (trade + v) + c * unmet - c * expired


def test_reward_recomputation_100k():
    rng = np.random.default_rng(7)
    variants = list(Variant)
    for _ in range(100_000):
        n_jobs = int(rng.integers(0, 4))
        jobs = domain.canonical_jobs(
            (int(rng.integers(1, 4)), int(rng.integers(0, 5))) for _ in range(n_jobs)
        )
        params = GridParams(
            battery_capacity=int(rng.integers(0, 9)),
            max_grid_buy=int(rng.integers(0, 15)),
            penalty=float(rng.choice([0, 5, 10, 30])),
        )
        variant = variants[int(rng.integers(3))]
        state = MicrogridState(1, int(rng.integers(-14, 17)), int(rng.choice([5, 10, 15])), jobs)
        mask = int(rng.integers(0, 1 << n_jobs))
        lo, hi = domain.feasible_trade_interval(state, params, domain.subset_energy(jobs, mask), variant)
        trade = int(rng.integers(lo, hi + 1))
        got = domain.reward(state, JointAction(trade, mask), params, variant)
        assert got == _reference_reward(state.net_demand, state.price, jobs, trade, mask, params.penalty)


@given(states(), st.data())
def test_overselling_is_penalised(state, data):
    params = GridParams(penalty=data.draw(st.sampled_from([1.0, 5.0, 30.0])))
    for a in domain.feasible_actions(state, params):
        if a.trade > state.net_demand:
            assert params.penalty * min(0, state.net_demand - a.trade) < 0


@given(st.integers(0, 8), st.integers(0, 8), st.sampled_from([5, 10, 15]), st.data())
def test_non_adl_variant(r, d, price, data):
    params = GridParams()
    snap = domain.initial_snapshot(r, d, price, params, Variant.NON_ADL)
    assert snap.state.jobs == ()
    assert snap.non_adl_demand == d + params.daily_job_energy
    for _ in range(params.slots_per_day + 1):
        acts = domain.feasible_actions(snap.state, params, Variant.NON_ADL)
        assert all(a.subset == 0 and a.adl_draw(snap.state.jobs) == 0 for a in acts)
        a = data.draw(st.sampled_from(acts))
        slot = domain.next_slot(snap.state.slot, params.slots_per_day)
        new = params.daily_jobs if slot == 1 else ()
        snap, _ = domain.step(snap, a, r, d, price, new, params, Variant.NON_ADL)
        assert snap.state.jobs == ()
        extra = params.daily_job_energy if slot == 1 else 0
        assert snap.non_adl_demand == d + extra
