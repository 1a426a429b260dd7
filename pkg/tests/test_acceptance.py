"""Acceptance criteria, each at its stated tolerance. One PASS/FAIL line per criterion."""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from microgrid_mdp.config import default_scenario, tiny_scenario
from microgrid_mdp.domain import Variant
from microgrid_mdp.experiment import compare_models
from microgrid_mdp.learner import trace_tail_stats, train
from microgrid_mdp.oracle import compare_with_oracle, enumerate_mdp, relative_value_iteration
from microgrid_mdp.table1 import table1_regression

TESTS = Path(__file__).parent
SEEDS = 5


def test_oracle_equivalence(criterion):
    t0 = time.perf_counter()
    cfg = tiny_scenario()
    mdp = enumerate_mdp(cfg, 0)
    rvi = relative_value_iteration(mdp, tol=1e-8)
    res = train(cfg, 0, 1_000_000)
    cmp = compare_with_oracle(res.table, res.model, mdp, rvi, min_visits=100)
    elapsed = time.perf_counter() - t0
    ok = rvi.converged and cmp.relative_error <= 0.05 and cmp.policy_matches and elapsed < 120
    criterion(1, ok, f"oracle gain {rvi.gain:.4f}, f(Q_end) {cmp.f_end:.4f}, "
                     f"relative error {cmp.relative_error:.2%} (<= 5%), "
                     f"{len(cmp.mismatches)} mismatches over {cmp.states_checked} states with >= 100 visits, "
                     f"{elapsed:.1f}s")
    assert ok


def test_convergence_shape(criterion):
    t0 = time.perf_counter()
    cfg = default_scenario()
    ratios = []
    for agent in range(len(cfg.microgrids)):
        res = train(cfg, agent, 1_000_000, variant=Variant.ADL_SHARING, penalty=0.0)
        std, mag = trace_tail_stats(res.trace_f, 0.1)
        ratios.append(std / mag)
    elapsed = time.perf_counter() - t0
    ok = all(r <= 0.02 for r in ratios) and elapsed < 15 * 60
    names = [mg.name for mg in cfg.microgrids]
    detail = ", ".join(f"{n} {r:.2%}" for n, r in zip(names, ratios))
    criterion(2, ok, f"last-decile std/|mean| of f(Q) (<= 2%): {detail}; {elapsed:.0f}s")
    assert ok


@pytest.fixture(scope="module")
def comparison():
    cfg = default_scenario()
    cfg = cfg.model_copy(update={
        "penalties": [0.0, 30.0],
        "compare_seeds": SEEDS,
        "evaluation": cfg.evaluation.model_copy(update={"runs": 1000, "write_flows": False}),
    })
    return cfg, compare_models(cfg)


def test_model_ordering_at_zero_penalty(comparison, criterion):
    cfg, gap = comparison
    names = [mg.name for mg in cfg.microgrids]
    verdicts = []
    for model in (Variant.ADL_SHARING, Variant.NON_ADL):
        wins = np.array([r.profit(model, 0.0) > r.profit(Variant.GREEDY_ADL, 0.0) for r in gap.reports])
        for i, name in enumerate(names):
            verdicts.append((f"{model.value}>{Variant.GREEDY_ADL.value} {name}",
                             int(wins[:, i].sum()), wins[:, i].sum() > len(gap.reports) / 2))
    ok = all(v for _, _, v in verdicts)
    detail = "; ".join(f"{label} {k}/{len(gap.reports)}" for label, k, _ in verdicts)
    criterion(3, ok, f"majority over {len(gap.reports)} seeds, 1000 runs each: {detail}")
    assert ok


def test_gap_grows_with_penalty(comparison, criterion):
    cfg, gap = comparison
    label = f"{Variant.ADL_SHARING.value} - {Variant.NON_ADL.value}"
    parts = []
    ok = True
    for mg in cfg.microgrids:
        series = {r.penalty: r for r in gap.series(mg.name, label)}
        lo, hi = series[0.0], series[30.0]
        ok &= hi.mean_gap > lo.mean_gap
        parts.append(f"{mg.name} gap {lo.mean_gap:+.3f}±{lo.std_error:.3f} -> {hi.mean_gap:+.3f}±{hi.std_error:.3f}")
    criterion(4, ok, f"mean over {len(gap.reports)} seeds, c=0 -> c=30: " + "; ".join(parts))
    assert ok


def test_table1_regression(criterion):
    t0 = time.perf_counter()
    out = table1_regression()
    elapsed = time.perf_counter() - t0
    ok = (
        out.profit[3][0] > out.profit[2][0]
        and out.unmet[1] == {(2, 1): 1, (1, 2): 1}
        and out.main_grid_units[2] == out.main_grid_units[3] == 0
    )
    criterion(5, ok, f"MG-1 profit scenario 3 {out.profit[3][0]:g} > scenario 2 {out.profit[2][0]:g}; "
                     f"scenario 1 unmet {out.unmet[1]}; {elapsed * 1e3:.1f}ms")
    assert ok


INVARIANTS = [
    "test_domain.py::test_feasible_interval_never_empty",
    "test_domain.py::test_battery_stays_in_bounds",
    "test_domain.py::test_job_conservation_and_deadlines",
    "test_domain.py::test_reward_recomputation_100k",
    "test_market.py::test_settlement_conserves_energy",
    "test_market.py::test_settlement_is_reward_neutral",
    "test_harness.py::test_settlement_is_reward_neutral_in_evaluation",
    "test_harness.py::test_csvs_byte_identical",
    "test_learner.py::test_training_is_deterministic",
]


def test_invariant_suite(criterion):
    t0 = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *INVARIANTS],
        cwd=TESTS, capture_output=True, text=True,
    )
    elapsed = time.perf_counter() - t0
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0 and elapsed < 60
    criterion(6, ok, f"{len(INVARIANTS)} invariant tests: {summary}; {elapsed:.1f}s wall (< 60s)")
    assert ok, proc.stdout[-3000:]
