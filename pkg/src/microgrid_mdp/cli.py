"""Command-line entry point: ``microgrid-mdp <subcommand> [flags]``.

Exit codes: 0 success, 2 configuration error, 3 model too large for the
exact solver, 4 oracle check failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ScenarioConfig, default_scenario, five_microgrid_scenario, load_config, tiny_scenario
from .domain import Variant
from .errors import ConfigError, SizeError
from .experiment import CellReport, compare_models, run_experiment, write_convergence
from .learner import QTable, TrainResult, agent_model, train, trace_tail_stats
from .oracle import compare_with_oracle, enumerate_mdp, relative_value_iteration, write_oracle_csv
from .table1 import table1_regression

PRESETS = {"three": default_scenario, "five": five_microgrid_scenario, "tiny": tiny_scenario}


def _scenario(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else PRESETS[args.preset]()
    update = {}
    if args.seed is not None:
        update["master_seed"] = args.seed
    if getattr(args, "variant", None):
        try:
            update["variants"] = [Variant(v) for v in args.variant]
        except ValueError as exc:
            raise ConfigError("variant", str(exc)) from None
    if getattr(args, "penalty", None):
        update["penalties"] = args.penalty
    if update:
        cfg = cfg.model_copy(update=update)
    if getattr(args, "runs", None):
        cfg = cfg.model_copy(update={"evaluation": cfg.evaluation.model_copy(update={"runs": args.runs})})
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _table_path(out: Path, variant: Variant, penalty: float, agent: int) -> Path:
    return out / "qtables" / f"{variant.value}_c{penalty:g}_agent{agent}.npz"


def _save_table(path: Path, res: TrainResult, seed: int) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(
        path,
        ptr=res.table.ptr,
        values=res.table.values,
        visits=res.table.visits,
        reference_state=res.table.reference_state,
        cycles=res.cycles,
        master_seed=seed,
    )


def _load_table(path: Path, cfg: ScenarioConfig, variant: Variant, penalty: float, agent: int) -> TrainResult | None:
    if not path.exists():
        return None
    data = np.load(path)
    if int(data["master_seed"]) != cfg.master_seed:
        return None
    model = agent_model(cfg, agent, variant, penalty)
    if not np.array_equal(data["ptr"], model.act_ptr):
        return None
    table = QTable(data["ptr"], data["values"].copy(), data["visits"].copy(), int(data["reference_state"]))
    empty = np.zeros(0)
    return TrainResult(model, table, int(data["cycles"]), empty.astype(np.int64), empty, empty,
                       agent=agent, variant=variant, penalty=penalty)


def cmd_gen_config(args) -> int:
    text = PRESETS[args.preset]().to_yaml()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_train(args) -> int:
    cfg = _scenario(args)
    out = _out(args)
    agents = [args.agent] if args.agent is not None else range(len(cfg.microgrids))
    cells = []
    for v in cfg.variants:
        for c in cfg.penalties:
            results = []
            for i in agents:
                res = train(cfg, i, args.cycles, variant=v, penalty=c)
                _save_table(_table_path(out, Variant(v), float(c), i), res, cfg.master_seed)
                std, mag = trace_tail_stats(res.trace_f) if len(res.trace_f) else (0.0, 0.0)
                print(f"{Variant(v).value} c={c:g} {cfg.microgrids[i].name}: "
                      f"f(Q)={res.table.reference_value():.4f} tail std/|mean|="
                      f"{std / mag if mag else float('nan'):.4f} mean reward={res.mean_reward:.4f}")
                results.append(res)
            cells.append(CellReport(Variant(v), float(c), cfg.master_seed, np.zeros((0, len(results))),
                                    {}, [], results))
    write_convergence(out / "convergence.csv", cells)
    return 0


def cmd_evaluate(args) -> int:
    cfg = _scenario(args)
    out = _out(args)
    trained = {}
    for v in cfg.variants:
        for c in cfg.penalties:
            cell = {}
            for i in range(len(cfg.microgrids)):
                res = _load_table(_table_path(out, Variant(v), float(c), i), cfg, Variant(v), float(c), i)
                if res is not None:
                    cell[i] = res
            trained[(Variant(v), float(c))] = cell
    report = run_experiment(cfg, out, parallel=args.parallel, cycles=args.cycles, trained=trained)
    _print_report(report.to_dict())
    return 0


def _print_report(data: dict) -> None:
    for cell in data["cells"]:
        profits = ", ".join(
            f"{name}={m:.4f}±{se:.4f}"
            for name, m, se in zip(data["microgrids"], cell["mean_profit"], cell["std_error"])
        )
        print(f"{cell['variant']} c={cell['penalty']:g}: {profits}")


def cmd_compare(args) -> int:
    cfg = _scenario(args)
    if args.seeds is not None:
        cfg = cfg.model_copy(update={"compare_seeds": args.seeds})
    gap = compare_models(cfg, out_dir=_out(args), parallel=args.parallel, cycles=args.cycles)
    for r in gap.rows:
        print(f"{r.microgrid} [{r.comparison}] c={r.penalty:g}: {r.mean_gap:.4f}±{r.std_error:.4f}"
              + (f"  ({r.flag})" if r.flag else ""))
    for name, verdict in gap.verdicts.items():
        print(f"{name}: {verdict}")
    return 0


def cmd_oracle_check(args) -> int:
    cfg = _scenario(args)
    agent = args.agent or 0
    variant = Variant(cfg.variants[0])
    penalty = float(cfg.penalties[0])
    mdp = enumerate_mdp(cfg, agent, variant, penalty)
    result = relative_value_iteration(mdp, tol=cfg.oracle.tol, max_sweeps=cfg.oracle.max_sweeps)
    print(f"states={mdp.n_states} pairs={mdp.n_pairs} sweeps={result.sweeps} gain={result.gain:.6f}")
    res = train(cfg.model_copy(update={"observe_demand": True}), agent, args.cycles,
                variant=variant, penalty=penalty)
    cmp = compare_with_oracle(res.table, res.model, mdp, result)
    print(f"f(Q_end)={cmp.f_end:.6f} relative error={cmp.relative_error:.4%} "
          f"states checked={cmp.states_checked} mismatches={len(cmp.mismatches)}")
    if args.out:
        write_oracle_csv(_out(args) / "oracle.csv", mdp, result)
    ok = cmp.relative_error <= 0.05 and cmp.policy_matches
    print("PASS" if ok else "FAIL")
    return 0 if ok else 4


def cmd_table1(args) -> int:
    outcome = table1_regression()
    print(json.dumps(outcome.as_dict(), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="microgrid-mdp", description="Microgrid energy-sharing RL simulator")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_flags(sp, variant=True):
        sp.add_argument("--config", help="scenario YAML; defaults to --preset")
        sp.add_argument("--preset", choices=sorted(PRESETS), default="three")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--cycles", type=int, help="training cycles per agent")
        sp.add_argument("--parallel", type=int, default=1)
        sp.add_argument("--out", default="out")
        if variant:
            sp.add_argument("--variant", action="append", choices=[v.value for v in Variant])
        sp.add_argument("--penalty", type=float, action="append", help="overselling penalty c (repeatable)")

    g = sub.add_parser("gen-config", help="print a preset scenario as YAML")
    g.add_argument("--preset", choices=sorted(PRESETS), default="three")
    g.add_argument("--out", help="write to this file instead of stdout")
    g.set_defaults(func=cmd_gen_config)

    t = sub.add_parser("train", help="train agents, save Q-tables and convergence.csv")
    scenario_flags(t)
    t.add_argument("--agent", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate frozen policies, write profits/runs/flows CSVs")
    scenario_flags(e)
    e.add_argument("--runs", type=int)
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("compare", help="profit gaps between the three models over several seeds")
    scenario_flags(c, variant=False)
    c.add_argument("--runs", type=int)
    c.add_argument("--seeds", type=int, help="number of master seeds")
    c.set_defaults(func=cmd_compare)

    o = sub.add_parser("oracle-check", help="compare a trained agent with the exact solver")
    scenario_flags(o)
    o.set_defaults(func=cmd_oracle_check, preset="tiny", out=None)
    o.add_argument("--agent", type=int)

    t1 = sub.add_parser("table1", help="replay the three-microgrid two-interval example")
    t1.set_defaults(func=cmd_table1)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SizeError as exc:
        print(f"size error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
