"""Command line entry point: ``ecolearn <subcommand> ...``.

Subcommands
-----------
generate         simulate a model (optionally noised) and write a trajectory CSV
fit              fit sindy/node1/node2/kanode to a trajectory CSV, write a model directory
predict          roll a fitted model out over a trajectory's grid, print errors
report           markdown tables from a results CSV
reproduce-paper  run an experiment grid (JSON config and/or flags), then report

The default output root is ``$ECOLEARN_OUT`` or ``./runs``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiments as ex
from . import metrics
from .errors import EcoLearnError
from .integrator import TimeGrid, Trajectory, add_noise, simulate, split
from .models import DEFAULT_T_MAX, ModelKind, default_model


def _generate(args) -> int:
    kind = ModelKind(args.model.upper())
    model = default_model(kind, args.variant)
    t_max = args.t_max if args.t_max is not None else DEFAULT_T_MAX[kind]
    traj = simulate(model, TimeGrid(0.0, t_max, args.n_steps))
    if args.noise > 0:
        traj = add_noise(traj, args.noise, args.seed)
    out = Path(args.out) if args.out.endswith(".csv") else Path(args.out) / f"{kind.value}_noise{args.noise:g}.csv"
    traj.to_csv(out)
    print(out)
    return 0


def _fit(args) -> int:
    data = Trajectory.from_csv(args.data)
    train, _ = split(data, args.proportion)
    fitted = ex.fit_trajectory(args.method, train, args.seed, args.noise, args.iterations,
                               args.threshold, args.ridge if args.ridge == "auto" else float(args.ridge))
    fitted.save(args.out)
    if args.method == "sindy":
        from .sindy import render

        print(render(fitted.sparse))
    print(f"model written to {args.out}")
    return 0


def _predict(args) -> int:
    data = Trajectory.from_csv(args.data)
    fitted = ex.FittedModel.load(args.model_dir)
    pred = fitted.predict(data.states[0], data.grid)
    ref = Trajectory.from_csv(args.reference) if args.reference else data
    if args.out:
        pred.to_csv(args.out)
    n = len(split(data, args.proportion)[0])
    rep = metrics.evaluate(pred.states, ref.states, n)
    print(json.dumps({"e_train": rep.e_train, "e_full": rep.e_full,
                      "pointwise": {str(k): v for k, v in rep.pointwise.items()}}, indent=2))
    return 0


def _report(args) -> int:
    text = ex.table_report(args.results)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def _reproduce(args) -> int:
    # precedence: flags > JSON config > full comparison grid (--paper-grid) > defaults
    base = ex.paper_grid("SIR", ex.default_out()).to_dict() if args.paper_grid else {}
    if args.config:
        base.update(json.loads(Path(args.config).read_text()))
    overrides = {"model": args.model, "methods": args.method, "proportions": args.proportion,
                 "noise": args.noise, "seeds": args.seed, "out": args.out,
                 "iterations": args.iterations, "workers": args.workers}
    base.update({k: v for k, v in overrides.items() if v is not None})
    if args.sindy_noise:
        base["sindy_noise"] = True
    cfg = ex.ExperimentConfig.from_dict(base)
    path = ex.run_experiment(cfg)
    text = ex.table_report(path)
    (Path(cfg.out) / "report.md").write_text(text)
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ecolearn", description="Learn eco-epidemic dynamics from trajectories.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a model and write a trajectory CSV")
    g.add_argument("--model", default="SIR", choices=[k.value for k in ModelKind])
    g.add_argument("--t-max", type=float, default=None)
    g.add_argument("--n-steps", type=int, default=300)
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=123, help="noise RNG seed")
    g.add_argument("--variant", default="table", help="LVSIS parameter set")
    g.add_argument("--out", default=str(Path(ex.default_out()) / "data"))
    g.set_defaults(func=_generate)

    f = sub.add_parser("fit", help="fit a learner to the training part of a trajectory CSV")
    f.add_argument("--data", required=True)
    f.add_argument("--method", default="sindy", choices=["sindy", "node1", "node2", "kanode"])
    f.add_argument("--proportion", type=float, default=2 / 3)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--noise", type=float, default=0.0, help="noise level of the data (selects smoothing)")
    f.add_argument("--iterations", type=int, default=None)
    f.add_argument("--threshold", type=float, default=0.001)
    f.add_argument("--ridge", default="auto")
    f.add_argument("--out", default=str(Path(ex.default_out()) / "model"))
    f.set_defaults(func=_fit)

    p = sub.add_parser("predict", help="roll out a fitted model and report errors")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--data", required=True, help="trajectory CSV giving the initial state and grid")
    p.add_argument("--reference", default=None, help="clean reference CSV (defaults to --data)")
    p.add_argument("--proportion", type=float, default=2 / 3)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_predict)

    r = sub.add_parser("report", help="markdown tables from a results CSV")
    r.add_argument("results")
    r.add_argument("--out", default=None)
    r.set_defaults(func=_report)

    x = sub.add_parser("reproduce-paper", help="run an experiment grid and print the tables")
    x.add_argument("--config", default=None, help="JSON experiment config")
    x.add_argument("--paper-grid", action="store_true", help="all proportions, noise levels and ODE learners")
    x.add_argument("--model", default=None)
    x.add_argument("--method", nargs="+", default=None, choices=list(ex.METHODS))
    x.add_argument("--proportion", nargs="+", type=float, default=None)
    x.add_argument("--noise", nargs="+", type=float, default=None)
    x.add_argument("--seed", nargs="+", type=int, default=None)
    x.add_argument("--iterations", type=int, default=None)
    x.add_argument("--workers", type=int, default=None)
    x.add_argument("--sindy-noise", action="store_true", help="also run SINDy on noised data")
    x.add_argument("--out", default=None)
    x.set_defaults(func=_reproduce)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (EcoLearnError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
