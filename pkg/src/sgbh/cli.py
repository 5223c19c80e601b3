"""Command-line entry point: ``sgbh <experiment> [--config FILE] ...``.

Exit codes: 0 all audits pass, 1 an audit failed, 2 invalid configuration
(or an audit refused its parameters), 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import sys

from .experiments import EXIT_CONFIG, EXPERIMENTS, ConfigError, ExperimentConfig, run, sweep


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sgbh", description="Stochastic generalized Burgers-Huxley experiments")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON experiment config (defaults are used for missing fields)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--workers", type=int, help="worker processes for ensembles (default: SGBH_WORKERS or 1)")
        p.add_argument("--override-regime", action="store_true", help="run even when the well-posedness regime checks fail")

    for name in EXPERIMENTS:
        common(sub.add_parser(name, help=f"run the {name} experiment"))
    sw = sub.add_parser("sweep", help="repeat an experiment over values of one scalar config field")
    common(sw)
    sw.add_argument("--experiment", choices=EXPERIMENTS, help="experiment to sweep (default: the config's)")
    sw.add_argument("--axis", required=True, help="dotted config field, e.g. model.beta or solver.dt")
    sw.add_argument("--values", required=True, nargs="*", help="values (parsed as JSON scalars)")
    sw.add_argument("--shared-noise", action="store_true", help="reuse one noise stream for every value")
    return ap


def _scalar(s: str):
    try:
        return json.loads(s)
    except json.JSONDecodeError:
        return s


def _load(args, experiment: str | None) -> ExperimentConfig:
    raw = {}
    if args.config:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config document must be a mapping")
    if experiment:
        raw["experiment"] = experiment
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out:
        raw["output_dir"] = args.out
    return ExperimentConfig.from_dict(raw)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "sweep":
            cfg = _load(args, args.experiment)
            res = sweep(cfg, args.axis, [_scalar(v) for v in args.values], args.workers, args.override_regime, args.shared_noise)
        else:
            cfg = _load(args, args.command)
            res = run(cfg, args.workers, args.override_regime)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    rep = res.report
    if "error" in rep:
        print(f"{rep['error']}: {rep['message']}", file=sys.stderr)
    else:
        for k, v in sorted(rep.get("summary", {}).items()):
            print(f"{k}: {v}")
    print(f"{'PASS' if res.status == 0 else 'FAIL'} (exit {res.status}) -> {res.out_dir}")
    return res.status


if __name__ == "__main__":
    sys.exit(main())
