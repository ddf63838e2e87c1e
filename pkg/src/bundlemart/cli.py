"""Command-line entry point: ``bundlemart run | validate | list-models``."""
from __future__ import annotations

import argparse
import json
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__, models
from .errors import ConfigError
from .runner import EXPERIMENTS, ExperimentConfig, NumericalFailure, run, validate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def load_config(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _gather(args) -> dict:
    data = load_config(args.config) if args.config else {}
    overrides = {"experiment": args.experiment, "model": args.model, "seed": args.seed,
                 "dt": args.dt, "n_paths": args.paths, "output_dir": args.out}
    data.update({k: v for k, v in overrides.items() if v is not None})
    return data


def _add_common(p):
    p.add_argument("--config", help="TOML experiment configuration")
    p.add_argument("--experiment", choices=EXPERIMENTS, help="override the experiment")
    p.add_argument("--model", help="override the model name")
    p.add_argument("--seed", type=int, help="override the seed")
    p.add_argument("--dt", type=float, help="override the time step")
    p.add_argument("--paths", type=int, help="override the number of paths")
    p.add_argument("--out", help="override the output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bundlemart", description=__doc__)
    parser.add_argument("--version", action="version", version=f"bundlemart {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("run", help="run an experiment and write its report"))
    _add_common(sub.add_parser("validate", help="check a configuration without running it"))
    lm = sub.add_parser("list-models", help="list registered models")
    lm.add_argument("--json", action="store_true", help="print the JSON manifest")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-models":
        if args.json:
            print(models.manifest())
        else:
            for name in models.model_names():
                print(f"{name:24s} {models.MODELS[name][0]}")
        return EXIT_OK
    try:
        data = _gather(args)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    problems = validate(data)
    if args.command == "validate":
        for msg in problems:
            print(f"error: {msg}")
        if not problems:
            print("ok")
        return EXIT_CONFIG if problems else EXIT_OK
    if problems:
        for msg in problems:
            print(f"error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = run(ExperimentConfig.from_mapping(data))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    summary = {"status": report.status, "output_dir": report.config["output_dir"],
               "oracles_passed": sum(o["pass"] for o in report.oracles),
               "oracles": len(report.oracles),
               "verdicts": {v["name"]: v["decision"] for v in report.verdicts}}
    print(json.dumps(summary, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
