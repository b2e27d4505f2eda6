"""``poisson-vqa`` command line: solve, sample-study, noise-bench, plan-audit."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .cost import EvaluationError
from .experiments import (
    BudgetError,
    ConfigError,
    ExperimentConfig,
    NumericalError,
    cmd_noise_bench,
    cmd_plan_audit,
    cmd_sample_study,
    cmd_solve,
)
from .poisson import SingularSystemError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_BUDGET = 0, 2, 3, 4

log = logging.getLogger("poisson_vqa")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poisson-vqa", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int, help="master seed (optimizer starts and shot sampling)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--mode", choices=["exact", "shots", "noisy"])
    common.add_argument("--shots", type=int, help="shot count for --mode shots")
    common.add_argument("--p", type=int, dest="depth", help="ansatz depth")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("solve", "optimize one problem and write report, field CSV and trace"),
        ("sample-study", "repeat solve over the config's shot grid"),
        ("noise-bench", "noise sweep: shift-operator plan vs multi-controlled-X baseline"),
        ("plan-audit", "dump measurement plans and circuit counts"),
    ]:
        sub.add_parser(name, parents=[common], help=help_)
    return parser


def apply_flags(raw: dict, args: argparse.Namespace) -> dict:
    """Top-level CLI flags override the matching config fields."""
    raw = dict(raw)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        raw["seed"] = args.seed
        raw["optimizer"] = {**raw.get("optimizer", {}), "seed": args.seed}
    if args.out is not None:
        raw["out"] = args.out
    if args.depth is not None:
        raw["depth"] = args.depth
    mode = dict(raw.get("mode", {"kind": "exact"}))
    if args.mode is not None and args.mode != mode.get("kind"):
        mode = {"kind": args.mode}
    if args.shots is not None:
        if args.mode not in (None, "shots"):
            raise ConfigError("--shots only applies to --mode shots")
        mode["kind"] = "shots"
        mode["count"] = args.shots
    if args.seed is not None and mode.get("kind") in ("shots", "noisy"):
        mode["seed"] = args.seed
    raw["mode"] = mode
    return raw


def read_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        raw = read_config(args.config)
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        cfg = ExperimentConfig.from_dict(apply_flags(raw, args))
        if args.command == "solve":
            rep = cmd_solve(cfg)
            summary = {"E_min": rep.e_min, "fidelity": rep.fidelity, "norm_rel_error": rep.norm_rel_error}
        elif args.command == "sample-study":
            reps = cmd_sample_study(cfg)
            summary = [{"fidelity": r.fidelity, "norm_rel_error": r.norm_rel_error} for r in reps]
        elif args.command == "noise-bench":
            res = cmd_noise_bench(cfg)
            summary = {"p2": res.p2_grid, "mean_rel_error": res.mean}
        else:
            summary = cmd_plan_audit(cfg)["counts"]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetError as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (NumericalError, EvaluationError, SingularSystemError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
