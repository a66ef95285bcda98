"""`pdp` command line: experiments, the certification suite, reports and releases."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Sequence

from perinstance_dp.experiments import COMMANDS, load_experiment_config
from perinstance_dp.mechanisms import MechanismKind

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_BAD_ARGUMENTS = 2
EXIT_IO_ERROR = 3

# flag -> ExperimentConfig field
_OVERRIDES = {
    "seed": "seed",
    "delta": "delta",
    "gamma": "gamma",
    "lam": "lam",
    "sigma": "sigma_mech",
    "sigma_data": "sigma_data",
    "eps_budget": "eps_budget",
    "kappa": "kappa",
    "mechanism": "mechanism",
    "out": "out",
    "n": "n",
    "d": "d",
    "trials": "trials",
    "mc_samples": "mc_samples",
    "moments": "moments",
    "search_budget": "search_budget",
    "data": "data",
    "verify_instances": "verify_instances",
}


def _gamma_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(item) for item in text.split(",") if item.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value or YAML experiment configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--delta", type=float)
    common.add_argument("--gamma", type=float)
    common.add_argument("--lambda", dest="lam", type=float)
    common.add_argument("--sigma", type=float, help="mechanism noise scale")
    common.add_argument("--sigma-data", type=float, help="response noise of synthetic data")
    common.add_argument("--eps-budget", type=float)
    common.add_argument("--kappa", type=float)
    common.add_argument("--mechanism", choices=[str(kind) for kind in MechanismKind])
    common.add_argument("--out", help="output directory")
    common.add_argument("--n", type=int)
    common.add_argument("--d", type=int)
    common.add_argument("--trials", type=int)
    common.add_argument("--mc-samples", type=int)
    common.add_argument("--moments", type=int)
    common.add_argument("--gammas", type=_gamma_list, help="comma-separated gamma sweep")
    common.add_argument("--search-budget", type=int)
    common.add_argument("--data", help="CSV data set with header x1,...,xd,y")
    common.add_argument("--no-clip", dest="clip", action="store_false", default=None,
                        help="use the data as loaded instead of normalizing rows and clipping y")
    common.add_argument("--verify-instances", type=int)
    common.add_argument("--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pdp", description="Per-instance differential privacy for ridge regression.")
    sub = parser.add_subparsers(dest="command", required=True)
    descriptions = {
        "fig1": "DP vs pDP-for-all vs per-row pDP of isotropic output perturbation",
        "fig2": "gamma sweep of output perturbation and OPS against worst-case DP",
        "efficiency": "mean squared error of OPS and AdaOPS against closed forms",
        "optgap": "optimization error of OPS against d/gamma and d/(2 gamma)",
        "verify": "run the invariant and Monte-Carlo certification suite",
        "report": "pDP report for a CSV data set",
        "release": "one private release for a CSV data set",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=descriptions[name])
    return parser


def config_from_args(args: argparse.Namespace):
    overrides = {field: getattr(args, flag) for flag, field in _OVERRIDES.items()}
    overrides["gammas"] = args.gammas
    overrides["clip"] = args.clip
    overrides["experiment"] = args.command
    return load_experiment_config(args.config, **overrides)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )

    try:
        cfg = config_from_args(args)
        result = COMMANDS[args.command](cfg)
    except OSError:
        logger.exception("I/O failure while running %s", args.command)
        return EXIT_IO_ERROR
    except ValueError as exc:
        logger.error("%s: %s", args.command, exc)
        return EXIT_BAD_ARGUMENTS

    sys.stdout.write(json.dumps({"outputs": [str(p) for p in result.outputs], "passed": result.passed}) + "\n")
    if not result.passed:
        logger.error("%s reported failing checks", args.command)
        return EXIT_CHECK_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
