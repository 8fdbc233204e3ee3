import sys
import logging
import argparse
from typing import Any, Dict, List, Optional

from command_modules import compare, evaluate, generate, preprocess, train
from services.evaluation import METHODS, ORACLE
from utils.config import RunConfig, load_config
from utils.errors import EXIT_CONFIG, EXIT_OK, ConfigError

logger = logging.getLogger(__name__)

AXES = ["fx", "fy", "fz"]
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="flat YAML configuration file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="run output directory")
    common.add_argument("--log-level", default=argparse.SUPPRESS,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--set", action="append", default=argparse.SUPPRESS, metavar="KEY=VALUE",
                        help="override one configuration key, e.g. mlp.max_epochs=200")
    common.add_argument("--print-config", action="store_true", default=argparse.SUPPRESS,
                        help="print the resolved configuration and exit")

    parser = argparse.ArgumentParser(prog="tireforce", parents=[common],
                                     description="Tire force estimation from inner-liner acceleration")
    sub = parser.add_subparsers(dest="command")

    gen = sub.add_parser("generate", parents=[common], help="simulate the test schedule")
    gen.add_argument("--revolutions", type=int, help="revolutions per condition (smoke schedule)")
    gen.add_argument("--conditions", type=int, help="number of schedule entries (smoke schedule)")

    sub.add_parser("preprocess", parents=[common], help="filter, locate the contact patch and window")

    tr = sub.add_parser("train", parents=[common], help="train one method for one axis")
    tr.add_argument("method", choices=list(METHODS))
    tr.add_argument("axis", choices=AXES)
    tr.add_argument("--n-trees", type=int, help="number of forest trees")

    for name, help_text in (("evaluate", "score saved models on the test split"),
                            ("crossval", "k-fold cross-validation"),
                            ("compare", "train and score all methods on one split")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--methods", nargs="+", choices=[*METHODS, ORACLE], default=list(METHODS))
        p.add_argument("--axis", nargs="+", choices=AXES, default=AXES, dest="axes")
        if name == "compare":
            p.add_argument("--extrapolation", action="store_true",
                           help="train below a label quantile and test above it")
    return parser


def collect_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if hasattr(args, "seed"):
        overrides["seed"] = args.seed
    if hasattr(args, "out"):
        overrides["out"] = args.out
    if hasattr(args, "log_level"):
        overrides["log_level"] = args.log_level
    if getattr(args, "revolutions", None) is not None or getattr(args, "conditions", None) is not None:
        overrides["simulator.schedule"] = "smoke"
        if args.revolutions is not None:
            overrides["simulator.revolutions"] = args.revolutions
        if args.conditions is not None:
            overrides["simulator.conditions"] = args.conditions
    if getattr(args, "n_trees", None) is not None:
        overrides["forest.n_trees"] = args.n_trees
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(args, "log_level", "INFO"), format=LOG_FORMAT)

    try:
        config: RunConfig = load_config(getattr(args, "config", None), collect_overrides(args))
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    logging.getLogger().setLevel(config.log_level.upper())

    if getattr(args, "print_config", False):
        sys.stdout.write(config.dump())
        return EXIT_OK

    command = args.command
    if command == "generate":
        return generate.run_generate(config)
    elif command == "preprocess":
        return preprocess.run_preprocess(config)
    elif command == "train":
        return train.run_train(config, args.method, args.axis)
    elif command == "evaluate":
        return evaluate.run_evaluate(config, args.methods, args.axes)
    elif command == "crossval":
        return evaluate.run_crossval(config, args.methods, args.axes)
    elif command == "compare":
        return compare.run_compare(config, args.methods, args.axes, args.extrapolation)
    else:
        logger.error("No command given; use one of generate, preprocess, train, evaluate, crossval, compare")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
