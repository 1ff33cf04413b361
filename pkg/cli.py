"""
gradreg command line.

    python cli.py train  --config run.cfg [--out DIR]
    python cli.py attack --config run.cfg [--model model.bin] [--out DIR]
    python cli.py robust --config run.cfg [--model model.bin] [--out DIR]

Exit codes: 0 success, 1 usage or configuration error, 2 I/O or file format
error, 3 training diverged.
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

from config import config
from gradreg.commands import cmd_attack, cmd_robust, cmd_train
from gradreg.errors import DivergedTrainingError, FormatError, GradRegError, LengthError
from tools.runs import load_run

logger = logging.getLogger("gradreg.cli")

EXIT_USAGE = 1
EXIT_IO = 2
EXIT_DIVERGED = 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = Parser(prog="gradreg", description="Lp gradient-perturbation training and robustness analysis")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)
    for name, wants_model in (("train", False), ("attack", True), ("robust", True)):
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="flat key=value run config")
        if wants_model:
            cmd.add_argument("--model", default=None, help="model file (default: <out>/model.bin)")
        cmd.add_argument("--out", default=None, help="output directory")
    return parser


def run(args: argparse.Namespace) -> dict:
    cfg, out = load_run(args.config, args.out)
    progress = config["progress"]
    if args.command == "train":
        return cmd_train(cfg, out, config["mnist_dir"], progress)
    if args.command == "attack":
        return cmd_attack(cfg, out, args.model, config["mnist_dir"])
    return cmd_robust(cfg, out, args.model, config["mnist_dir"], progress)


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=config["log_level"],
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        summary = run(build_parser().parse_args(argv))
    except UsageError as exc:
        print(f"gradreg: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergedTrainingError as exc:
        logger.error("%s", exc)
        return EXIT_DIVERGED
    except (OSError, FormatError, LengthError) as exc:
        logger.error("%s", exc)
        return EXIT_IO
    except GradRegError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
