"""``posecascade`` command line.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

import argparse
import logging
import pathlib
import sys

import posecascade.settings
from posecascade.cli import commands
from posecascade.cli.config import ConfigError, load_run_config
from posecascade.utils import CustomError


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=pathlib.Path, help="`key = value` run configuration")
    common.add_argument("--seed", type=_non_negative_int, help="overrides `seed` of the config")
    common.add_argument("--out", type=pathlib.Path, default=pathlib.Path("out"))

    parser = argparse.ArgumentParser(
        prog="posecascade", description="Cascaded 3D hand pose estimation from depth frames."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", parents=[common], help="render a synthetic hand dataset")
    synth.add_argument("--count", type=_positive_int, help="overrides `synth_count`")

    train = sub.add_parser("train", parents=[common], help="train the Init-CNN and Pose-REN")
    train.add_argument("--dataset", type=pathlib.Path, required=True, help="training manifest")

    infer = sub.add_parser("infer", parents=[common], help="predict poses for every stage")
    infer.add_argument("--checkpoints", type=pathlib.Path, required=True)
    infer.add_argument("--frames", type=pathlib.Path, required=True, help="frame manifest")
    infer.add_argument("--iterations", type=_non_negative_int, help="overrides `infer_iterations`")
    infer.add_argument(
        "--init-pose",
        help="`meanpose` or a predictions CSV whose stage-0 rows replace the Init-CNN",
    )

    for name, text in (("eval", "write per-stage error reports"), ("report", "per-stage table")):
        command = sub.add_parser(name, parents=[common], help=text)
        command.add_argument("--predictions", type=pathlib.Path, required=True)
        command.add_argument("--gt", type=pathlib.Path, required=True, help="ground-truth manifest")

    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    return parser


def run(args: argparse.Namespace) -> int:
    config = load_run_config(args.config, args.seed)
    match args.command:
        case "synth":
            return commands.cmd_synth(config, args.out, args.count)
        case "train":
            return commands.cmd_train(config, args.dataset, args.out)
        case "infer":
            return commands.cmd_infer(
                config, args.checkpoints, args.frames, args.out, args.iterations, args.init_pose
            )
        case "eval":
            return commands.cmd_eval(config, args.predictions, args.gt, args.out)
        case "report":
            return commands.cmd_report(config, args.predictions, args.gt, args.out)
        case _:
            return commands.cmd_gradcheck(config)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=posecascade.settings.get_settings().log_level,
        format="%(asctime)s %(levelname)s: %(message)s",
        stream=sys.stdout,
    )
    try:
        return run(args)
    except ConfigError as exc:
        logger.error(str(exc))
        return EXIT_USAGE
    except (CustomError, OSError) as exc:
        logger.error(str(exc))
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
