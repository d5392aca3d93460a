import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from theme_detection.config import load_config
from theme_detection.errors import ConfigError, DataError, StageError
from theme_detection.pipeline import (
    compare_runs,
    load_manifest,
    run_grid,
    run_pipeline,
)
from theme_detection.storage import Stage

LOG = logging.getLogger("theme_detection")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

STAGE_COMMANDS = [stage.value for stage in Stage]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="theme-detection",
        description="Cluster question sentences and evaluate the clusters as a tag classifier.",
    )
    parser.add_argument("--log-level", help="Logging level; defaults to the config, then INFO")
    commands = parser.add_subparsers(dest="command", required=True)

    for name in [*STAGE_COMMANDS, "run"]:
        command = commands.add_parser(
            name,
            help="Run the full pipeline" if name == "run" else f"Run the pipeline up to {name}",
        )
        command.add_argument("--config", required=True, type=Path, help="Run configuration YAML")
        command.add_argument("--seed", type=int, help="Override the run seed")
        command.add_argument("--workers", type=int, help="Override the worker count")
        command.add_argument("--out", type=Path, help="Override the output directory")
        if name == "run":
            command.add_argument(
                "--stage",
                choices=STAGE_COMMANDS,
                help="Stop after this stage (grids always run to the end)",
            )

    compare = commands.add_parser("compare", help="Compare finished runs")
    compare.add_argument("manifests", nargs="+", type=Path, help="Run manifest files")
    compare.add_argument("--out", type=Path, help="Directory for comparison.csv/.txt")
    return parser


def exit_code(error: BaseException) -> int:
    if isinstance(error, StageError):
        return exit_code(error.cause)
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, DataError):
        return EXIT_DATA
    return EXIT_INTERNAL


def run_command(args: argparse.Namespace) -> None:
    if args.command == "compare":
        comparison = compare_runs([load_manifest(path) for path in args.manifests])
        print(comparison.to_text(), end="")
        if args.out is not None:
            comparison.write(args.out)
        return

    overrides = {"seed": args.seed, "workers": args.workers, "out_dir": args.out}
    overrides = {key: value for key, value in overrides.items() if value is not None}
    config = load_config(args.config, overrides=overrides)
    if args.log_level is None:
        logging.getLogger().setLevel(config.log_level.upper())

    if args.command == "run" and args.stage is None and config.grid is not None:
        manifests, comparison = run_grid(config)
        if comparison is not None:
            print(comparison.to_text(), end="")
        LOG.info("Grid finished: %d runs", len(manifests))
        return

    if args.command == "run":
        until = Stage(args.stage or Stage.EVALUATE.value)
    else:
        until = Stage(args.command)
    manifest, report = run_pipeline(config, until=until)
    if report is not None:
        print(f"{manifest.name}: Micro-F1 {report.micro_f1:.4f} ({report.questions} questions)")


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=(args.log_level or "INFO").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        run_command(args)
    except (ConfigError, DataError, StageError) as e:
        code = exit_code(e)
        if code == EXIT_INTERNAL:
            LOG.exception("Internal error")
        else:
            LOG.error("%s", e)
        return code
    except Exception:
        LOG.exception("Internal error")
        return EXIT_INTERNAL

    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
