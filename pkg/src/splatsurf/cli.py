"""Command-line entry point.

Subcommands: render-stereo, match, fuse, segment, eval, pipeline,
convert-colmap. Exit codes: 0 ok, 1 stage error, 2 input/config error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .camera import CameraError, convert_colmap, save_camera_file
from .config import ConfigError, load_config
from .pipeline import InputError, StageError, run_pipeline, run_stage

logger = logging.getLogger("splatsurf")

EXIT_OK = 0
EXIT_STAGE_ERROR = 1
EXIT_INPUT_ERROR = 2

THREADS_ENV = "SPLATSURF_THREADS"


def _add_config_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", "-c", help="INI config file")
    sub.add_argument(
        "--set", dest="overrides", action="append", default=[],
        metavar="SECTION.KEY=VALUE", help="override a config value (repeatable)",
    )
    sub.add_argument("--output-dir", help="override scene.output_dir")
    sub.add_argument("--seed", type=int, help="override run.seed")
    sub.add_argument("--threads", type=int, help="override run.threads")
    sub.add_argument(
        "--no-resume", action="store_true",
        help="rerun stages even when the manifest marks them complete",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatsurf",
        description="Surface reconstruction from splat scenes via stereo novel views",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    subs = parser.add_subparsers(dest="command", required=True)

    for name, doc in [
        ("render-stereo", "render stereo-calibrated pairs for every pose"),
        ("match", "stereo-match rendered pairs into masked depth frames"),
        ("segment", "propagate the initial object mask through the sequence"),
        ("fuse", "integrate depth frames into a TSDF and extract the mesh"),
        ("eval", "score the fused mesh against ground truth"),
        ("pipeline", "run all stages in order"),
    ]:
        sub = subs.add_parser(name, help=doc)
        _add_config_args(sub)

    conv = subs.add_parser("convert-colmap", help="convert a COLMAP text model to a camera file")
    conv.add_argument("cameras_txt")
    conv.add_argument("images_txt")
    conv.add_argument("-o", "--output", required=True, help="camera file to write")
    return parser


def _make_config(args: argparse.Namespace):
    overrides = list(args.overrides)
    if args.output_dir:
        overrides.append(f"scene.output_dir={args.output_dir}")
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    env_threads = os.environ.get(THREADS_ENV)
    if env_threads:
        overrides.append(f"run.threads={env_threads}")
    if args.threads is not None:
        overrides.append(f"run.threads={args.threads}")
    config = load_config(args.config, overrides)
    config.validate()
    return config


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "convert-colmap":
            frames = convert_colmap(args.cameras_txt, args.images_txt)
            save_camera_file(args.output, frames)
            logger.info("wrote %d cameras to %s", len(frames), args.output)
            return EXIT_OK

        config = _make_config(args)
        outdir = Path(config.scene.output_dir)
        if args.command == "pipeline":
            run_pipeline(config, resume=not args.no_resume)
        else:
            stage = {"render-stereo": "render"}.get(args.command, args.command)
            run_stage(stage, config, outdir, force=True)
        return EXIT_OK
    except (InputError, ConfigError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        return EXIT_INPUT_ERROR
    except (StageError, CameraError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_STAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
