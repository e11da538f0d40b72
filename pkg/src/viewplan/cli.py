"""Command line interface: ``viewplan plan|validate|install``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .pipeline import (PipelineConfig, PipelineError, SceneError, export_geometry, load_config,
                       load_scene, run_selection, save_scene, update_after_install)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_BELOW_THRESHOLD = 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="viewplan", description="Select supervising-robot camera viewpoints.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    plan = sub.add_parser("plan", help="run viewpoint selection for one pick or place operation")
    plan.add_argument("--scene", required=True, type=Path)
    plan.add_argument("--operation", required=True, choices=("pick", "place"))
    plan.add_argument("--target", required=True, type=int, help="target order")
    plan.add_argument("--seed", type=int, default=None)
    plan.add_argument("--config", type=Path, default=None, help="JSON file overriding PipelineConfig fields")
    plan.add_argument("--out", type=Path, default=None, help="report path (stdout if omitted)")
    plan.add_argument("--export-dir", type=Path, default=None)
    plan.add_argument("--timing", action="store_true", help="include wall-clock timings in the report")

    val = sub.add_parser("validate", help="load and check a scene file")
    val.add_argument("--scene", required=True, type=Path)

    ins = sub.add_parser("install", help="mark a target installed and write the updated scene")
    ins.add_argument("--scene", required=True, type=Path)
    ins.add_argument("--target", required=True, type=int)
    ins.add_argument("--out", required=True, type=Path)
    return p


def _plan(args) -> int:
    scene = load_scene(args.scene)
    config = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        config = config.with_seed(args.seed)
    report, ctx = run_selection(scene, config, args.operation, args.target, return_context=True)
    text = report.to_json(include_timing=args.timing)
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    if args.export_dir:
        export_geometry(report, scene, args.export_dir, context=ctx)
    return EXIT_BELOW_THRESHOLD if report.status == "below_threshold" else EXIT_OK


def _validate(args) -> int:
    scene = load_scene(args.scene)
    pending = sum(not t.installed for t in scene.targets)
    print(f"ok: {len(scene.as_built)} as-built, {len(scene.materials)} materials, "
          f"{len(scene.targets)} targets ({pending} pending), {len(scene.trajectories)} trajectories")
    return EXIT_OK


def _install(args) -> int:
    scene = update_after_install(load_scene(args.scene), args.target)
    save_scene(scene, args.out)
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"plan": _plan, "validate": _validate, "install": _install}[args.command]
    try:
        return handler(args)
    except (SceneError, PipelineError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
