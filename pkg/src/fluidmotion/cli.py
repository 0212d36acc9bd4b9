"""Command-line surface: batch animation, dataset evaluation, and the server.

Exit codes: 0 success, 2 validation failure, 3 I/O failure. Failures emit one
machine-readable JSON line on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .dataset import DatasetError, evaluate_directory, write_report
from .flow import Hint, HintError, ParamError
from .media import (
    ANIMATION_FORMATS,
    FlowFormatError,
    Project,
    ProjectError,
    load_project,
    write_animation,
    write_flo,
)
from .pipeline import PipelineError, resolve_project, run_animation
from .render import LOOP_MODES

log = logging.getLogger("fluidmotion")

EXIT_VALIDATION = 2
EXIT_IO = 3


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": {"type": kind, "message": message}}), file=sys.stderr)
    return code


def _parse_inline_hints(spec: str) -> list[Hint]:
    """Parse "x1,y1,x2,y2[,speed];..." into hints."""
    hints = []
    for i, chunk in enumerate(filter(None, (c.strip() for c in spec.split(";")))):
        parts = chunk.split(",")
        if len(parts) not in (4, 5):
            raise CliError(EXIT_VALIDATION,
                           f"hint {i}: expected x1,y1,x2,y2[,speed], got {chunk!r}")
        try:
            values = [float(p) for p in parts]
        except ValueError:
            raise CliError(EXIT_VALIDATION, f"hint {i}: non-numeric value in {chunk!r}")
        speed = values[4] if len(values) == 5 else 1.0
        hints.append(Hint(start=(values[0], values[1]), end=(values[2], values[3]),
                          speed=speed))
    if not hints:
        raise CliError(EXIT_VALIDATION, "no hints given")
    return hints


def _build_project(args) -> Project:
    hints_arg = args.hints
    if hints_arg and Path(hints_arg).is_file():
        project = load_project(hints_arg)
    else:
        if not args.image:
            raise CliError(EXIT_VALIDATION, "--image is required with inline hints")
        if not args.mask:
            raise CliError(EXIT_VALIDATION, "--mask is required with inline hints")
        project = Project(image=args.image, mask=args.mask,
                          hints=_parse_inline_hints(hints_arg))
    # Flags override whatever the project document carries.
    if args.image:
        project.image = args.image
    if args.mask:
        project.mask = args.mask
        project.mask_rle = None
    if args.sigma is not None:
        project.sigma = args.sigma
    if args.frames is not None:
        project.n_frames = args.frames
    if args.speed_scale is not None:
        project.speed_scale = args.speed_scale
    if args.format:
        project.format = args.format
    if args.loop:
        project.loop_mode = args.loop
    if args.levels is not None:
        project.pyramid_levels = args.levels
    if args.fps is not None:
        project.fps = args.fps
    if args.refined_flow:
        project.refined_flow = args.refined_flow
    for label, ref in (("image", project.image), ("mask", project.mask),
                       ("refined flow", project.refined_flow)):
        if ref is not None and not Path(ref).is_file():
            raise CliError(EXIT_IO, f"{label} not found: {ref}")
    return project


def _cmd_animate(args) -> int:
    project = _build_project(args)
    resolved = resolve_project(project)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    frames, field = run_animation(resolved, workers=args.workers)
    log.info("flow kind: %s%s", field.kind,
             " (refined flow supplied; dense synthesis bypassed)"
             if field.kind == "external_refined" else "")

    write_flo(field, out_dir / "dense_flow.flo")
    if resolved.config.format == "png_sequence":
        target = out_dir / "frames"
    else:
        suffix = "png" if resolved.config.format == "animated_png" else "gif"
        target = out_dir / f"animation.{suffix}"
    manifest = write_animation(frames, target, format=resolved.config.format,
                               fps=resolved.config.fps)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    log.info("wrote %d frames to %s", len(frames), target)
    return 0


def _cmd_evaluate(args) -> int:
    report = evaluate_directory(args.dataset, k=args.hints, sigma=args.sigma,
                                m_factor=args.m_factor, seed=args.seed)
    print(report.to_text())
    if args.report:
        write_report(report, args.report)
        log.info("report written to %s", args.report)
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(data_dir=args.data_dir, max_upload=args.max_upload)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fluidmotion",
                                     description="Animate fluid regions of a still image")
    sub = parser.add_subparsers(dest="command", required=True)

    p_anim = sub.add_parser("animate", help="render an animation from inputs or a project")
    p_anim.add_argument("--image", help="input image (overrides project)")
    p_anim.add_argument("--mask", help="grayscale mask image (overrides project)")
    p_anim.add_argument("--hints", required=True,
                        help="project JSON path, or inline 'x1,y1,x2,y2[,speed];...'")
    p_anim.add_argument("--sigma", type=float, help="hint falloff radius in pixels")
    p_anim.add_argument("--frames", type=int, help="number of output frames")
    p_anim.add_argument("--out", required=True, help="output directory")
    p_anim.add_argument("--format", choices=ANIMATION_FORMATS)
    p_anim.add_argument("--speed-scale", type=float, dest="speed_scale")
    p_anim.add_argument("--refined-flow", dest="refined_flow",
                        help=".flo file substituted for the synthesized dense flow")
    p_anim.add_argument("--loop", choices=LOOP_MODES)
    p_anim.add_argument("--levels", type=int, help="pyramid levels")
    p_anim.add_argument("--fps", type=float)
    p_anim.add_argument("--workers", type=int, default=1, help="parallel render processes")
    p_anim.set_defaults(func=_cmd_animate)

    p_eval = sub.add_parser("evaluate", help="score flow synthesis against a dataset")
    p_eval.add_argument("--dataset", required=True, help="dataset root directory")
    p_eval.add_argument("--hints", type=int, choices=(1, 3, 5), default=5,
                        help="hints per entry")
    p_eval.add_argument("--report", help="write JSON report here")
    p_eval.add_argument("--sigma", type=float)
    p_eval.add_argument("--m-factor", type=float, dest="m_factor", default=0.1)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.set_defaults(func=_cmd_evaluate)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=int(os.environ.get("FM_PORT", "8080")))
    p_serve.add_argument("--data-dir", dest="data_dir",
                         default=os.environ.get("FM_DATA_DIR"))
    p_serve.add_argument("--max-upload", dest="max_upload", type=int,
                         default=int(os.environ.get("FM_MAX_UPLOAD", str(32 * 1024 * 1024))))
    p_serve.set_defaults(func=_cmd_serve)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        return _fail("cli", str(exc), exc.code)
    except (HintError, ParamError, ProjectError, PipelineError, DatasetError,
            FlowFormatError, ValueError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_VALIDATION)
    except OSError as exc:
        return _fail("io", str(exc), EXIT_IO)


if __name__ == "__main__":
    sys.exit(main())
