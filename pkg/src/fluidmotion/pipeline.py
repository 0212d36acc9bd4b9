"""End-to-end orchestration shared by the CLI and the HTTP service.

Resolving a project loads and resizes the inputs, synthesizes (or loads) the
flow field, and hands everything to the renderer; both operational surfaces
go through this module so identical projects produce identical frames.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flow import (
    FlowField,
    FlowParams,
    Hint,
    _check_hint_bounds,
    default_sigma,
    dense_flow_from_hints,
)
from .media import Project, decode_mask_rle, read_flo, read_image, read_mask
from .render import RenderConfig, render_sequence, resize_bilinear


class PipelineError(ValueError):
    pass


@dataclass
class ResolvedProject:
    """A project with all references loaded and scaled to output resolution."""

    image: np.ndarray  # (H, W, 3) float32
    mask: np.ndarray  # (H, W) float32
    hints: list[Hint]
    params: FlowParams
    config: RenderConfig
    refined: FlowField | None = None

    def flow_field(self) -> FlowField:
        """The field that drives rendering: the synthesized dense flow, or an
        externally refined field substituted verbatim."""
        if self.refined is not None:
            return self.refined
        return dense_flow_from_hints(self.hints, self.mask, self.params)


def _scale_hints(hints: list[Hint], sx: float, sy: float) -> list[Hint]:
    return [
        Hint(start=(h.start[0] * sx, h.start[1] * sy),
             end=(h.end[0] * sx, h.end[1] * sy), speed=h.speed)
        for h in hints
    ]


def resolve_project(project: Project) -> ResolvedProject:
    image = read_image(project.image)
    if project.mask is not None:
        mask = read_mask(project.mask)
    elif project.mask_rle is not None:
        mask = decode_mask_rle(project.mask_rle)
    else:
        raise PipelineError("project has no mask (animation requires one)")
    h, w = image.shape[:2]
    if mask.shape != (h, w):
        raise PipelineError(f"mask {mask.shape[1]}x{mask.shape[0]} does not match "
                            f"image {w}x{h}")

    hints = project.hints
    for i, hint in enumerate(hints):
        _check_hint_bounds(i, hint, w, h)
    out_w = project.width or w
    out_h = project.height or h
    if (out_w, out_h) != (w, h):
        if abs(out_w / out_h - w / h) > 0.01:
            raise PipelineError(f"output {out_w}x{out_h} changes the aspect ratio "
                                f"of the {w}x{h} input")
        image = resize_bilinear(image, out_h, out_w)
        mask = resize_bilinear(mask, out_h, out_w)
        hints = _scale_hints(hints, out_w / w, out_h / h)

    sigma = project.sigma if project.sigma is not None else default_sigma(out_w, out_h)
    params = FlowParams(sigma=sigma, n_frames=project.n_frames,
                        speed_scale=project.speed_scale)
    config = RenderConfig(n_frames=project.n_frames, loop_mode=project.loop_mode,
                          pyramid_levels=project.pyramid_levels,
                          width=out_w, height=out_h, fps=project.fps,
                          format=project.format)

    refined = None
    if project.refined_flow is not None:
        refined = read_flo(project.refined_flow, kind="external_refined")
        if (refined.height, refined.width) != (out_h, out_w):
            raise PipelineError(f"refined flow {refined.width}x{refined.height} does "
                                f"not match output resolution {out_w}x{out_h}")

    return ResolvedProject(image=image,
                           mask=np.clip(mask, 0.0, 1.0).astype(np.float32),
                           hints=hints, params=params, config=config, refined=refined)


def run_animation(resolved: ResolvedProject, workers: int = 1,
                  progress=None) -> tuple[list[np.ndarray], FlowField]:
    """Render the full sequence; returns the frames and the field that drove them."""
    field = resolved.flow_field()
    frames = render_sequence(resolved.image, resolved.mask, field,
                             resolved.config, workers=workers, progress=progress)
    return frames, field
