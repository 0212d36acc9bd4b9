"""File formats: flow maps (.flo), images, masks, animations, project documents.

Flow files use the Middlebury interchange layout: a float32 magic tag
(202021.25), int32 width and height, then row-major interleaved (u, v)
float32 pairs. Everything is little-endian regardless of host byte order.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np
from PIL import Image

from .flow import FlowField, Hint

FLO_MAGIC = 202021.25
PROJECT_SCHEMA_VERSION = 1
ANIMATION_FORMATS = ("png_sequence", "animated_png", "gif")
LOOP_MODES = ("none", "crossfade")


class FlowFormatError(ValueError):
    """Malformed .flo payload (bad magic, bad dimensions, truncation)."""


class ProjectError(ValueError):
    """Project document violates the schema; message names the field path."""


def write_flo(flow, path) -> None:
    """Write to a path or a binary file object."""
    data = flow.data if isinstance(flow, FlowField) else np.asarray(flow)
    if data.ndim != 3 or data.shape[2] != 2:
        raise ValueError(f"flow must have shape (H, W, 2), got {data.shape}")
    h, w = data.shape[:2]
    payload = struct.pack("<fii", FLO_MAGIC, w, h) + \
        np.ascontiguousarray(data, dtype="<f4").tobytes()
    if hasattr(path, "write"):
        path.write(payload)
    else:
        with open(path, "wb") as f:
            f.write(payload)


def _read_flo_stream(f, label, kind) -> FlowField:
    header = f.read(12)
    if len(header) < 12:
        raise FlowFormatError(f"{label}: truncated header")
    magic, w, h = struct.unpack("<fii", header)
    if magic != FLO_MAGIC:
        raise FlowFormatError(f"{label}: bad magic {magic!r}")
    if w <= 0 or h <= 0:
        raise FlowFormatError(f"{label}: bad dimensions {w}x{h}")
    payload = f.read(8 * w * h)
    if len(payload) < 8 * w * h:
        raise FlowFormatError(f"{label}: truncated payload "
                              f"({len(payload)} of {8 * w * h} bytes)")
    data = np.frombuffer(payload, dtype="<f4").reshape(h, w, 2)
    return FlowField(data, kind=kind)


def read_flo(path, kind: str = "external_refined") -> FlowField:
    """Read from a path or a binary file object."""
    if hasattr(path, "read"):
        return _read_flo_stream(path, "<stream>", kind)
    with open(path, "rb") as f:
        return _read_flo_stream(f, str(path), kind)


def read_image(path) -> np.ndarray:
    """Load an image as (H, W, 3) float32 in [0, 1]. 16-bit grayscale widens."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float32) / 65535.0
            return np.repeat(arr[..., None], 3, axis=2)
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        return arr


def write_image(image: np.ndarray, path, bit_depth: int = 8) -> None:
    """Write a float [0, 1] image. 8-bit accepts any channel count PIL knows;
    16-bit output is single-channel only."""
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[..., None]
    clipped = np.clip(image.astype(np.float64), 0.0, 1.0)
    if bit_depth == 8:
        q = np.round(clipped * 255.0).astype(np.uint8)
        Image.fromarray(q[..., 0] if q.shape[2] == 1 else q).save(path)
    elif bit_depth == 16:
        if image.shape[2] != 1:
            raise ValueError("16-bit output supports single-channel images only")
        q = np.round(clipped[..., 0] * 65535.0).astype(np.uint16)
        Image.fromarray(q).save(path)
    else:
        raise ValueError(f"unsupported bit depth {bit_depth}")


def read_mask(path) -> np.ndarray:
    """Load a grayscale mask as (H, W) float32 in [0, 1]."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float32) / 255.0


def write_mask(mask: np.ndarray, path) -> None:
    q = np.round(np.clip(np.asarray(mask, dtype=np.float64), 0.0, 1.0) * 255.0)
    Image.fromarray(q.astype(np.uint8), mode="L").save(path)


def _to_pil_frames(frames) -> list[Image.Image]:
    if len(frames) == 0:
        raise ValueError("no frames to write")
    shape = np.asarray(frames[0]).shape
    out = []
    for i, frame in enumerate(frames):
        arr = np.asarray(frame)
        if arr.shape != shape:
            raise ValueError(f"frame {i} shape {arr.shape} differs from frame 0 {shape}")
        q = np.round(np.clip(arr.astype(np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
        out.append(Image.fromarray(q))
    return out


def write_animation(frames, path, format: str = "png_sequence", fps: float = 30.0) -> dict:
    """Write frames in the requested container and return a manifest
    (format, fps, file list, per-frame durations in seconds)."""
    if format not in ANIMATION_FORMATS:
        raise ValueError(f"unknown animation format {format!r}")
    pil_frames = _to_pil_frames(frames)
    path = Path(path)
    duration_s = 1.0 / fps
    h, w = np.asarray(frames[0]).shape[:2]
    manifest = {
        "format": format,
        "fps": fps,
        "frame_count": len(pil_frames),
        "width": w,
        "height": h,
        "durations": [duration_s] * len(pil_frames),
    }

    if format == "png_sequence":
        path.mkdir(parents=True, exist_ok=True)
        names = []
        for i, im in enumerate(pil_frames):
            name = f"{i:04d}.png"
            im.save(path / name)
            names.append(name)
        manifest["files"] = names
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        first, rest = pil_frames[0], pil_frames[1:]
        kwargs = dict(save_all=True, append_images=rest,
                      duration=max(1, round(1000.0 / fps)), loop=0)
        if format == "animated_png":
            first.save(path, format="PNG", **kwargs)
        else:  # gif; PIL quantizes to a 256-color palette
            first.save(path, format="GIF", **kwargs)
        manifest["files"] = [path.name]
    return manifest


def encode_mask_rle(mask: np.ndarray) -> dict:
    """Run-length encode a mask, binarized at 0.5, row-major, zero run first."""
    mask = np.asarray(mask)
    flat = (mask.ravel() >= 0.5).astype(np.int8)
    counts = []
    current, run = 0, 0
    for v in flat:
        if v == current:
            run += 1
        else:
            counts.append(run)
            current, run = v, 1
    counts.append(run)
    return {"width": int(mask.shape[1]), "height": int(mask.shape[0]), "counts": counts}


def decode_mask_rle(rle: dict) -> np.ndarray:
    w, h = int(rle["width"]), int(rle["height"])
    total = w * h
    flat = np.zeros(total, dtype=np.float32)
    pos, value = 0, 0.0
    for run in rle["counts"]:
        if run < 0 or pos + run > total:
            raise ProjectError("mask.rle.counts: runs exceed width*height")
        flat[pos:pos + run] = value
        pos += run
        value = 1.0 - value
    if pos != total:
        raise ProjectError("mask.rle.counts: runs do not cover width*height")
    return flat.reshape(h, w)


@dataclass
class Project:
    """Persistence unit: input references, hints and all pipeline parameters."""

    image: str
    hints: list[Hint] = dataclass_field(default_factory=list)
    mask: str | None = None
    mask_rle: dict | None = None
    sigma: float | None = None  # None -> 10% of image diagonal
    n_frames: int = 60
    speed_scale: float = 1.0
    loop_mode: str = "none"
    pyramid_levels: int = 4
    width: int | None = None
    height: int | None = None
    fps: float = 30.0
    format: str = "png_sequence"
    refined_flow: str | None = None
    seed: int = 0


def _expect(obj: dict, path: str, allowed: dict[str, bool]) -> None:
    for key in obj:
        if key not in allowed:
            raise ProjectError(f"unknown field: {path}{key}")
    for key, required in allowed.items():
        if required and key not in obj:
            raise ProjectError(f"missing field: {path}{key}")


def _num(value, path: str, allow_none: bool = False) -> float | None:
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ProjectError(f"{path}: expected a number, got {type(value).__name__}")
    if not math.isfinite(value):
        raise ProjectError(f"{path}: must be finite")
    return float(value)


def _point(value, path: str) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ProjectError(f"{path}: expected [x, y]")
    return (_num(value[0], path + "[0]"), _num(value[1], path + "[1]"))


def _parse_hints(raw, path: str) -> list[Hint]:
    if not isinstance(raw, list):
        raise ProjectError(f"{path}: expected an array")
    hints = []
    for i, item in enumerate(raw):
        hp = f"{path}[{i}]."
        if not isinstance(item, dict):
            raise ProjectError(f"{path}[{i}]: expected an object")
        _expect(item, hp, {"start": True, "end": True, "speed": False})
        hints.append(Hint(start=_point(item["start"], hp + "start"),
                          end=_point(item["end"], hp + "end"),
                          speed=_num(item.get("speed", 1.0), hp + "speed")))
    return hints


def project_from_dict(doc: dict) -> Project:
    if not isinstance(doc, dict):
        raise ProjectError("document root: expected an object")
    _expect(doc, "", {"schema_version": True, "image": True, "mask": False,
                      "hints": True, "params": False, "render": False,
                      "refined_flow": False, "seed": False})
    version = doc["schema_version"]
    if version != PROJECT_SCHEMA_VERSION:
        raise ProjectError(f"schema_version: unsupported version {version!r} "
                           f"(this build reads version {PROJECT_SCHEMA_VERSION})")
    if not isinstance(doc["image"], str):
        raise ProjectError("image: expected a path string")

    mask_path = None
    mask_rle = None
    raw_mask = doc.get("mask")
    if raw_mask is not None:
        if not isinstance(raw_mask, dict):
            raise ProjectError("mask: expected an object with 'path' or 'rle'")
        _expect(raw_mask, "mask.", {"path": False, "rle": False})
        if ("path" in raw_mask) == ("rle" in raw_mask):
            raise ProjectError("mask: exactly one of 'path' or 'rle' required")
        if "path" in raw_mask:
            if not isinstance(raw_mask["path"], str):
                raise ProjectError("mask.path: expected a path string")
            mask_path = raw_mask["path"]
        else:
            rle = raw_mask["rle"]
            if not isinstance(rle, dict):
                raise ProjectError("mask.rle: expected an object")
            _expect(rle, "mask.rle.", {"width": True, "height": True, "counts": True})
            if not isinstance(rle["counts"], list) or not all(
                    isinstance(cnt, int) and not isinstance(cnt, bool) for cnt in rle["counts"]):
                raise ProjectError("mask.rle.counts: expected an array of integers")
            mask_rle = rle

    hints = _parse_hints(doc["hints"], "hints")

    params = doc.get("params", {})
    if not isinstance(params, dict):
        raise ProjectError("params: expected an object")
    _expect(params, "params.", {"sigma": False, "n_frames": False, "speed_scale": False})
    sigma = _num(params.get("sigma"), "params.sigma", allow_none=True)
    n_frames = params.get("n_frames", 60)
    if isinstance(n_frames, bool) or not isinstance(n_frames, int):
        raise ProjectError("params.n_frames: expected an integer")
    if n_frames < 1:
        raise ProjectError("params.n_frames: must be >= 1")
    speed_scale = _num(params.get("speed_scale", 1.0), "params.speed_scale")

    render = doc.get("render", {})
    if not isinstance(render, dict):
        raise ProjectError("render: expected an object")
    _expect(render, "render.", {"loop_mode": False, "pyramid_levels": False,
                                "width": False, "height": False, "fps": False,
                                "format": False})
    loop_mode = render.get("loop_mode", "none")
    if loop_mode not in LOOP_MODES:
        raise ProjectError(f"render.loop_mode: expected one of {LOOP_MODES}, got {loop_mode!r}")
    levels = render.get("pyramid_levels", 4)
    if isinstance(levels, bool) or not isinstance(levels, int) or levels < 1:
        raise ProjectError("render.pyramid_levels: expected an integer >= 1")
    out_format = render.get("format", "png_sequence")
    if out_format not in ANIMATION_FORMATS:
        raise ProjectError(f"render.format: expected one of {ANIMATION_FORMATS}, got {out_format!r}")
    dims: dict[str, int | None] = {}
    for key in ("width", "height"):
        value = render.get(key)
        if value is not None and (isinstance(value, bool) or not isinstance(value, int) or value < 1):
            raise ProjectError(f"render.{key}: expected a positive integer")
        dims[key] = value
    fps = _num(render.get("fps", 30.0), "render.fps")
    if fps <= 0:
        raise ProjectError("render.fps: must be > 0")

    refined = doc.get("refined_flow")
    if refined is not None and not isinstance(refined, str):
        raise ProjectError("refined_flow: expected a path string")
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ProjectError("seed: expected an integer")

    return Project(image=doc["image"], hints=hints, mask=mask_path, mask_rle=mask_rle,
                   sigma=sigma, n_frames=n_frames, speed_scale=speed_scale,
                   loop_mode=loop_mode, pyramid_levels=levels,
                   width=dims["width"], height=dims["height"], fps=fps,
                   format=out_format, refined_flow=refined, seed=seed)


def project_to_dict(project: Project) -> dict:
    mask: dict | None = None
    if project.mask is not None:
        mask = {"path": project.mask}
    elif project.mask_rle is not None:
        mask = {"rle": project.mask_rle}
    return {
        "schema_version": PROJECT_SCHEMA_VERSION,
        "image": project.image,
        "mask": mask,
        "hints": [{"start": list(h.start), "end": list(h.end), "speed": h.speed}
                  for h in project.hints],
        "params": {"sigma": project.sigma, "n_frames": project.n_frames,
                   "speed_scale": project.speed_scale},
        "render": {"loop_mode": project.loop_mode, "pyramid_levels": project.pyramid_levels,
                   "width": project.width, "height": project.height,
                   "fps": project.fps, "format": project.format},
        "refined_flow": project.refined_flow,
        "seed": project.seed,
    }


def save_project(project: Project, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(project_to_dict(project), f, indent=2)
        f.write("\n")


def load_project(path, check_references: bool = True) -> Project:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ProjectError(f"{path}: not valid JSON: {exc}") from exc
    project = project_from_dict(doc)
    base = path.parent
    project.image = str((base / project.image).resolve())
    if project.mask is not None:
        project.mask = str((base / project.mask).resolve())
    if project.refined_flow is not None:
        project.refined_flow = str((base / project.refined_flow).resolve())
    if check_references:
        for label, ref in (("image", project.image), ("mask.path", project.mask),
                           ("refined_flow", project.refined_flow)):
            if ref is not None and not Path(ref).is_file():
                raise ProjectError(f"{label}: reference not resolvable: {ref}")
    return project
