"""Flow-field construction from motion hints, and time integration.

The motion model is a single constant per-pixel velocity map: the same
displacement is applied between every pair of consecutive frames, and the
cumulative displacement from frame 0 to frame t is obtained by composing the
field along pixel trajectories (:func:`euler_integrate`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FLOW_KINDS = ("sparse", "dense", "integrated", "external_refined")


class ParamError(ValueError):
    """Invalid parameter value (sigma, frame count, scale factor...)."""


class HintError(ValueError):
    """Invalid motion hint; carries the index of the offending hint."""

    def __init__(self, index: int, message: str):
        super().__init__(f"hint {index}: {message}")
        self.index = index


@dataclass(frozen=True)
class Hint:
    """One user-drawn arrow: start/end in image coordinates plus a speed multiplier.

    Coordinates are continuous (x, y) in pixels. The motion the hint encodes is
    the displacement (end - start) * speed, in pixels per frame.
    """

    start: tuple[float, float]
    end: tuple[float, float]
    speed: float = 1.0

    @property
    def flow(self) -> tuple[float, float]:
        return (
            (self.end[0] - self.start[0]) * self.speed,
            (self.end[1] - self.start[1]) * self.speed,
        )


@dataclass(frozen=True)
class FlowParams:
    """Parameters of dense-flow synthesis.

    sigma is the falloff radius (pixels) of the distance weighting;
    speed_scale is a global multiplier applied to every hint's flow vector.
    """

    sigma: float
    n_frames: int = 60
    speed_scale: float = 1.0

    def __post_init__(self):
        if not (self.sigma > 0):
            raise ParamError(f"sigma must be > 0, got {self.sigma}")
        if self.n_frames < 1:
            raise ParamError(f"n_frames must be >= 1, got {self.n_frames}")
        if not math.isfinite(self.speed_scale):
            raise ParamError(f"speed_scale must be finite, got {self.speed_scale}")


def default_sigma(width: int, height: int) -> float:
    """Default falloff radius: 10% of the image diagonal."""
    return 0.1 * math.hypot(width, height)


@dataclass
class FlowField:
    """Dense per-pixel (u, v) displacement map, in pixels per frame.

    data has shape (H, W, 2), float64, row-major, with data[y, x] = (u, v).
    kind records provenance: hint raster ("sparse"), synthesized ("dense"),
    time-integrated ("integrated") or loaded from an external refinement
    ("external_refined").
    """

    data: np.ndarray
    kind: str = "dense"

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] != 2:
            raise ValueError(f"flow data must have shape (H, W, 2), got {self.data.shape}")
        if self.kind not in FLOW_KINDS:
            raise ValueError(f"unknown flow kind {self.kind!r}")
        if not np.isfinite(self.data).all():
            raise ValueError("flow field contains non-finite values")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.data[..., 0], self.data[..., 1])


def _check_hint_bounds(i: int, hint: Hint, width: int, height: int) -> None:
    for label, (x, y) in (("start", hint.start), ("end", hint.end)):
        if not (math.isfinite(x) and math.isfinite(y)):
            raise HintError(i, f"{label} is not finite")
        if not (0 <= x < width and 0 <= y < height):
            raise HintError(i, f"{label} ({x}, {y}) outside image bounds {width}x{height}")
    if not (math.isfinite(hint.speed) and hint.speed >= 0):
        raise HintError(i, f"speed must be >= 0, got {hint.speed}")


def sparse_flow_from_hints(hints: list[Hint], width: int, height: int) -> FlowField:
    """Rasterize hints into a flow map that is nonzero only at hint start pixels.

    Start coordinates are rounded to the nearest pixel; two hints landing on
    the same pixel are ambiguous and rejected.
    """
    data = np.zeros((height, width, 2), dtype=np.float64)
    taken: dict[tuple[int, int], int] = {}
    for i, hint in enumerate(hints):
        _check_hint_bounds(i, hint, width, height)
        px = min(int(math.floor(hint.start[0] + 0.5)), width - 1)
        py = min(int(math.floor(hint.start[1] + 0.5)), height - 1)
        if (px, py) in taken:
            raise HintError(i, f"rounds to pixel ({px}, {py}) already claimed by hint {taken[(px, py)]}")
        taken[(px, py)] = i
        data[py, px] = hint.flow
    return FlowField(data, kind="sparse")


def dense_flow_from_hints(hints: list[Hint], mask: np.ndarray, params: FlowParams) -> FlowField:
    """Spread hint motions over the masked region by distance-weighted averaging.

    Every masked pixel receives the average of all hint flow vectors weighted
    by exp(-(d/sigma)^2), where d is the Euclidean distance to each hint's
    (continuous) start position. Pixels outside the mask are exactly zero.
    """
    if not hints:
        raise ParamError("no hints")
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    inside = mask > 0
    if not inside.any():
        raise ParamError("mask selects no pixels")
    height, width = mask.shape

    # Canonical hint order makes the float accumulation independent of the
    # order the caller supplied the hints in.
    ordered = sorted(hints, key=lambda h: (h.start, h.end, h.speed))
    starts = np.array([h.start for h in ordered], dtype=np.float64)  # (K, 2)
    flows = np.array([h.flow for h in ordered], dtype=np.float64) * params.speed_scale

    ys, xs = np.nonzero(inside)
    dx = xs[:, None] - starts[None, :, 0]
    dy = ys[:, None] - starts[None, :, 1]
    expo = -(dx * dx + dy * dy) / (params.sigma * params.sigma)  # (P, K)
    # Shift by the per-pixel max exponent; the ratio is unchanged and the
    # denominator stays >= 1 however far a pixel is from every hint.
    expo -= expo.max(axis=1, keepdims=True)
    w = np.exp(expo)
    out = (w @ flows) / w.sum(axis=1)[:, None]

    data = np.zeros((height, width, 2), dtype=np.float64)
    data[ys, xs] = out
    return FlowField(data, kind="dense")


def sample_bilinear(data: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample data (H, W[, C]) at continuous positions, clamping to the border.

    x and y may have any common shape; the result has that shape plus the
    channel axis of data, in float64.
    """
    h, w = data.shape[:2]
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, w - 1.0)
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, h - 1.0)
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    ix0 = x0.astype(np.intp)
    iy0 = y0.astype(np.intp)
    ix1 = np.minimum(ix0 + 1, w - 1)
    iy1 = np.minimum(iy0 + 1, h - 1)

    d = data.astype(np.float64, copy=False)
    a = d[iy0, ix0]
    b = d[iy0, ix1]
    c = d[iy1, ix0]
    e = d[iy1, ix1]
    if data.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    return (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + e * fx) * fy


def _integrate(field: FlowField, t: int, keep_all: bool) -> list[np.ndarray]:
    # Compiled per-pixel recursion; its arithmetic mirrors
    # acc + sample_bilinear(field.data, x + acc_u, y + acc_v) operation for
    # operation, so it matches the naive recursion bit for bit.
    if t < 0:
        raise ParamError(f"frame index must be >= 0, got {t} "
                         "(integrate the negated field for backward motion)")
    from ._kernels import integrate_last, integrate_steps

    h, w = field.height, field.width
    if keep_all:
        out = np.zeros((t + 1, h * w, 2), dtype=np.float64)
        integrate_steps(field.data, t, out)
        return [out[i].reshape(h, w, 2) for i in range(t + 1)]
    acc = np.zeros((h * w, 2), dtype=np.float64)
    integrate_last(field.data, t, acc)
    return [acc.reshape(h, w, 2)]


def euler_integrate(field: FlowField, t: int) -> FlowField:
    """Cumulative displacement from frame 0 to frame t.

    Each step advances by the field value sampled at the currently displaced
    position (bilinear, border-clamped): F_t = F_{t-1} + field(id + F_{t-1}).
    """
    return FlowField(_integrate(field, t, keep_all=False)[-1], kind="integrated")


def euler_integrate_sequence(field: FlowField, n: int) -> list[FlowField]:
    """All cumulative displacements for t = 0..n, computed in one pass."""
    return [FlowField(d, kind="integrated") for d in _integrate(field, n, keep_all=True)]


def negate(f: FlowField) -> FlowField:
    return FlowField(-f.data, kind=f.kind)


def scale(f: FlowField, s: float) -> FlowField:
    if not math.isfinite(s):
        raise ParamError(f"scale factor must be finite, got {s}")
    return FlowField(f.data * s, kind=f.kind)
