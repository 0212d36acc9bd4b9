"""Forward warping (splatting) of rasters along a flow field.

Each source pixel is scattered to its flow-displaced target position; its
value is distributed over the four neighboring integer pixels with bilinear
weights, additionally weighted by exp(Z) of a per-pixel importance map, and
the per-target accumulation is normalized by the total weight (a softmax over
colliding sources). Sources that land outside the grid are dropped; targets
that receive nothing are voids.

Accumulation runs in double precision with a fixed source-major order, so the
compiled scatter kernel and the naive reference loop agree bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import splat_accumulate
from .flow import FlowField

#: A target pixel whose accumulated weight is at or below this is a void.
VOID_EPS = 1e-8


@dataclass
class SplatResult:
    """Normalized warp output plus the raw per-target accumulation weight.

    colors is (H, W, C) float32, zero at voids. coverage is (H, W) float64 and
    holds the pre-normalization weight total in max-shifted units (the
    importance map is exponentiated as exp(Z - max Z) for stability, so
    coverage is invariant to constant shifts of Z).
    """

    colors: np.ndarray
    coverage: np.ndarray

    @property
    def voids(self) -> np.ndarray:
        return self.coverage <= VOID_EPS


def _as_flow_array(flow) -> np.ndarray:
    data = flow.data if isinstance(flow, FlowField) else np.asarray(flow, dtype=np.float64)
    if data.ndim != 3 or data.shape[2] != 2:
        raise ValueError(f"flow must have shape (H, W, 2), got {data.shape}")
    if not np.isfinite(data).all():
        raise ValueError("non-finite flow")
    return np.ascontiguousarray(data, dtype=np.float64)


def _check_dims(src: np.ndarray, flow: np.ndarray, z: np.ndarray | None) -> None:
    h, w = src.shape[:2]
    if flow.shape[:2] != (h, w):
        raise ValueError(f"flow shape {flow.shape[:2]} does not match source {h}x{w}")
    if z is not None and z.shape != (h, w):
        raise ValueError(f"importance map shape {z.shape} does not match source {h}x{w}")


def exp_importance(z: np.ndarray | None) -> np.ndarray | None:
    """exp(Z) with the global maximum shifted out for numerical stability."""
    if z is None:
        return None
    z = np.asarray(z, dtype=np.float64)
    return np.exp(z - z.max())


def accumulate_into(flow: np.ndarray, payload: np.ndarray, weight: np.ndarray,
                    h: int, w: int, num: np.ndarray, den: np.ndarray) -> None:
    """Scatter one source raster into shared (H*W)-flat accumulators.

    payload holds source values premultiplied by the per-source weight;
    weight is that same per-source weight, entering the denominator.
    """
    splat_accumulate(flow, payload, weight, h, w, num, den)


def _normalize(num: np.ndarray, den: np.ndarray, h: int, w: int, c: int) -> SplatResult:
    covered = den > VOID_EPS
    colors = np.zeros((h * w, c), dtype=np.float64)
    colors[covered] = num[covered] / den[covered, None]
    return SplatResult(colors=colors.reshape(h, w, c).astype(np.float32),
                       coverage=den.reshape(h, w))


def _prepare(src: np.ndarray):
    src = np.asarray(src)
    squeeze = src.ndim == 2
    if squeeze:
        src = src[..., None]
    return src, squeeze


def softmax_splat(src: np.ndarray, flow, z: np.ndarray | None = None) -> SplatResult:
    """Forward-warp src by flow, blending colliding sources by exp(z) weight."""
    src, squeeze = _prepare(src)
    flow_data = _as_flow_array(flow)
    _check_dims(src, flow_data, z)
    h, w = src.shape[:2]
    c = src.shape[2]

    ez = exp_importance(z)
    payload = np.ascontiguousarray(src.reshape(-1, c), dtype=np.float64)
    if ez is None:
        weight = np.ones(h * w, dtype=np.float64)
    else:
        weight = np.ascontiguousarray(ez.reshape(-1))
        payload = payload * weight[:, None]

    num = np.zeros((h * w, c), dtype=np.float64)
    den = np.zeros(h * w, dtype=np.float64)
    accumulate_into(flow_data, payload, weight, h, w, num, den)
    result = _normalize(num, den, h, w, c)
    if squeeze:
        result.colors = result.colors[..., 0]
    return result


def weighted_symmetric_splat(first: np.ndarray, last: np.ndarray,
                             fwd_flow, bwd_flow,
                             w_first: float, w_last: float,
                             z: np.ndarray | None = None) -> SplatResult:
    """Splat two source rasters with explicit branch weights into one output.

    Both branches share a single normalization denominator, so wherever only
    one branch lands its content appears at full strength regardless of its
    (nonzero) weight, and overlaps blend in the w_first : w_last ratio.
    """
    first, squeeze = _prepare(first)
    last, _ = _prepare(last)
    if first.shape != last.shape:
        raise ValueError(f"first/last shapes differ: {first.shape} vs {last.shape}")
    fwd = _as_flow_array(fwd_flow)
    bwd = _as_flow_array(bwd_flow)
    _check_dims(first, fwd, z)
    _check_dims(last, bwd, z)
    h, w = first.shape[:2]
    c = first.shape[2]

    ez = exp_importance(z)
    ez_flat = np.ones(h * w, dtype=np.float64) if ez is None else ez.reshape(-1)
    num = np.zeros((h * w, c), dtype=np.float64)
    den = np.zeros(h * w, dtype=np.float64)
    for src, flow, branch_w in ((first, fwd, w_first), (last, bwd, w_last)):
        weight = branch_w * ez_flat
        payload = src.reshape(-1, c).astype(np.float64) * weight[:, None]
        accumulate_into(flow, payload, weight, h, w, num, den)
    result = _normalize(num, den, h, w, c)
    if squeeze:
        result.colors = result.colors[..., 0]
    return result


def symmetric_splat(first: np.ndarray, last: np.ndarray,
                    fwd_flow, bwd_flow, t: float, n: float,
                    z: np.ndarray | None = None,
                    literal_weights: bool = False) -> SplatResult:
    """Blend a forward-warped first frame and backward-warped last frame.

    The first frame (warped by the 0->t flow) is weighted 1 - t/n and the last
    frame (warped by the 0->(t-n) flow) t/n, so t=0 reproduces the first frame
    and t=n the last. literal_weights swaps the two factors, which makes the
    sequence start at the last frame instead.
    """
    if not 0 <= t <= n:
        raise ValueError(f"frame index t={t} outside [0, {n}]")
    if n <= 0:
        raise ValueError(f"frame count n must be positive, got {n}")
    alpha = t / n
    w_first, w_last = (alpha, 1.0 - alpha) if literal_weights else (1.0 - alpha, alpha)
    return weighted_symmetric_splat(first, last, fwd_flow, bwd_flow, w_first, w_last, z)


def brute_force_splat(src: np.ndarray, flow, z: np.ndarray | None = None) -> SplatResult:
    """Reference implementation of softmax_splat: plain per-pixel loops.

    Visits sources row-major and their four corners in the same order as the
    compiled kernel, so results match it bit for bit. Only suitable for small
    rasters; this is the test oracle.
    """
    src, squeeze = _prepare(src)
    flow_data = _as_flow_array(flow)
    _check_dims(src, flow_data, z)
    h, w = src.shape[:2]
    c = src.shape[2]

    ez = exp_importance(z)
    src64 = src.astype(np.float64)
    vals = src64 if ez is None else src64 * ez[..., None]
    num = np.zeros((h, w, c), dtype=np.float64)
    den = np.zeros((h, w), dtype=np.float64)
    for y in range(h):
        for x in range(w):
            tx = min(max(x + flow_data[y, x, 0], -2.0), w + 1.0)
            ty = min(max(y + flow_data[y, x, 1], -2.0), h + 1.0)
            fx = tx - math.floor(tx)
            fy = ty - math.floor(ty)
            x0 = int(math.floor(tx))
            y0 = int(math.floor(ty))
            for dx, dy in ((0, 0), (1, 0), (0, 1), (1, 1)):
                xi = x0 + dx
                yi = y0 + dy
                if not (0 <= xi < w and 0 <= yi < h):
                    continue
                bw = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
                den[yi, xi] += bw if ez is None else ez[y, x] * bw
                num[yi, xi] += vals[y, x] * bw

    result = _normalize(num.reshape(-1, c), den.reshape(-1), h, w, c)
    if squeeze:
        result.colors = result.colors[..., 0]
    return result


def luminance_importance(image: np.ndarray, gamma: float) -> np.ndarray:
    """Importance map proportional to pixel luminance (Rec. 709 for RGB)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3 and image.shape[2] == 3:
        luma = image @ np.array([0.2126, 0.7152, 0.0722])
    elif image.ndim == 3:
        luma = image.mean(axis=2)
    else:
        luma = image
    return gamma * luma
