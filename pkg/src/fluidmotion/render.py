"""Frame synthesis: multi-scale warping, void filling, compositing, looping.

Each frame warps a low-pass pyramid of the input image forward by the
integrated flow and backward by the negated-field integral, blends the two
with time-dependent weights, fills pixels that received no contribution from
the next-coarser level, and composites the animated layer over the untouched
input through the user mask.
"""
from __future__ import annotations

import multiprocessing
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .flow import FlowField, euler_integrate, negate, euler_integrate_sequence, sample_bilinear
from .splat import VOID_EPS, accumulate_into, exp_importance, luminance_importance

LOOP_MODES = ("none", "crossfade")


@dataclass(frozen=True)
class RenderConfig:
    n_frames: int = 60
    loop_mode: str = "none"
    pyramid_levels: int = 4
    width: int | None = None
    height: int | None = None
    fps: float = 30.0
    format: str = "png_sequence"
    z_gamma: float = 0.0  # importance = z_gamma * luminance; 0 = plain average
    literal_symmetric_weights: bool = False

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError(f"n_frames must be >= 1, got {self.n_frames}")
        if self.pyramid_levels < 1:
            raise ValueError(f"pyramid_levels must be >= 1, got {self.pyramid_levels}")
        if self.loop_mode not in LOOP_MODES:
            raise ValueError(f"loop_mode must be one of {LOOP_MODES}, got {self.loop_mode!r}")


def _blur_121(channel_img: np.ndarray) -> np.ndarray:
    """Separable 5-tap binomial low-pass with edge-replicated borders."""
    out = channel_img
    for axis in (0, 1):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (2, 2)
        p = np.pad(out, pad, mode="edge")
        n = out.shape[axis]

        def sl(start, _n=n, _axis=axis, _ndim=out.ndim):
            return tuple(slice(start, start + _n) if a == _axis else slice(None)
                         for a in range(_ndim))

        out = (p[sl(0)] + 4.0 * p[sl(1)] + 6.0 * p[sl(2)] + 4.0 * p[sl(3)] + p[sl(4)]) / 16.0
    return out


def gaussian_pyramid(image: np.ndarray, levels: int) -> list[np.ndarray]:
    """Level 0 is the image itself; each next level is blurred and decimated
    by 2 (ceil dimensions)."""
    image = np.asarray(image, dtype=np.float32)
    pyr = [image]
    for _ in range(levels - 1):
        prev = pyr[-1]
        if min(prev.shape[:2]) < 2:
            break
        pyr.append(_blur_121(prev)[::2, ::2].astype(np.float32))
    return pyr


def _halve_flow(data: np.ndarray) -> np.ndarray:
    h, w = data.shape[:2]
    if h % 2 or w % 2:
        data = np.pad(data, ((0, h % 2), (0, w % 2), (0, 0)), mode="edge")
    pooled = (data[0::2, 0::2] + data[1::2, 0::2] + data[0::2, 1::2] + data[1::2, 1::2])
    return pooled * 0.125  # 2x2 average, vectors scaled with the grid


def downsample_flow(flow: FlowField | np.ndarray, times: int) -> np.ndarray:
    """Average-pool a flow map `times` octaves down, scaling vectors to match."""
    data = flow.data if isinstance(flow, FlowField) else np.asarray(flow, dtype=np.float64)
    for _ in range(times):
        data = _halve_flow(data)
    return data


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize by sampling at output pixel centers (half-pixel aligned)."""
    image = np.asarray(image)
    h, w = image.shape[:2]
    if (h, w) == (out_h, out_w):
        return image.copy()
    x = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    y = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    xx, yy = np.meshgrid(x, y)
    return sample_bilinear(image, xx, yy).astype(image.dtype, copy=False)


class _FrameRenderer:
    """Per-sequence state shared by every frame: image pyramid, importance
    maps, mask, and scatter scratch space. Pickled once into each worker
    process (scratch buffers are rebuilt there)."""

    def __init__(self, image: np.ndarray, mask: np.ndarray, config: RenderConfig):
        self.config = config
        self.image = image
        self.mask3 = mask[..., None].astype(np.float32)
        self.pyramid = gaussian_pyramid(image, config.pyramid_levels)
        self.z_maps = [luminance_importance(level, config.z_gamma) if config.z_gamma != 0.0
                       else None
                       for level in self.pyramid]
        self._cache = None

    def __getstate__(self):
        state = dict(self.__dict__)
        state["_cache"] = None
        return state

    def _level_cache(self):
        if self._cache is None:
            cache = []
            for level, z in zip(self.pyramid, self.z_maps):
                h, w, c = level.shape
                cache.append({
                    "src64": np.ascontiguousarray(level.reshape(-1, c), dtype=np.float64),
                    "ez": None if z is None else
                    np.ascontiguousarray(exp_importance(z).reshape(-1)),
                    "num": np.empty((h * w, c), dtype=np.float64),
                    "den": np.empty(h * w, dtype=np.float64),
                })
            self._cache = cache
        return self._cache

    def _splat_level(self, entry, level, fwd, bwd, w_first, w_last):
        h, w, c = level.shape
        num, den = entry["num"], entry["den"]
        num.fill(0.0)
        den.fill(0.0)
        ones = None
        for flow, branch_w in ((fwd, w_first), (bwd, w_last)):
            if entry["ez"] is None:
                if ones is None:
                    ones = np.ones(h * w, dtype=np.float64)
                weight = branch_w * ones
                payload = entry["src64"] * branch_w
            else:
                weight = entry["ez"] * branch_w
                payload = entry["src64"] * weight[:, None]
            accumulate_into(np.ascontiguousarray(flow), payload, weight, h, w, num, den)
        covered = den > VOID_EPS
        colors = np.zeros((h * w, c), dtype=np.float64)
        colors[covered] = num[covered] / den[covered, None]
        return colors.reshape(h, w, c).astype(np.float32), ~covered.reshape(h, w)

    def render(self, fwd: np.ndarray, bwd: np.ndarray,
               w_first: float, w_last: float) -> np.ndarray:
        level_colors = []
        level_voids = []
        fwd_r, bwd_r = fwd, bwd
        for r, (level, entry) in enumerate(zip(self.pyramid, self._level_cache())):
            if r > 0:
                fwd_r = _halve_flow(fwd_r)
                bwd_r = _halve_flow(bwd_r)
            colors, voids = self._splat_level(entry, level, fwd_r, bwd_r, w_first, w_last)
            level_colors.append(colors)
            level_voids.append(voids)

        # Coarse-to-fine void fill, sampling the coarser result only at void
        # pixels; whatever the coarsest level cannot cover falls back to its
        # own (static) source content.
        filled = level_colors[-1]
        coarsest_voids = level_voids[-1]
        if coarsest_voids.any():
            filled = np.where(coarsest_voids[..., None], self.pyramid[-1], filled)
        for r in range(len(self.pyramid) - 2, -1, -1):
            out = level_colors[r]
            voids = level_voids[r]
            if voids.any():
                vy, vx = np.nonzero(voids)
                ch, cw = filled.shape[:2]
                h, w = out.shape[:2]
                sx = (vx + 0.5) * (cw / w) - 0.5
                sy = (vy + 0.5) * (ch / h) - 0.5
                out[vy, vx] = sample_bilinear(filled, sx, sy).astype(np.float32)
            filled = out

        # out = image + mask * (animated - image): pixels with mask == 0 keep
        # the input bit-for-bit, as does any pixel the warp left unchanged.
        return self.image + self.mask3 * (filled.astype(np.float32) - self.image)


def _branch_weights(t: float, n: int, config: RenderConfig) -> tuple[float, float]:
    alpha = t / n
    if config.literal_symmetric_weights:
        return alpha, 1.0 - alpha
    return 1.0 - alpha, alpha


def _prep_inputs(image: np.ndarray, mask: np.ndarray, field: FlowField):
    image = np.ascontiguousarray(image, dtype=np.float32)
    if image.ndim == 2:
        image = image[..., None]
    mask = np.ascontiguousarray(mask, dtype=np.float32)
    h, w = image.shape[:2]
    if mask.shape != (h, w):
        raise ValueError(f"mask shape {mask.shape} does not match image {h}x{w}")
    if (field.height, field.width) != (h, w):
        raise ValueError(f"flow field {field.height}x{field.width} does not match image {h}x{w}")
    return image, mask


def render_frame(image: np.ndarray, mask: np.ndarray, field: FlowField, t: int,
                 config: RenderConfig) -> np.ndarray:
    """Render the frame at time t in [0, n_frames] from scratch."""
    n = config.n_frames
    if not 0 <= t <= n:
        raise ValueError(f"frame index t={t} outside [0, {n}]")
    image, mask = _prep_inputs(image, mask, field)
    fwd = euler_integrate(field, t)
    bwd = euler_integrate(negate(field), n - t)
    w_first, w_last = _branch_weights(t, n, config)
    return _FrameRenderer(image, mask, config).render(fwd.data, bwd.data, w_first, w_last)


# Parent-side state inherited by forked workers (copy-on-write, no pickling
# of the flow sequences); index-addressed tasks keep the IPC payload tiny.
_FORK_STATE = None


def _render_task_by_index(i: int):
    renderer, tasks = _FORK_STATE
    fwd, bwd, w_first, w_last = tasks[i]
    return renderer.render(fwd, bwd, w_first, w_last)


def render_sequence(image: np.ndarray, mask: np.ndarray, field: FlowField,
                    config: RenderConfig, workers: int = 1,
                    progress=None) -> list[np.ndarray]:
    """Render all n_frames frames (t = 0 .. n_frames-1).

    Integrated flows are computed once for both time directions and shared by
    every frame. With workers > 1 frames render in parallel processes; the
    output is identical to a sequential run. progress, if given, is called as
    progress(done, total).
    """
    image, mask = _prep_inputs(image, mask, field)
    n = config.n_frames

    use_fork = workers > 1 and "fork" in multiprocessing.get_all_start_methods()
    if use_fork:
        # The integration kernels drop the GIL, so the two time directions
        # run concurrently; the pool is joined before any fork below.
        with ThreadPoolExecutor(max_workers=2) as tp:
            fut_fwd = tp.submit(euler_integrate_sequence, field, n)
            fut_bwd = tp.submit(euler_integrate_sequence, negate(field), n)
            fwd_seq = fut_fwd.result()
            bwd_seq = fut_bwd.result()
    else:
        fwd_seq = euler_integrate_sequence(field, n)
        bwd_seq = euler_integrate_sequence(negate(field), n)

    tasks = []
    for t in range(n):
        w_first, w_last = _branch_weights(t, n, config)
        tasks.append((fwd_seq[t].data, bwd_seq[n - t].data, w_first, w_last))

    renderer = _FrameRenderer(image, mask, config)
    total = len(tasks)
    done = 0
    results: list[np.ndarray] = []
    if not use_fork:
        for task in tasks:
            results.append(_render_task_local(renderer, task))
            done += 1
            if progress:
                progress(done, total)
    else:
        global _FORK_STATE
        _FORK_STATE = (renderer, tasks)
        try:
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
                chunk = max(1, total // (workers * 4))
                for frame in pool.map(_render_task_by_index, range(total), chunksize=chunk):
                    results.append(frame)
                    done += 1
                    if progress:
                        progress(done, total)
        finally:
            _FORK_STATE = None

    frames = results
    # Loop crossfade: ramp the last 10% of frames toward the loop-start frame.
    # With first == last the frame at time t-n is identical to the frame at t
    # (the two warp branches coincide), and it converges to frame 0 as t -> n;
    # blending toward frame 0 is that limit and softens any residual seam.
    if config.loop_mode == "crossfade" and n >= 2:
        fade = max(1, round(0.1 * n))
        for t in range(n - fade, n):
            alpha = np.float32((t - (n - fade) + 1) / (fade + 1))
            frames[t] = frames[t] + alpha * (frames[0] - frames[t])
    return frames


def _render_task_local(renderer: _FrameRenderer, task):
    fwd, bwd, w_first, w_last = task
    return renderer.render(fwd, bwd, w_first, w_last)
