"""Compiled per-pixel loops for the two hot paths: splat scatter and flow
integration. Pure IEEE double arithmetic (no fastmath), fixed iteration
order, so results are deterministic and match the naive reference loops bit
for bit."""
from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def splat_accumulate(flow, payload, weight, h, w, num, den):
    """Scatter sources into num/den accumulators.

    flow (H, W, 2) float64; payload (H*W, C) float64, source values
    premultiplied by the per-source weight; weight (H*W,) float64 enters the
    denominator; num (H*W, C) and den (H*W,) accumulate in place. Sources are
    visited row-major, corners in (0,0), (1,0), (0,1), (1,1) order.
    """
    c = payload.shape[1]
    i = 0
    for y in range(h):
        for x in range(w):
            tx = x + flow[y, x, 0]
            ty = y + flow[y, x, 1]
            # Clamp far-out targets to a harmless out-of-grid band; keeps the
            # float->int cast defined for arbitrarily large displacements.
            tx = min(max(tx, -2.0), w + 1.0)
            ty = min(max(ty, -2.0), h + 1.0)
            ftx = np.floor(tx)
            fty = np.floor(ty)
            fx = tx - ftx
            fy = ty - fty
            x0 = int(ftx)
            y0 = int(fty)
            for dy in range(2):
                wy = fy if dy == 1 else 1.0 - fy
                yi = y0 + dy
                if yi < 0 or yi >= h:
                    continue
                for dx in range(2):
                    xi = x0 + dx
                    if xi < 0 or xi >= w:
                        continue
                    bw = (fx if dx == 1 else 1.0 - fx) * wy
                    t = yi * w + xi
                    den[t] += weight[i] * bw
                    for ch in range(c):
                        num[t, ch] += payload[i, ch] * bw
            i += 1


@numba.njit(cache=True, nogil=True)
def integrate_last(field, n, acc):
    """Advance the cumulative-displacement recursion n times in place.

    field (H, W, 2) float64; acc (H*W, 2) float64 holds the running
    displacement. Same arithmetic as integrate_steps without keeping the
    intermediate steps.
    """
    h, w = field.shape[0], field.shape[1]
    for _ in range(n):
        for p in range(h * w):
            gx = p % w
            gy = p // w
            px = min(max(gx + acc[p, 0], 0.0), w - 1.0)
            py = min(max(gy + acc[p, 1], 0.0), h - 1.0)
            fpx = np.floor(px)
            fpy = np.floor(py)
            fx = px - fpx
            fy = py - fpy
            x0 = int(fpx)
            y0 = int(fpy)
            x1 = min(x0 + 1, w - 1)
            y1 = min(y0 + 1, h - 1)
            for ch in range(2):
                a = field[y0, x0, ch]
                b = field[y0, x1, ch]
                cc = field[y1, x0, ch]
                e = field[y1, x1, ch]
                val = (a * (1.0 - fx) + b * fx) * (1.0 - fy) + \
                    (cc * (1.0 - fx) + e * fx) * fy
                acc[p, ch] = acc[p, ch] + val


@numba.njit(cache=True, nogil=True)
def integrate_steps(field, n, out):
    """Fill out[t] for t = 1..n with the cumulative displacement recursion
    out[t] = out[t-1] + field(position + out[t-1]), bilinear border-clamped.

    field (H, W, 2) float64; out (n+1, H*W, 2) float64 with out[0] zeroed.
    Each pixel's recursion is independent of every other pixel's.
    """
    h, w = field.shape[0], field.shape[1]
    for t in range(1, n + 1):
        for p in range(h * w):
            gx = p % w
            gy = p // w
            for_u = out[t - 1, p, 0]
            for_v = out[t - 1, p, 1]
            px = min(max(gx + for_u, 0.0), w - 1.0)
            py = min(max(gy + for_v, 0.0), h - 1.0)
            fpx = np.floor(px)
            fpy = np.floor(py)
            fx = px - fpx
            fy = py - fpy
            x0 = int(fpx)
            y0 = int(fpy)
            x1 = min(x0 + 1, w - 1)
            y1 = min(y0 + 1, h - 1)
            for ch in range(2):
                a = field[y0, x0, ch]
                b = field[y0, x1, ch]
                cc = field[y1, x0, ch]
                e = field[y1, x1, ch]
                val = (a * (1.0 - fx) + b * fx) * (1.0 - fy) + \
                    (cc * (1.0 - fx) + e * fx) * fy
                out[t, p, ch] = out[t - 1, p, ch] + val
