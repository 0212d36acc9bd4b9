"""Benchmark tooling: masks and hints derived from ground-truth average flows,
and PSNR/endpoint-error metrics comparing synthesized flow against them.

A dataset is a directory of entries, each holding `first.png`, `avg_flow.flo`
and optionally `frames/0000.png...`; masks and hints are generated from the
average flow so the sparse-to-dense synthesis can be scored against it.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np

from .flow import FlowField, FlowParams, Hint, default_sigma, dense_flow_from_hints
from .media import read_flo, read_image

#: PSNR reported when the two inputs are identical (MSE = 0).
PSNR_SENTINEL = 99.0


class DatasetError(ValueError):
    pass


@dataclass
class FlowDatasetEntry:
    name: str
    first_frame: np.ndarray  # (H, W, 3) float32 in [0, 1]
    avg_flow: FlowField
    frames: list[np.ndarray] | None = None

    def __post_init__(self):
        h, w = self.first_frame.shape[:2]
        if (self.avg_flow.height, self.avg_flow.width) != (h, w):
            raise DatasetError(f"{self.name}: avg_flow {self.avg_flow.height}x"
                               f"{self.avg_flow.width} does not match frame {h}x{w}")


@dataclass
class EntryResult:
    name: str
    psnr: float | None = None
    endpoint_error: float | None = None
    mse: float | None = None
    masked_fraction: float | None = None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class MetricReport:
    hint_count: int
    results: list[EntryResult] = dataclass_field(default_factory=list)

    @property
    def mean_psnr(self) -> float:
        values = [r.psnr for r in self.results if not r.failed]
        if not values:
            return float("nan")
        return float(np.mean(values))

    @property
    def mean_endpoint_error(self) -> float:
        values = [r.endpoint_error for r in self.results if not r.failed]
        if not values:
            return float("nan")
        return float(np.mean(values))

    def to_records(self) -> dict:
        return {
            "hint_count": self.hint_count,
            "mean_psnr": self.mean_psnr,
            "mean_endpoint_error": self.mean_endpoint_error,
            "entries": [
                {"name": r.name, "psnr": r.psnr, "endpoint_error": r.endpoint_error,
                 "mse": r.mse, "masked_fraction": r.masked_fraction, "error": r.error}
                for r in self.results
            ],
        }

    def to_text(self) -> str:
        lines = [f"{'entry':<24} {'psnr_db':>9} {'epe_px':>9} {'status'}",
                 "-" * 52]
        for r in self.results:
            if r.failed:
                lines.append(f"{r.name:<24} {'-':>9} {'-':>9} failed: {r.error}")
            else:
                lines.append(f"{r.name:<24} {r.psnr:>9.2f} {r.endpoint_error:>9.3f} ok")
        lines.append("-" * 52)
        lines.append(f"hints={self.hint_count}  mean PSNR {self.mean_psnr:.2f} dB  "
                     f"mean EPE {self.mean_endpoint_error:.3f} px  "
                     f"({sum(r.failed for r in self.results)} failed)")
        return "\n".join(lines)


def generate_mask(avg_flow: FlowField, m_factor: float = 0.1) -> np.ndarray:
    """Keep pixels whose squared flow is at least m_factor times the mean
    squared flow; binary (H, W) float32 result."""
    if m_factor < 0:
        raise ValueError(f"m_factor must discard >= 0, got {m_factor}")
    sq = avg_flow.data[..., 0] ** 2 + avg_flow.data[..., 1] ** 2
    mean_sq = sq.mean()
    if mean_sq == 0.0:
        warnings.warn("average flow is zero everywhere; mask is empty")
        return np.zeros(sq.shape, dtype=np.float32)
    return (sq >= m_factor * mean_sq).astype(np.float32)


def _standardize(column: np.ndarray) -> np.ndarray:
    std = column.std()
    if std == 0:
        return column - column.mean()
    return (column - column.mean()) / std


def extract_hints(avg_flow: FlowField, mask: np.ndarray, k: int,
                  iterations: int = 100, seed: int = 0,
                  position_only: bool = False) -> list[Hint]:
    """Cluster masked pixels and emit one hint per cluster.

    Clustering runs over standardized (x, y, u, v) features (or just (x, y)
    with position_only); each cluster contributes the masked pixel nearest its
    center, carrying the average flow at that exact pixel.
    """
    mask = np.asarray(mask)
    if mask.shape != (avg_flow.height, avg_flow.width):
        raise DatasetError(f"mask shape {mask.shape} does not match flow "
                           f"{avg_flow.height}x{avg_flow.width}")
    ys, xs = np.nonzero(mask > 0)
    if len(xs) < k:
        raise DatasetError(f"mask has {len(xs)} pixels, fewer than k={k}")

    u = avg_flow.data[ys, xs, 0]
    v = avg_flow.data[ys, xs, 1]
    columns = [xs.astype(np.float64), ys.astype(np.float64)]
    if not position_only:
        columns += [u, v]
    features = np.stack([_standardize(c) for c in columns], axis=1)

    from sklearn.cluster import KMeans

    km = KMeans(n_clusters=k, init="k-means++", n_init=1, max_iter=iterations,
                tol=0.0, random_state=seed)
    km.fit(features)

    hints = []
    for center in km.cluster_centers_:
        idx = int(np.argmin(((features - center) ** 2).sum(axis=1)))
        x, y = float(xs[idx]), float(ys[idx])
        fu, fv = float(u[idx]), float(v[idx])
        hints.append(Hint(start=(x, y), end=(x + fu, y + fv), speed=1.0))
    return hints


def _psnr_from_mse(mse: float, peak: float) -> float:
    if mse == 0.0:
        return PSNR_SENTINEL
    if peak == 0.0:
        return 0.0
    return min(PSNR_SENTINEL, 10.0 * math.log10(peak * peak / mse))


def flow_psnr(a: FlowField, b: FlowField, peak: float | None = None) -> float:
    """PSNR between two flow maps over all components.

    peak defaults to the largest absolute component across both fields, which
    keeps the metric symmetric in its arguments.
    """
    if (a.height, a.width) != (b.height, b.width):
        raise ValueError(f"flow dimensions differ: {a.height}x{a.width} vs {b.height}x{b.width}")
    diff = a.data - b.data
    mse = float(np.mean(diff * diff))
    if peak is None:
        peak = float(max(np.abs(a.data).max(), np.abs(b.data).max()))
    return _psnr_from_mse(mse, peak)


def frame_psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR between two frames in [0, 1], under the 8-bit convention (peak 255)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    diff = (a - b) * 255.0
    return _psnr_from_mse(float(np.mean(diff * diff)), 255.0)


def endpoint_error(a: FlowField, b: FlowField) -> float:
    """Mean Euclidean distance between corresponding flow vectors."""
    if (a.height, a.width) != (b.height, b.width):
        raise ValueError(f"flow dimensions differ: {a.height}x{a.width} vs {b.height}x{b.width}")
    diff = a.data - b.data
    return float(np.mean(np.hypot(diff[..., 0], diff[..., 1])))


def evaluate_entry(entry: FlowDatasetEntry, k: int, sigma: float | None = None,
                   m_factor: float = 0.1, seed: int = 0) -> EntryResult:
    try:
        mask = generate_mask(entry.avg_flow, m_factor)
        hints = extract_hints(entry.avg_flow, mask, k, seed=seed)
        if sigma is None:
            sigma = default_sigma(entry.avg_flow.width, entry.avg_flow.height)
        dense = dense_flow_from_hints(hints, mask, FlowParams(sigma=sigma))
        diff = dense.data - entry.avg_flow.data
        return EntryResult(
            name=entry.name,
            psnr=flow_psnr(dense, entry.avg_flow),
            endpoint_error=endpoint_error(dense, entry.avg_flow),
            mse=float(np.mean(diff * diff)),
            masked_fraction=float((mask > 0).mean()),
        )
    except Exception as exc:  # per-entry failures must not kill the run
        return EntryResult(name=entry.name, error=str(exc))


def evaluate_pipeline(dataset: list[FlowDatasetEntry], k: int,
                      sigma: float | None = None, m_factor: float = 0.1,
                      seed: int = 0) -> MetricReport:
    """Score mask -> hints -> dense synthesis against each entry's average flow."""
    if not dataset:
        raise DatasetError("empty dataset")
    report = MetricReport(hint_count=k)
    for entry in dataset:
        report.results.append(evaluate_entry(entry, k, sigma, m_factor, seed))
    return report


def evaluate_directory(root, k: int, sigma: float | None = None,
                       m_factor: float = 0.1, seed: int = 0) -> MetricReport:
    """Like evaluate_pipeline, but reads entries from disk; entries that fail
    to load are reported as failed instead of aborting the run."""
    root = Path(root)
    entry_dirs = sorted(p for p in root.iterdir() if p.is_dir()) if root.is_dir() else []
    if not entry_dirs:
        raise DatasetError(f"no dataset entries under {root}")
    report = MetricReport(hint_count=k)
    for entry_dir in entry_dirs:
        try:
            entry = load_entry(entry_dir)
        except Exception as exc:
            report.results.append(EntryResult(name=entry_dir.name, error=str(exc)))
            continue
        report.results.append(evaluate_entry(entry, k, sigma, m_factor, seed))
    return report


def load_entry(entry_dir) -> FlowDatasetEntry:
    entry_dir = Path(entry_dir)
    first = read_image(entry_dir / "first.png")
    avg = read_flo(entry_dir / "avg_flow.flo")
    frames = None
    frames_dir = entry_dir / "frames"
    if frames_dir.is_dir():
        frames = [read_image(p) for p in sorted(frames_dir.glob("*.png"))]
    return FlowDatasetEntry(name=entry_dir.name, first_frame=first,
                            avg_flow=avg, frames=frames)


def write_report(report: MetricReport, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_records(), f, indent=2)
        f.write("\n")
