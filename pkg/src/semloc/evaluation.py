"""Trajectory accuracy metrics: bias-corrected RMSE, percentiles, threshold
rates, edge-count binning, and evidence-gate sweeps.

Conventions fixed here and documented in every emitted table: bias correction
subtracts the mean error vector of the evaluated set before all statistics;
standard deviations use the population convention (divide by N); medians and
percentiles interpolate linearly between order statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FrameError:
    """Planar error of one frame: estimate minus truth, in meters."""

    frame_id: str
    estimated: tuple[float, float]
    truth: tuple[float, float]
    edge_count: int
    gated: bool = False

    def __post_init__(self):
        vals = (*self.estimated, *self.truth)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite error entry for frame {self.frame_id}")
        if self.edge_count < 0:
            raise ValueError("edge_count must be >= 0")

    @property
    def error(self) -> tuple[float, float]:
        return (self.estimated[0] - self.truth[0], self.estimated[1] - self.truth[1])


@dataclass(frozen=True)
class TrajectoryMetrics:
    n: int
    bias: tuple[float, float]
    rmse_x: float
    rmse_y: float
    rmse_2d: float
    median_2d: float
    p75_2d: float
    pct_under_2m: float
    pct_over_5m: float


def _error_array(errors: list[FrameError]) -> np.ndarray:
    return np.array([e.error for e in errors], dtype=np.float64).reshape(-1, 2)


def compute_metrics(errors: list[FrameError], bias_correct: bool = True) -> TrajectoryMetrics:
    """Aggregate per-frame planar errors; bias is always reported raw."""
    if len(errors) == 0:
        raise ValueError("need at least one frame error")
    e = _error_array(errors)
    bias = e.mean(axis=0)
    corrected = e - bias if bias_correct else e
    rmse_x = float(np.sqrt(np.mean(corrected[:, 0] ** 2)))
    rmse_y = float(np.sqrt(np.mean(corrected[:, 1] ** 2)))
    rmse_2d = float(np.sqrt(np.mean(np.sum(corrected ** 2, axis=1))))
    norms = np.hypot(corrected[:, 0], corrected[:, 1])
    return TrajectoryMetrics(
        n=len(errors),
        bias=(float(bias[0]), float(bias[1])),
        rmse_x=rmse_x,
        rmse_y=rmse_y,
        rmse_2d=rmse_2d,
        median_2d=float(np.percentile(norms, 50)),
        p75_2d=float(np.percentile(norms, 75)),
        pct_under_2m=float(np.mean(norms < 2.0) * 100.0),
        pct_over_5m=float(np.mean(norms > 5.0) * 100.0),
    )


@dataclass(frozen=True)
class EdgeBinRow:
    """One edge-count bin: [lo, hi] inclusive on integer counts."""

    lo: int
    hi: int
    n: int
    mean_2d: float  # nan when empty
    std_2d: float  # population convention; nan when empty


def bin_by_edges(errors: list[FrameError], bin_width: int = 5500,
                 origin: int = 1749, bias_correct: bool = True) -> list[EdgeBinRow]:
    """Group frames into edge-count bins of bin_width starting at origin.

    Bias correction (when enabled) uses the mean over the whole input set,
    not per bin, so rows stay comparable. Bins between the lowest and highest
    occupied one are reported even when empty.
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    if len(errors) == 0:
        return []
    e = _error_array(errors)
    if bias_correct:
        e = e - e.mean(axis=0)
    norms = np.hypot(e[:, 0], e[:, 1])
    counts = np.array([err.edge_count for err in errors], dtype=np.int64)
    idx = np.floor_divide(counts - origin, bin_width)
    rows = []
    for i in range(int(idx.min()), int(idx.max()) + 1):
        lo = origin + i * bin_width
        sel = idx == i
        n = int(sel.sum())
        if n == 0:
            rows.append(EdgeBinRow(lo, lo + bin_width - 1, 0, float("nan"), float("nan")))
        else:
            rows.append(EdgeBinRow(lo, lo + bin_width - 1, n,
                                   float(norms[sel].mean()), float(norms[sel].std())))
    return rows


@dataclass(frozen=True)
class GateSweepRow:
    threshold: int
    n: int
    retained_fraction: float
    metrics: TrajectoryMetrics | None  # None when no frame survives


def gate_sweep(errors: list[FrameError], thresholds: list[int],
               bias_correct: bool = True) -> list[GateSweepRow]:
    """Metrics over the subsets with edge_count >= threshold.

    Bias correction is recomputed per subset, matching compute_metrics on
    that subset alone.
    """
    if any(t < 0 for t in thresholds):
        raise ValueError("thresholds must be >= 0")
    total = len(errors)
    rows = []
    for t in thresholds:
        kept = [e for e in errors if e.edge_count >= t]
        if len(kept) == 0:
            rows.append(GateSweepRow(int(t), 0, 0.0, None))
        else:
            rows.append(GateSweepRow(int(t), len(kept),
                                     len(kept) / total if total else 0.0,
                                     compute_metrics(kept, bias_correct=bias_correct)))
    return rows
