"""Semantic edge alignment losses.

A segmentation mask is a (height, width) uint8 array of class ids with 255
marking ignore pixels. Per-class boundary pixels are matched against
projected map points through a symmetric pair of clamped-distance terms:
forward (projected point -> nearest same-class mask edge, read from a
distance field) and reverse (mask edge pixel -> nearest same-class projected
point). With a confusion matrix both terms marginalize over what the true
class could have been instead of trusting the predicted label.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import _kernels
from .classes import IGNORE_LABEL, NUM_CLASSES, validate_labels
from .crossmodal import ConfusionMatrix, posterior_weights
from .geometry import ProjectedSemanticPoints


class NoEvidenceError(ValueError):
    """Raised when a loss term has nothing to evaluate."""


@dataclass(frozen=True)
class LossConfig:
    """Parameters of the alignment objective.

    reverse_weighting selects how confusion mass is applied to the reverse
    term: "posterior" re-normalizes columns (given the predicted label, how
    likely is each true class under a uniform prior), "row" reuses the
    forward row weights directly.
    """

    delta: float = 2.0
    d_max: float = 5.0
    lambda_forward: float = 1.0
    lambda_reverse: float = 1.0
    confusion: ConfusionMatrix | None = None
    reverse_weighting: str = "posterior"

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.d_max < self.delta:
            raise ValueError("d_max must be >= delta")
        if self.lambda_forward < 0 or self.lambda_reverse < 0:
            raise ValueError("term weights must be non-negative")
        if self.lambda_forward == 0 and self.lambda_reverse == 0:
            raise ValueError("at least one term weight must be positive")
        if self.reverse_weighting not in ("posterior", "row"):
            raise ValueError("reverse_weighting must be 'posterior' or 'row'")


@dataclass
class ClassEdgeSets:
    """Per-class boundary pixels of one mask, in raster order.

    rows/cols/labels are aligned flat arrays over all edge pixels; (row, col)
    indexing matches the mask array.
    """

    width: int
    height: int
    num_classes: int
    rows: np.ndarray
    cols: np.ndarray
    labels: np.ndarray

    @property
    def total(self) -> int:
        return int(self.rows.shape[0])

    def class_pixels(self, class_id: int) -> np.ndarray:
        sel = self.labels == class_id
        return np.stack([self.rows[sel], self.cols[sel]], axis=1)


@dataclass
class DistanceFieldStack:
    """Clamped Euclidean distance to each class's edge set.

    stack has shape (height, width, num_classes); classes with no edge
    pixels hold d_max everywhere.
    """

    stack: np.ndarray
    d_max: float

    @property
    def num_classes(self) -> int:
        return int(self.stack.shape[2])

    def field(self, class_id: int) -> np.ndarray:
        return self.stack[:, :, class_id]


def extract_edges(mask: np.ndarray, num_classes: int = NUM_CLASSES) -> ClassEdgeSets:
    """Find class boundary pixels.

    A pixel with label k is an edge pixel iff at least one 4-neighbor carries
    a different non-ignore label. Ignore pixels are never edges and never
    make their neighbors edges. Image-border sides have no neighbor.
    """
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError("mask must be 2D")
    validate_labels(m, num_classes)
    valid = m != IGNORE_LABEL

    edge = np.zeros(m.shape, dtype=bool)
    # up/down/left/right neighbor comparisons, ignoring invalid neighbors
    edge[1:, :] |= (m[1:, :] != m[:-1, :]) & valid[:-1, :]
    edge[:-1, :] |= (m[:-1, :] != m[1:, :]) & valid[1:, :]
    edge[:, 1:] |= (m[:, 1:] != m[:, :-1]) & valid[:, :-1]
    edge[:, :-1] |= (m[:, :-1] != m[:, 1:]) & valid[:, 1:]
    edge &= valid

    rows, cols = np.nonzero(edge)
    return ClassEdgeSets(
        width=int(m.shape[1]),
        height=int(m.shape[0]),
        num_classes=num_classes,
        rows=rows.astype(np.int32),
        cols=cols.astype(np.int32),
        labels=m[rows, cols].astype(np.uint8),
    )


def build_distance_fields(edges: ClassEdgeSets, d_max: float = 5.0) -> DistanceFieldStack:
    """Exact Euclidean distance transform per class, clamped at d_max."""
    if d_max <= 0:
        raise ValueError("d_max must be positive")
    h, w, k = edges.height, edges.width, edges.num_classes
    stack = np.empty((h, w, k), dtype=np.float64)
    for class_id in range(k):
        sel = edges.labels == class_id
        if not np.any(sel):
            stack[:, :, class_id] = d_max
            continue
        occupied = np.ones((h, w), dtype=bool)
        occupied[edges.rows[sel], edges.cols[sel]] = False
        field = ndimage.distance_transform_edt(occupied)
        stack[:, :, class_id] = np.minimum(field, d_max)
    return DistanceFieldStack(stack=stack, d_max=float(d_max))


def huber(d, delta: float):
    """Huber penalty: quadratic below delta, linear with matched slope above."""
    arr = np.asarray(d, dtype=np.float64)
    out = np.where(arr <= delta, 0.5 * arr * arr, delta * (arr - 0.5 * delta))
    if np.isscalar(d) or arr.ndim == 0:
        return float(out)
    return out


def _forward_weights(cfg: LossConfig, num_classes: int) -> tuple[np.ndarray, bool]:
    if cfg.confusion is None:
        return np.eye(num_classes), True
    mat = cfg.confusion.matrix
    if mat.shape[0] != num_classes:
        raise ValueError(f"confusion matrix is {mat.shape[0]}x{mat.shape[0]}, expected {num_classes}")
    return np.ascontiguousarray(mat), False


def _reverse_weights(cfg: LossConfig, num_classes: int) -> tuple[np.ndarray, bool]:
    if cfg.confusion is None:
        return np.eye(num_classes), True
    if cfg.reverse_weighting == "row":
        w = cfg.confusion.matrix
    else:
        w = posterior_weights(cfg.confusion)
    if w.shape[0] != num_classes:
        raise ValueError(f"confusion matrix is {w.shape[0]}x{w.shape[0]}, expected {num_classes}")
    return np.ascontiguousarray(w), False


def forward_loss(proj: ProjectedSemanticPoints, fields: DistanceFieldStack, cfg: LossConfig) -> float:
    """Mean clamped-distance penalty from projected points to mask edges.

    Distance fields are sampled bilinearly at the subpixel projection. In
    confusion mode each point's penalty is the confusion-row-weighted sum
    over all class fields.
    """
    n = len(proj)
    if n == 0:
        raise NoEvidenceError("no projected points to score")
    k = fields.num_classes
    validate_labels(proj.labels, k, allow_ignore=False)
    conf, hard = _forward_weights(cfg, k)
    total = _kernels.forward_loss_sum(
        n,
        np.ascontiguousarray(proj.u, dtype=np.float64),
        np.ascontiguousarray(proj.v, dtype=np.float64),
        np.ascontiguousarray(proj.labels, dtype=np.uint8),
        np.ascontiguousarray(fields.stack),
        conf, hard, cfg.delta)
    return float(total / n)


def reverse_loss(edges: ClassEdgeSets, proj: ProjectedSemanticPoints, cfg: LossConfig) -> float:
    """Mean clamped-distance penalty from mask edge pixels to projected points.

    Exact nearest-point distances within the d_max clamp: every (edge, point)
    pair within floor(d_max + 0.5) cells is visited from the point side and
    reduced into per-edge-pixel minima. A class with no projected points in
    reach contributes d_max.
    """
    if edges.total == 0:
        raise NoEvidenceError("no edge pixels to score")
    k = edges.num_classes
    validate_labels(proj.labels, k, allow_ignore=False)
    wmat, hard = _reverse_weights(cfg, k)

    n = len(proj)
    npx = edges.height * edges.width
    pu = np.ascontiguousarray(proj.u, dtype=np.float64)
    pv = np.ascontiguousarray(proj.v, dtype=np.float64)
    pcls = np.ascontiguousarray(proj.labels, dtype=np.uint8)
    if n:
        cols = np.floor(pu + 0.5).astype(np.int64)
        rows = np.floor(pv + 0.5).astype(np.int64)
        if (cols.min() < 0 or rows.min() < 0
                or cols.max() >= edges.width or rows.max() >= edges.height):
            raise ValueError("projected points fall outside the mask")
        flat = (rows * edges.width + cols).astype(np.int32)
    else:
        flat = np.empty(0, dtype=np.int32)

    edge_lab_grid = np.full(npx, 255, dtype=np.uint8)
    edge_id_grid = np.full(npx, -1, dtype=np.int32)
    near_cls = np.zeros(k * npx, dtype=np.uint8)
    near_any = np.zeros(npx, dtype=np.uint8)
    m = _kernels.scan_radius(cfg.d_max)
    _kernels.build_edge_grids(edges.rows, edges.cols, edges.labels,
                              edges.width, edges.height, m, npx,
                              edge_lab_grid, edge_id_grid, near_cls, near_any)
    dmax2 = cfg.d_max * cfg.d_max
    if hard:
        run_min2 = np.full(edges.total, dmax2, dtype=np.float64)
        _kernels.scatter_reverse_min(n, flat, pu, pv, pcls, edges.width,
                                     edges.height, m, npx, edge_lab_grid,
                                     edge_id_grid, near_cls, run_min2)
        total = _kernels.huber_sqrt_sum(run_min2, cfg.delta)
    else:
        run_min2k = np.full(edges.total * k, dmax2, dtype=np.float64)
        _kernels.scatter_reverse_min_all(n, flat, pu, pv, pcls, edges.width,
                                         edges.height, m, k, edge_lab_grid,
                                         edge_id_grid, near_any, run_min2k)
        total = _kernels.huber_weighted_sum(edges.labels, run_min2k, wmat,
                                            cfg.delta, k)
    return float(total / edges.total)


def total_loss(edges: ClassEdgeSets, proj: ProjectedSemanticPoints,
               fields: DistanceFieldStack, cfg: LossConfig) -> float:
    """Weighted sum of the forward and reverse terms."""
    value = 0.0
    if cfg.lambda_forward > 0:
        value += cfg.lambda_forward * forward_loss(proj, fields, cfg)
    if cfg.lambda_reverse > 0:
        value += cfg.lambda_reverse * reverse_loss(edges, proj, cfg)
    return value
