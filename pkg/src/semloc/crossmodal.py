"""Cross-modality registration and label-noise calibration.

Segmentation runs on one modality (e.g. RGB) while localization runs on
another (e.g. thermal). A plane-induced homography carries masks between the
two image spaces, and a row-stochastic confusion matrix measured on held-out
pairs describes how the transported labels err per class.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .classes import IGNORE_LABEL, NUM_CLASSES, validate_labels


class DegenerateCorrespondencesError(ValueError):
    """Raised when correspondences do not determine a homography."""


@dataclass(frozen=True)
class Homography:
    """Invertible 3x3 projective map between pixel planes, bottom-right entry
    fixed to 1."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError("homography must be 3x3")
        if not np.all(np.isfinite(m)):
            raise ValueError("homography must be finite")
        if abs(m[2, 2] - 1.0) > 1e-9:
            raise ValueError("homography must be normalized with H[2,2] == 1")
        if abs(np.linalg.det(m)) <= 1e-12:
            raise ValueError("homography must be invertible")
        object.__setattr__(self, "matrix", m)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map (n, 2) pixel points through the homography."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        ones = np.ones((pts.shape[0], 1))
        q = np.hstack([pts, ones]) @ self.matrix.T
        return q[:, :2] / q[:, 2:3]

    def inverse(self) -> "Homography":
        inv = np.linalg.inv(self.matrix)
        return Homography(inv / inv[2, 2])


_COLLINEAR_TOL = 1e-9


@dataclass(frozen=True)
class CorrespondenceSet:
    """Matched pixel pairs (source -> destination) for homography fitting."""

    src: np.ndarray
    dst: np.ndarray

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.float64).reshape(-1, 2)
        dst = np.asarray(self.dst, dtype=np.float64).reshape(-1, 2)
        if src.shape != dst.shape:
            raise ValueError("src and dst must pair up")
        if src.shape[0] < 4:
            raise ValueError("need at least 4 correspondences")
        if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
            raise ValueError("correspondences must be finite")
        _check_not_collinear(src)
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)

    def __len__(self) -> int:
        return int(self.src.shape[0])


def _check_not_collinear(pts: np.ndarray) -> None:
    # exact-collinearity guard; tolerance scales with the point spread
    scale = max(float(np.ptp(pts[:, 0])), float(np.ptp(pts[:, 1])), 1.0)
    tol = _COLLINEAR_TOL * scale * scale
    idx = np.array(list(itertools.combinations(range(pts.shape[0]), 3)))
    a, b, c = pts[idx[:, 0]], pts[idx[:, 1]], pts[idx[:, 2]]
    area2 = np.abs((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                   - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
    if bool(np.any(area2 <= tol)):
        raise DegenerateCorrespondencesError("three source points are collinear")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Row-stochastic class confusion: entry (y, k) = Pr(predicted k | true y)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("confusion matrix must be square")
        if np.any(m < 0):
            raise ValueError("confusion entries must be non-negative")
        if np.abs(m.sum(axis=1) - 1.0).max() > 1e-9:
            raise ValueError("confusion rows must sum to 1")
        object.__setattr__(self, "matrix", m)

    @property
    def num_classes(self) -> int:
        return int(self.matrix.shape[0])

    @staticmethod
    def identity(num_classes: int = NUM_CLASSES) -> "ConfusionMatrix":
        return ConfusionMatrix(np.eye(num_classes))


def _normalization(pts: np.ndarray) -> np.ndarray:
    """Similarity shifting the centroid to the origin, mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    mean_dist = float(np.mean(np.linalg.norm(pts - centroid, axis=1)))
    if mean_dist <= 0:
        raise DegenerateCorrespondencesError("correspondences collapse to a point")
    s = np.sqrt(2.0) / mean_dist
    return np.array([
        [s, 0.0, -s * centroid[0]],
        [0.0, s, -s * centroid[1]],
        [0.0, 0.0, 1.0],
    ])


def fit_homography(corr: CorrespondenceSet) -> Homography:
    """Direct linear transform with similarity normalization on both sides.

    Raises DegenerateCorrespondencesError when the linear system is rank
    deficient and the solution is not unique.
    """
    t_src = _normalization(corr.src)
    t_dst = _normalization(corr.dst)
    ones = np.ones((len(corr), 1))
    s = np.hstack([corr.src, ones]) @ t_src.T
    d = np.hstack([corr.dst, ones]) @ t_dst.T

    n = len(corr)
    a = np.zeros((2 * n, 9))
    a[0::2, 0] = s[:, 0]
    a[0::2, 1] = s[:, 1]
    a[0::2, 2] = 1.0
    a[0::2, 6] = -d[:, 0] * s[:, 0]
    a[0::2, 7] = -d[:, 0] * s[:, 1]
    a[0::2, 8] = -d[:, 0]
    a[1::2, 3] = s[:, 0]
    a[1::2, 4] = s[:, 1]
    a[1::2, 5] = 1.0
    a[1::2, 6] = -d[:, 1] * s[:, 0]
    a[1::2, 7] = -d[:, 1] * s[:, 1]
    a[1::2, 8] = -d[:, 1]

    _, sv, vt = np.linalg.svd(a)
    # two vanishing singular values mean a solution family, not a homography
    if sv[-2] <= 1e-12 * sv[0]:
        raise DegenerateCorrespondencesError("correspondences are rank deficient")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ hn @ t_src
    if abs(h[2, 2]) <= 1e-12 * np.abs(h).max():
        raise DegenerateCorrespondencesError("homography is not normalizable")
    h = h / h[2, 2]
    # a unique DLT solution can still be singular, e.g. when the destinations
    # collapse onto a line
    if abs(np.linalg.det(h)) <= 1e-12:
        raise DegenerateCorrespondencesError("fitted homography is singular")
    return Homography(h)


def reprojection_rms(h: Homography, corr: CorrespondenceSet) -> float:
    """Root-mean-square pixel error of mapped source points vs destinations."""
    residual = h.apply(corr.src) - corr.dst
    return float(np.sqrt(np.mean(np.sum(residual * residual, axis=1))))


def warp_mask(mask: np.ndarray, h: Homography, out_size: tuple[int, int]) -> np.ndarray:
    """Resample a mask into the destination plane of h.

    out_size is (width, height). Inverse warp with nearest-neighbor lookup;
    destination pixels mapping outside the source become ignore.
    """
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError("mask must be 2D")
    out_w, out_h = int(out_size[0]), int(out_size[1])
    hinv = np.linalg.inv(h.matrix)

    uu, vv = np.meshgrid(np.arange(out_w, dtype=np.float64),
                         np.arange(out_h, dtype=np.float64))
    w = hinv[2, 0] * uu + hinv[2, 1] * vv + hinv[2, 2]
    safe = np.abs(w) > 1e-12
    w_div = np.where(safe, w, 1.0)
    sx = (hinv[0, 0] * uu + hinv[0, 1] * vv + hinv[0, 2]) / w_div
    sy = (hinv[1, 0] * uu + hinv[1, 1] * vv + hinv[1, 2]) / w_div

    col = np.floor(sx + 0.5).astype(np.int64)
    row = np.floor(sy + 0.5).astype(np.int64)
    inside = safe & (col >= 0) & (col < m.shape[1]) & (row >= 0) & (row < m.shape[0])

    out = np.full((out_h, out_w), IGNORE_LABEL, dtype=np.uint8)
    out[inside] = m[row[inside], col[inside]]
    return out


def estimate_confusion(pred, truth, num_classes: int = NUM_CLASSES) -> ConfusionMatrix:
    """Tally predicted vs reference labels into a row-stochastic matrix.

    Accepts a single mask per side or matched lists of masks. Pixels where
    either side is ignore are skipped. A true class that never appears keeps
    an identity row.
    """
    preds = [pred] if isinstance(pred, np.ndarray) and np.ndim(pred) == 2 else list(pred)
    truths = [truth] if isinstance(truth, np.ndarray) and np.ndim(truth) == 2 else list(truth)
    if len(preds) != len(truths) or not preds:
        raise ValueError("need equally many (and at least one) mask pairs")
    counts = np.zeros((num_classes, num_classes), dtype=np.float64)
    any_valid = False
    for p, t in zip(preds, truths):
        p = np.asarray(p)
        t = np.asarray(t)
        if p.shape != t.shape:
            raise ValueError("prediction and reference shapes differ")
        validate_labels(p, num_classes)
        validate_labels(t, num_classes)
        valid = (p != IGNORE_LABEL) & (t != IGNORE_LABEL)
        if not bool(np.any(valid)):
            continue
        any_valid = True
        counts += np.bincount(
            t[valid].astype(np.int64) * num_classes + p[valid].astype(np.int64),
            minlength=num_classes * num_classes,
        ).reshape(num_classes, num_classes)
    if not any_valid:
        raise ValueError("no overlapping valid pixels to estimate confusion from")
    row_sums = counts.sum(axis=1)
    empty = row_sums == 0
    counts[empty] = np.eye(num_classes)[empty]
    row_sums = counts.sum(axis=1)
    return ConfusionMatrix(counts / row_sums[:, None])


def posterior_weights(confusion: ConfusionMatrix) -> np.ndarray:
    """Column-normalized confusion: entry (j, k) = Pr(true k | predicted j)
    under a uniform class prior. Classes never predicted keep identity rows."""
    c = confusion.matrix
    col_sums = c.sum(axis=0)
    k = confusion.num_classes
    w = np.empty_like(c)
    for j in range(k):
        if col_sums[j] > 0:
            w[j, :] = c[:, j] / col_sums[j]
        else:
            w[j, :] = 0.0
            w[j, j] = 1.0
    return w
