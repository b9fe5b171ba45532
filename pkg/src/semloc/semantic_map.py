"""Semantic map construction: label fusion over views and edge-voxel pruning."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels, geometry
from .classes import IGNORE_LABEL, NUM_CLASSES, validate_labels


class EmptyMapError(ValueError):
    """Raised when an operation would produce a map with no points."""


@dataclass
class ColoredPointCloud:
    """Reconstruction output: positions in the local world frame plus color."""

    points: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.colors = np.ascontiguousarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        if self.points.shape[0] != self.colors.shape[0]:
            raise ValueError("points and colors must align")

    def __len__(self) -> int:
        return int(self.points.shape[0])


@dataclass
class SemanticPointCloud:
    """Labeled cloud; support counts how many views voted for each point."""

    points: np.ndarray
    labels: np.ndarray
    support: np.ndarray
    datum: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8).reshape(-1)
        self.support = np.ascontiguousarray(self.support, dtype=np.uint16).reshape(-1)
        n = self.points.shape[0]
        if self.labels.shape[0] != n or self.support.shape[0] != n:
            raise ValueError("points, labels, and support must align")
        validate_labels(self.labels, allow_ignore=False)
        if n and int(self.support.min()) < 1:
            raise ValueError("every point needs at least one supporting view")

    def __len__(self) -> int:
        return int(self.points.shape[0])


@dataclass
class LabeledView:
    """One mapping image: its segmentation mask and its camera."""

    mask: np.ndarray
    view: geometry.ViewGeometry
    pose: geometry.RigidPose  # world -> camera

    def __post_init__(self):
        m = np.asarray(self.mask)
        intr = self.view.intrinsics
        if m.shape != (intr.height, intr.width):
            raise ValueError(f"mask shape {m.shape} does not match intrinsics "
                             f"({intr.height}, {intr.width})")
        validate_labels(m)
        self.mask = np.ascontiguousarray(m, dtype=np.uint8)


@dataclass
class VoxelEdgeMap:
    """Pruned map: class-transition voxels, represented by their centers."""

    voxel_size: float
    indices: np.ndarray
    labels: np.ndarray
    points: np.ndarray = field(init=False)

    def __post_init__(self):
        if not self.voxel_size > 0:
            raise ValueError("voxel size must be positive")
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int64).reshape(-1, 3)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8).reshape(-1)
        if self.indices.shape[0] != self.labels.shape[0]:
            raise ValueError("indices and labels must align")
        validate_labels(self.labels, allow_ignore=False)
        self.points = (self.indices.astype(np.float64) + 0.5) * self.voxel_size

    def __len__(self) -> int:
        return int(self.indices.shape[0])

    def to_point_cloud(self) -> SemanticPointCloud:
        return SemanticPointCloud(points=self.points.copy(), labels=self.labels.copy(),
                                  support=np.ones(len(self), dtype=np.uint16))


def fuse_labels(cloud: ColoredPointCloud, views: list[LabeledView]) -> SemanticPointCloud:
    """Assign each point the majority label over the views that see it.

    A point votes in a view only when it wins that view's depth buffer at its
    rounded pixel, and only when the mask there is not ignore. Ties go to the
    lowest class id. Points with no votes are dropped; support records how
    many views voted. Raises EmptyMapError when nothing survives.
    """
    n = len(cloud)
    if n == 0:
        raise EmptyMapError("input cloud is empty")
    if not views:
        raise EmptyMapError("no views to fuse labels from")

    votes = np.zeros((n, NUM_CLASSES), dtype=np.uint16)
    zero_labels = np.zeros(n, dtype=np.uint8)
    for lv in views:
        intr = lv.view.intrinsics
        cam = np.ascontiguousarray(
            cloud.points @ lv.pose.rotation.T + lv.pose.translation)
        buf = _kernels.FrameBuffers(intr.width, intr.height, n)
        count = _kernels.render_points(
            cam, zero_labels, 0.0, 0.0, 0.0,
            intr.fx, intr.fy, intr.cx, intr.cy,
            *intr.dist, intr.has_distortion,
            intr.width, intr.height,
            buf.depth, buf.head, buf.touched,
            buf.pu, buf.pv, buf.pcls, buf.pidx)
        if count == 0:
            continue
        winners = buf.pidx[:count]
        pixel_labels = lv.mask.reshape(-1)[buf.touched[:count]]
        voting = pixel_labels != IGNORE_LABEL
        np.add.at(votes, (winners[voting], pixel_labels[voting].astype(np.int64)), 1)

    support = votes.sum(axis=1, dtype=np.int64)
    keep = support > 0
    if not bool(np.any(keep)):
        raise EmptyMapError("no point received a label vote")
    # argmax returns the first maximum, which is the lowest class id
    fused = np.argmax(votes[keep], axis=1).astype(np.uint8)
    return SemanticPointCloud(points=cloud.points[keep].copy(), labels=fused,
                              support=np.minimum(support[keep], np.iinfo(np.uint16).max))


def _majority_per_voxel(flat: np.ndarray, labels: np.ndarray, num_classes: int
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Majority label per voxel key, ties to the lowest class id."""
    pair = flat * num_classes + labels.astype(np.int64)
    keys, counts = np.unique(pair, return_counts=True)
    vox = keys // num_classes
    cls = keys % num_classes
    # per voxel pick highest count, then lowest class id
    order = np.lexsort((cls, -counts, vox))
    vox_sorted = vox[order]
    first = np.ones(vox_sorted.shape[0], dtype=bool)
    first[1:] = vox_sorted[1:] != vox_sorted[:-1]
    return vox_sorted[first], cls[order][first].astype(np.uint8)


def voxelize_and_prune(cloud: SemanticPointCloud, voxel_size: float = 0.5) -> VoxelEdgeMap:
    """Voxelize with majority labels, then keep only class-transition voxels.

    A voxel survives iff at least one of its six face neighbors is occupied
    by a different class; borders with unoccupied space do not count. The
    result can be empty (single-class input); callers decide whether that is
    an error.
    """
    if not voxel_size > 0:
        raise ValueError("voxel size must be positive")
    if len(cloud) == 0:
        raise EmptyMapError("cannot voxelize an empty cloud")

    idx = np.floor(cloud.points / voxel_size).astype(np.int64)
    lo = idx.min(axis=0)
    span = idx.max(axis=0) - lo + np.int64(3)  # +1 slack per side for neighbors
    shifted = idx - lo + 1
    flat = (shifted[:, 0] * span[1] + shifted[:, 1]) * span[2] + shifted[:, 2]

    vox_flat, vox_label = _majority_per_voxel(flat, cloud.labels, NUM_CLASSES)

    # neighbor lookups on the sorted key table; the +-1 slack makes every
    # face-neighbor key representable without wrapping
    strides = np.array([span[1] * span[2], span[2], 1], dtype=np.int64)
    keep = np.zeros(vox_flat.shape[0], dtype=bool)
    for axis in range(3):
        for sign in (-1, 1):
            neighbor = vox_flat + sign * strides[axis]
            pos = np.searchsorted(vox_flat, neighbor)
            pos_c = np.minimum(pos, vox_flat.shape[0] - 1)
            hit = vox_flat[pos_c] == neighbor
            differs = hit & (vox_label[pos_c] != vox_label)
            keep |= differs

    kept_flat = vox_flat[keep]
    kept_label = vox_label[keep]
    rest = kept_flat % (span[1] * span[2])
    ix = kept_flat // (span[1] * span[2]) - 1 + lo[0]
    iy = rest // span[2] - 1 + lo[1]
    iz = rest % span[2] - 1 + lo[2]
    return VoxelEdgeMap(voxel_size=float(voxel_size),
                        indices=np.stack([ix, iy, iz], axis=1),
                        labels=kept_label)
