"""Camera geometry: projection of labeled 3D points into segmentation-aligned views.

Conventions used throughout the package:

- World frame is a local east/north/up right-handed frame (z up), in meters,
  anchored at a per-dataset datum.
- Camera frame is the usual computer-vision frame: +x right, +y down,
  +z forward along the optical axis. Points with z <= 0 are behind the camera
  and never project.
- Pixel centers sit at integer coordinates; pixel (0, 0) is the top-left
  center. Continuous pixel coordinates (u, v) map to the depth-buffer key
  (round(u), round(v)) with round(x) = floor(x + 0.5).
- A projected point is in view iff 0 <= u < width - 0.5 and
  0 <= v < height - 0.5, so the rounded key always lands inside the image.
- The planar search translation t = (tx, ty) places the camera center at
  (tx, ty, height) in the world frame. Orientation comes from the body
  attitude R_wb (body -> world) composed with the camera-to-body extrinsic
  rotation R_cb (camera -> body): camera -> world is R_wb @ R_cb, and points
  transform world -> camera through its transpose. The extrinsic translation
  is carried for provenance but does not move the camera center; the center
  is pinned to (tx, ty, height) by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels

_ROT_TOL = 1e-9


def _check_rotation(r: np.ndarray, what: str) -> np.ndarray:
    r = np.ascontiguousarray(np.asarray(r, dtype=np.float64))
    if r.shape != (3, 3):
        raise ValueError(f"{what} must be 3x3, got {r.shape}")
    err = np.abs(r.T @ r - np.eye(3)).max()
    if err > _ROT_TOL:
        raise ValueError(f"{what} is not orthonormal (max |R^T R - I| = {err:.3e})")
    if abs(np.linalg.det(r) - 1.0) > _ROT_TOL:
        raise ValueError(f"{what} must have determinant +1")
    return r


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera with Brown-Conrady distortion (k1, k2, k3, p1, p2)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    dist: tuple[float, float, float, float, float] = (0.0, 0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image dimensions must be positive")
        if len(self.dist) != 5:
            raise ValueError("dist must be (k1, k2, k3, p1, p2)")
        object.__setattr__(self, "dist", tuple(float(d) for d in self.dist))

    @property
    def has_distortion(self) -> bool:
        return any(d != 0.0 for d in self.dist)


@dataclass(frozen=True)
class RigidPose:
    """Rotation plus translation; orthonormality checked to 1e-9."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _check_rotation(self.rotation, "rotation"))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidPose":
        return RigidPose(np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class PlanarTranslation:
    """In-plane camera offset relative to the navigation prior, meters."""

    tx: float
    ty: float

    def __post_init__(self):
        if not (np.isfinite(self.tx) and np.isfinite(self.ty)):
            raise ValueError("translation components must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.tx, self.ty], dtype=np.float64)

    def norm(self) -> float:
        return float(np.hypot(self.tx, self.ty))


@dataclass(frozen=True)
class ViewGeometry:
    """Everything needed to project world points for one frame.

    attitude is the body-to-world rotation estimate; cam_extrinsics holds the
    camera-to-body rotation (translation kept for provenance only, see module
    docstring); height is the estimated camera altitude above the datum.
    """

    attitude: np.ndarray
    cam_extrinsics: RigidPose
    height: float
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        object.__setattr__(self, "attitude", _check_rotation(self.attitude, "attitude"))
        if not np.isfinite(self.height):
            raise ValueError("height must be finite")

    @property
    def world_to_camera_rotation(self) -> np.ndarray:
        # camera -> world is attitude @ R_cb; invert by transposing.
        return (self.attitude @ self.cam_extrinsics.rotation).T

    @staticmethod
    def from_world_to_camera(r_cw: np.ndarray, height: float, intrinsics: CameraIntrinsics) -> "ViewGeometry":
        r_cw = _check_rotation(r_cw, "world-to-camera rotation")
        return ViewGeometry(attitude=r_cw.T, cam_extrinsics=RigidPose.identity(),
                            height=height, intrinsics=intrinsics)


@dataclass
class ProjectedSemanticPoints:
    """Pixel-unique projected map points for one candidate translation.

    Arrays are aligned: entry i is the depth-buffer winner at its rounded
    pixel, with subpixel coordinates (u[i], v[i]) and the class label of the
    winning 3D point. Treat as read-only.
    """

    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    labels: np.ndarray
    width: int
    height: int
    translation: PlanarTranslation = field(default_factory=lambda: PlanarTranslation(0.0, 0.0))

    def __len__(self) -> int:
        return int(self.u.shape[0])

    def class_points(self, class_id: int) -> tuple[np.ndarray, np.ndarray]:
        sel = self.labels == class_id
        return self.u[sel], self.v[sel]


def world_to_camera(point: np.ndarray, view: ViewGeometry, t: PlanarTranslation) -> np.ndarray:
    """Express a world point in the camera frame for candidate translation t."""
    center = np.array([t.tx, t.ty, view.height], dtype=np.float64)
    p = np.asarray(point, dtype=np.float64).reshape(3)
    return view.world_to_camera_rotation @ (p - center)


def distort_normalized(xn: np.ndarray, yn: np.ndarray, dist) -> tuple[np.ndarray, np.ndarray]:
    """Apply Brown-Conrady distortion to normalized image coordinates."""
    k1, k2, k3, p1, p2 = dist
    r2 = xn * xn + yn * yn
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = xn * radial + 2.0 * p1 * xn * yn + p2 * (r2 + 2.0 * xn * xn)
    yd = yn * radial + p1 * (r2 + 2.0 * yn * yn) + 2.0 * p2 * xn * yn
    return xd, yd


def project_pixels(cam_points: np.ndarray, intr: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project camera-frame points to pixels.

    Returns (u, v, in_view). Entries with in_view False hold undefined
    coordinates and must not be used.
    """
    pts = np.asarray(cam_points, dtype=np.float64).reshape(-1, 3)
    z = pts[:, 2]
    front = z > 0
    zsafe = np.where(front, z, 1.0)
    xn = pts[:, 0] / zsafe
    yn = pts[:, 1] / zsafe
    if intr.has_distortion:
        xd, yd = distort_normalized(xn, yn, intr.dist)
    else:
        xd, yd = xn, yn
    u = intr.fx * xd + intr.cx
    v = intr.fy * yd + intr.cy
    in_view = front & (u >= 0.0) & (u < intr.width - 0.5) & (v >= 0.0) & (v < intr.height - 0.5)
    return u, v, in_view


def project_pixel(cam_point: np.ndarray, intr: CameraIntrinsics) -> tuple[float, float] | None:
    """Project one camera-frame point; None when behind the camera or out of view."""
    u, v, ok = project_pixels(np.asarray(cam_point, dtype=np.float64).reshape(1, 3), intr)
    if not bool(ok[0]):
        return None
    return float(u[0]), float(v[0])


def render_labeled_points(cloud, view: ViewGeometry, t: PlanarTranslation) -> ProjectedSemanticPoints:
    """Project a labeled cloud and keep the closest point per rounded pixel.

    Depth ties keep the earliest point in cloud order. Output entries are
    sorted by flat pixel index so results are canonical.
    """
    points = np.ascontiguousarray(cloud.points, dtype=np.float64)
    labels = np.ascontiguousarray(cloud.labels, dtype=np.uint8)
    center = np.array([t.tx, t.ty, view.height], dtype=np.float64)
    r_cw = view.world_to_camera_rotation
    cam = np.ascontiguousarray((points - center) @ r_cw.T)

    intr = view.intrinsics
    buf = _kernels.FrameBuffers(intr.width, intr.height, points.shape[0])
    n = _kernels.render_points(
        cam, labels, 0.0, 0.0, 0.0,
        intr.fx, intr.fy, intr.cx, intr.cy,
        *intr.dist, intr.has_distortion,
        intr.width, intr.height,
        buf.depth, buf.head, buf.touched,
        buf.pu, buf.pv, buf.pcls, buf.pidx)

    order = np.argsort(buf.touched[:n], kind="stable")
    return ProjectedSemanticPoints(
        u=buf.pu[:n][order].copy(),
        v=buf.pv[:n][order].copy(),
        depth=buf.depth[buf.touched[:n][order]].copy(),
        labels=buf.pcls[:n][order].copy(),
        width=intr.width,
        height=intr.height,
        translation=t,
    )
