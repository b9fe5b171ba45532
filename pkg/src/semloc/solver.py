"""Bounded coarse-to-fine search for the planar camera translation.

Each candidate re-renders the pruned edge map through the full camera model
(no pixel-shift shortcut), scores the alignment objective, and the stage
winner seeds a finer window. All stage grids are anchored so candidate
coordinates are exact multiples of the spacing around the prior.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .alignment import (ClassEdgeSets, DistanceFieldStack, LossConfig, NoEvidenceError,
                        _forward_weights, _reverse_weights, build_distance_fields,
                        extract_edges)
from .geometry import PlanarTranslation, ViewGeometry
from .semantic_map import EmptyMapError, VoxelEdgeMap


@dataclass(frozen=True)
class SearchConfig:
    """Bounded search region and refinement schedule.

    Stage 0 covers every multiple of spacings[0] inside the square region of
    half-width region_radius around the prior. Stage s > 0 re-centers on the
    previous best and spans +-refine_halfwidth * spacings[s-1] at its own
    spacing, clipped to the region. Frames whose mask has fewer than
    gate_threshold edge pixels are flagged gated (still localized).
    """

    region_radius: float = 30.0
    spacings: tuple[float, ...] = (4.0, 1.0, 0.25)
    refine_halfwidth: int = 2
    gate_threshold: int = 8000

    def __post_init__(self):
        if not self.region_radius > 0:
            raise ValueError("region_radius must be positive")
        sp = tuple(float(s) for s in self.spacings)
        if not sp or any(s <= 0 for s in sp):
            raise ValueError("spacings must be positive")
        if any(b >= a for a, b in zip(sp, sp[1:])) and len(sp) > 1:
            if not all(b < a for a, b in zip(sp, sp[1:])):
                raise ValueError("spacings must be strictly decreasing")
        object.__setattr__(self, "spacings", sp)
        if self.refine_halfwidth < 1:
            raise ValueError("refine_halfwidth must be >= 1")
        if self.gate_threshold < 0:
            raise ValueError("gate_threshold must be >= 0")


@dataclass
class StageTrace:
    spacing: float
    t: tuple[float, float]
    loss: float
    candidates: int


@dataclass
class LocalizationResult:
    t_star: PlanarTranslation
    loss: float
    edge_count: int
    gated: bool
    gate_reason: str | None
    trace: list[StageTrace]
    wall_time_s: float
    frame_id: str | None = None
    error: str | None = None


@dataclass
class Frame:
    """One localization input: a segmented image plus its navigation prior."""

    frame_id: str
    mask: np.ndarray
    view: ViewGeometry
    prior: tuple[float, float] = (0.0, 0.0)


class _Matcher:
    """Per-frame evaluation state: rotated map, fields, reusable buffers."""

    def __init__(self, edge_map: VoxelEdgeMap, view: ViewGeometry,
                 prior: tuple[float, float], edges: ClassEdgeSets,
                 fields: DistanceFieldStack, cfg: LossConfig):
        intr = view.intrinsics
        self.intr = intr
        self.cfg = cfg
        r_cw = view.world_to_camera_rotation
        center0 = np.array([prior[0], prior[1], view.height], dtype=np.float64)
        # camera-frame coordinates at t = (0, 0); candidate translations only
        # subtract a rotated in-plane shift, so the rotation happens once
        self.cam0 = np.ascontiguousarray((edge_map.points - center0) @ r_cw.T)
        self.basis = np.ascontiguousarray(r_cw[:, :2])
        self.labels = np.ascontiguousarray(edge_map.labels, dtype=np.uint8)
        self.n_points = self.cam0.shape[0]

        k = fields.num_classes
        self.fields_stack = np.ascontiguousarray(fields.stack)
        self.fwd_w, self.fwd_hard = _forward_weights(cfg, k)
        self.rev_w, self.rev_hard = _reverse_weights(cfg, k)
        self.num_classes = k
        self.e_row = edges.rows
        self.e_col = edges.cols
        self.e_lab = edges.labels
        self.n_edges = edges.total

        self.buf = _kernels.FrameBuffers(intr.width, intr.height, self.n_points)
        self.npx = intr.width * intr.height
        self.scan_m = _kernels.scan_radius(cfg.d_max)
        self.dmax2 = cfg.d_max * cfg.d_max
        if cfg.lambda_reverse > 0 and self.n_edges > 0:
            # edge pixels are fixed across candidates, so the proximity grids
            # are built once and each candidate iterates over its rendered
            # points instead of the edge set
            self.edge_lab_grid = np.full(self.npx, 255, dtype=np.uint8)
            self.edge_id_grid = np.full(self.npx, -1, dtype=np.int32)
            self.near_cls = np.zeros(k * self.npx, dtype=np.uint8)
            self.near_any = np.zeros(self.npx, dtype=np.uint8)
            _kernels.build_edge_grids(
                self.e_row, self.e_col, self.e_lab, intr.width,
                intr.height, self.scan_m, self.npx, self.edge_lab_grid,
                self.edge_id_grid, self.near_cls, self.near_any)
            if self.rev_hard:
                self.run_min2 = np.empty(self.n_edges, dtype=np.float64)
            else:
                self.run_min2k = np.empty(self.n_edges * k, dtype=np.float64)
        self.active_cam = self.cam0
        self.active_labels = self.labels

    def set_stage_window(self, tx_lo: float, tx_hi: float,
                         ty_lo: float, ty_hi: float) -> None:
        """Restrict to points that can enter the view for any t in the window.

        Conservative interval bounds on the undistorted projection; with
        distortion active every point stays active.
        """
        if self.intr.has_distortion or self.n_points == 0:
            self.active_cam = self.cam0
            self.active_labels = self.labels
            return
        bx, by, bz = self.basis[0], self.basis[1], self.basis[2]

        def axis_interval(base, cx, cy):
            shift_lo = min(cx * tx_lo, cx * tx_hi) + min(cy * ty_lo, cy * ty_hi)
            shift_hi = max(cx * tx_lo, cx * tx_hi) + max(cy * ty_lo, cy * ty_hi)
            return base - shift_hi, base - shift_lo

        x_lo, x_hi = axis_interval(self.cam0[:, 0], bx[0], bx[1])
        y_lo, y_hi = axis_interval(self.cam0[:, 1], by[0], by[1])
        z_lo, z_hi = axis_interval(self.cam0[:, 2], bz[0], bz[1])

        keep = z_hi > 0.0
        # where z can get arbitrarily close to 0 the projection is unbounded,
        # so those points must stay active
        bounded = keep & (z_lo > 0.0)
        intr = self.intr

        def ratio_hi(n_lo, n_hi):
            return np.where(n_hi >= 0, n_hi / z_lo, n_hi / z_hi)

        def ratio_lo(n_lo, n_hi):
            return np.where(n_lo <= 0, n_lo / z_lo, n_lo / z_hi)

        with np.errstate(divide="ignore", invalid="ignore"):
            u_hi = intr.fx * ratio_hi(x_lo, x_hi) + intr.cx
            u_lo = intr.fx * ratio_lo(x_lo, x_hi) + intr.cx
            v_hi = intr.fy * ratio_hi(y_lo, y_hi) + intr.cy
            v_lo = intr.fy * ratio_lo(y_lo, y_hi) + intr.cy
        visible = (u_hi >= 0.0) & (u_lo < intr.width - 0.5) \
            & (v_hi >= 0.0) & (v_lo < intr.height - 0.5)
        keep &= np.where(bounded, visible, True)
        self.active_cam = np.ascontiguousarray(self.cam0[keep])
        self.active_labels = np.ascontiguousarray(self.labels[keep])

    def loss(self, tx: float, ty: float) -> tuple[float, int]:
        sx = tx * self.basis[0, 0] + ty * self.basis[0, 1]
        sy = tx * self.basis[1, 0] + ty * self.basis[1, 1]
        sz = tx * self.basis[2, 0] + ty * self.basis[2, 1]
        buf = self.buf
        buf.reset()
        intr = self.intr
        n = _kernels.render_points(
            self.active_cam, self.active_labels, sx, sy, sz,
            intr.fx, intr.fy, intr.cx, intr.cy,
            *intr.dist, intr.has_distortion,
            intr.width, intr.height,
            buf.depth, buf.head, buf.touched,
            buf.pu, buf.pv, buf.pcls, buf.pidx)
        buf.count = n

        cfg = self.cfg
        value = 0.0
        if cfg.lambda_forward > 0:
            if n == 0:
                return float("inf"), 0
            fwd = _kernels.forward_loss_sum(n, buf.pu, buf.pv, buf.pcls,
                                            self.fields_stack, self.fwd_w,
                                            self.fwd_hard, cfg.delta)
            value += cfg.lambda_forward * (fwd / n)
        if cfg.lambda_reverse > 0 and self.n_edges > 0:
            if self.rev_hard:
                self.run_min2.fill(self.dmax2)
                _kernels.scatter_reverse_min(
                    n, buf.touched, buf.pu, buf.pv, buf.pcls,
                    intr.width, intr.height, self.scan_m, self.npx,
                    self.edge_lab_grid, self.edge_id_grid, self.near_cls,
                    self.run_min2)
                rev = _kernels.huber_sqrt_sum(self.run_min2, cfg.delta)
            else:
                self.run_min2k.fill(self.dmax2)
                _kernels.scatter_reverse_min_all(
                    n, buf.touched, buf.pu, buf.pv, buf.pcls,
                    intr.width, intr.height, self.scan_m, self.num_classes,
                    self.edge_lab_grid, self.edge_id_grid, self.near_any,
                    self.run_min2k)
                rev = _kernels.huber_weighted_sum(
                    self.e_lab, self.run_min2k, self.rev_w, cfg.delta,
                    self.num_classes)
            value += cfg.lambda_reverse * (rev / self.n_edges)
        return value, n


def _stage_offsets(spacing: float, halfwidth: float) -> np.ndarray:
    k_max = int(np.floor(halfwidth / spacing + 1e-9))
    return np.arange(-k_max, k_max + 1, dtype=np.float64) * spacing


def localize_frame(edge_map: VoxelEdgeMap, mask: np.ndarray, view: ViewGeometry,
                   loss_cfg: LossConfig | None = None,
                   search_cfg: SearchConfig | None = None,
                   prior: tuple[float, float] = (0.0, 0.0),
                   frame_id: str | None = None) -> LocalizationResult:
    """Estimate the in-plane offset of the camera relative to the prior.

    Candidate losses are cached by exact translation, so re-visited grid
    points (including each stage center) are never re-rendered; the stage
    trace is therefore non-increasing. Ties are broken by the smaller
    translation norm, then lexicographically by (tx, ty).
    """
    t_start = time.perf_counter()
    loss_cfg = loss_cfg or LossConfig()
    search_cfg = search_cfg or SearchConfig()
    if len(edge_map) == 0:
        raise EmptyMapError("edge map has no voxels")

    edges = extract_edges(mask)
    gated = edges.total < search_cfg.gate_threshold
    gate_reason = None
    if gated:
        gate_reason = (f"edge evidence {edges.total} below threshold "
                       f"{search_cfg.gate_threshold}")
    fields = build_distance_fields(edges, loss_cfg.d_max)

    matcher = _Matcher(edge_map, view, prior, edges, fields, loss_cfg)
    radius = search_cfg.region_radius
    cache: dict[tuple[float, float], tuple[float, int]] = {}
    any_projected = False

    def evaluate(tx: float, ty: float) -> float:
        nonlocal any_projected
        key = (tx, ty)
        hit = cache.get(key)
        if hit is None:
            hit = matcher.loss(tx, ty)
            cache[key] = hit
        if hit[1] > 0:
            any_projected = True
        return hit[0]

    clip = radius + 1e-9
    best: tuple[float, float, float, float] | None = None  # loss, |t|^2, tx, ty
    trace: list[StageTrace] = []
    for stage, spacing in enumerate(search_cfg.spacings):
        if stage == 0:
            center = (0.0, 0.0)
            offsets = _stage_offsets(spacing, radius)
            halfwidth = radius
        else:
            center = (best[2], best[3])
            halfwidth = search_cfg.refine_halfwidth * search_cfg.spacings[stage - 1]
            offsets = _stage_offsets(spacing, halfwidth)
        matcher.set_stage_window(max(center[0] - halfwidth, -radius),
                                 min(center[0] + halfwidth, radius),
                                 max(center[1] - halfwidth, -radius),
                                 min(center[1] + halfwidth, radius))

        n_cand = 0
        stage_best = None
        for ox in offsets:
            tx = center[0] + ox
            if tx < -clip or tx > clip:
                continue
            for oy in offsets:
                ty = center[1] + oy
                if ty < -clip or ty > clip:
                    continue
                value = evaluate(tx, ty)
                n_cand += 1
                key = (value, tx * tx + ty * ty, tx, ty)
                if stage_best is None or key < stage_best:
                    stage_best = key
        if best is None or stage_best < best:
            best = stage_best
        trace.append(StageTrace(spacing=spacing, t=(best[2], best[3]),
                                loss=best[0], candidates=n_cand))

    if not any_projected:
        raise NoEvidenceError("map points never project into the view "
                              "at any candidate translation")
    if not np.isfinite(best[0]):
        raise NoEvidenceError("alignment objective is undefined at every candidate")

    return LocalizationResult(
        t_star=PlanarTranslation(best[2], best[3]),
        loss=float(best[0]),
        edge_count=edges.total,
        gated=gated,
        gate_reason=gate_reason,
        trace=trace,
        wall_time_s=time.perf_counter() - t_start,
        frame_id=frame_id,
    )


_POOL_STATE: dict = {}


def _pool_init(edge_map, loss_cfg, search_cfg):
    _POOL_STATE["args"] = (edge_map, loss_cfg, search_cfg)
    _kernels.warmup()


def _pool_run(frame: Frame) -> LocalizationResult:
    edge_map, loss_cfg, search_cfg = _POOL_STATE["args"]
    return _localize_guarded(edge_map, frame, loss_cfg, search_cfg)


def _localize_guarded(edge_map, frame: Frame, loss_cfg, search_cfg) -> LocalizationResult:
    try:
        return localize_frame(edge_map, frame.mask, frame.view, loss_cfg,
                              search_cfg, prior=frame.prior, frame_id=frame.frame_id)
    except (NoEvidenceError, EmptyMapError, ValueError) as exc:
        return LocalizationResult(
            t_star=PlanarTranslation(0.0, 0.0), loss=float("inf"),
            edge_count=0, gated=True, gate_reason=None, trace=[],
            wall_time_s=0.0, frame_id=frame.frame_id, error=str(exc))


def localize_trajectory(edge_map: VoxelEdgeMap, frames: list[Frame],
                        loss_cfg: LossConfig | None = None,
                        search_cfg: SearchConfig | None = None,
                        workers: int = 1) -> list[LocalizationResult]:
    """Localize a batch of frames; per-frame failures become result records.

    Results are returned in input order and are identical for any worker
    count; workers > 1 fans frames out across processes.
    """
    loss_cfg = loss_cfg or LossConfig()
    search_cfg = search_cfg or SearchConfig()
    if workers <= 1:
        return [_localize_guarded(edge_map, f, loss_cfg, search_cfg) for f in frames]
    with ProcessPoolExecutor(max_workers=workers, initializer=_pool_init,
                             initargs=(edge_map, loss_cfg, search_cfg)) as pool:
        return list(pool.map(_pool_run, frames, chunksize=1))
