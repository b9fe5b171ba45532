"""Compiled inner loops for per-candidate rendering and loss evaluation.

All kernels are single-threaded and iterate in input order, so results are
deterministic. Pure-array reference implementations live in the test suite;
every kernel is pinned against them there.
"""

from __future__ import annotations

import numpy as np
from numba import njit


class FrameBuffers:
    """Reusable dense buffers for depth-buffered rendering of one view size.

    head maps a flat pixel index to the record slot of its current winner
    (-1 when empty); touched lists the occupied pixels so reset cost is
    proportional to what the previous candidate actually wrote.
    """

    def __init__(self, width: int, height: int, max_points: int):
        self.width = width
        self.height = height
        npx = width * height
        self.depth = np.full(npx, np.inf, dtype=np.float64)
        self.head = np.full(npx, -1, dtype=np.int32)
        cap = min(max_points, npx)
        self.touched = np.empty(cap, dtype=np.int32)
        self.pu = np.empty(cap, dtype=np.float64)
        self.pv = np.empty(cap, dtype=np.float64)
        self.pcls = np.empty(cap, dtype=np.uint8)
        self.pidx = np.empty(cap, dtype=np.int64)
        self.count = 0

    def reset(self):
        if self.count:
            _reset(self.count, self.touched, self.depth, self.head)
            self.count = 0


@njit(cache=True)
def _reset(n_prev, touched, depth, head):
    for s in range(n_prev):
        px = touched[s]
        depth[px] = np.inf
        head[px] = -1


@njit(cache=True)
def _huber(d, delta):
    if d <= delta:
        return 0.5 * d * d
    return delta * (d - 0.5 * delta)


@njit(cache=True)
def render_points(cam, labels, sx, sy, sz,
                  fx, fy, cx, cy,
                  k1, k2, k3, p1, p2, use_dist,
                  width, height,
                  depth, head, touched, pu, pv, pcls, pidx):
    """Project camera-frame points shifted by (sx, sy, sz) and depth-buffer them.

    The shift is the candidate translation expressed in the camera frame, so
    per-candidate work avoids re-rotating the cloud. Returns the number of
    occupied pixels; record slot s holds the winner at pixel touched[s].
    Strict depth comparison keeps the earliest point on exact ties.
    """
    n = 0
    for i in range(cam.shape[0]):
        z = cam[i, 2] - sz
        if z <= 0.0:
            continue
        xn = (cam[i, 0] - sx) / z
        yn = (cam[i, 1] - sy) / z
        if use_dist:
            r2 = xn * xn + yn * yn
            radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
            xd = xn * radial + 2.0 * p1 * xn * yn + p2 * (r2 + 2.0 * xn * xn)
            yd = yn * radial + p1 * (r2 + 2.0 * yn * yn) + 2.0 * p2 * xn * yn
        else:
            xd = xn
            yd = yn
        u = fx * xd + cx
        v = fy * yd + cy
        if u < 0.0 or v < 0.0 or u >= width - 0.5 or v >= height - 0.5:
            continue
        col = int(np.floor(u + 0.5))
        row = int(np.floor(v + 0.5))
        px = row * width + col
        if z < depth[px]:
            s = head[px]
            if s < 0:
                s = n
                n += 1
                head[px] = s
                touched[s] = px
            depth[px] = z
            pu[s] = u
            pv[s] = v
            pcls[s] = labels[i]
            pidx[s] = i
    return n


@njit(cache=True)
def forward_loss_sum(n, pu, pv, pcls, fields, conf, hard, delta):
    """Sum of per-point forward costs; caller divides by n.

    fields is the (height, width, classes) clamped distance stack, sampled
    bilinearly with border replication at the right/bottom edge.
    """
    hgt, wid, k_total = fields.shape
    total = 0.0
    for s in range(n):
        u = pu[s]
        v = pv[s]
        x0 = int(np.floor(u))
        y0 = int(np.floor(v))
        x1 = x0 + 1 if x0 + 1 <= wid - 1 else x0
        y1 = y0 + 1 if y0 + 1 <= hgt - 1 else y0
        wx = u - x0
        wy = v - y0
        w00 = (1.0 - wy) * (1.0 - wx)
        w01 = (1.0 - wy) * wx
        w10 = wy * (1.0 - wx)
        w11 = wy * wx
        c = pcls[s]
        if hard:
            d = (w00 * fields[y0, x0, c] + w01 * fields[y0, x1, c]
                 + w10 * fields[y1, x0, c] + w11 * fields[y1, x1, c])
            total += _huber(d, delta)
        else:
            acc = 0.0
            for k in range(k_total):
                d = (w00 * fields[y0, x0, k] + w01 * fields[y0, x1, k]
                     + w10 * fields[y1, x0, k] + w11 * fields[y1, x1, k])
                acc += conf[c, k] * _huber(d, delta)
            total += acc
    return total


@njit(cache=True)
def build_edge_grids(e_row, e_col, e_lab, width, height, scan_m, npx,
                     edge_lab_grid, edge_id_grid, near_cls, near_any):
    """Static per-frame lookup grids over the mask's edge pixels.

    edge_lab_grid holds the edge pixel's class (255 where none) and
    edge_id_grid its index; near_cls[k * npx + px] flags cells with any
    class-k edge pixel within scan_m cells and near_any[px] with any edge
    pixel at all, so per-candidate work can skip points that cannot pair
    with any edge pixel it would have to resolve.
    """
    for j in range(e_row.shape[0]):
        r = e_row[j]
        c = e_col[j]
        px = r * width + c
        edge_lab_grid[px] = e_lab[j]
        edge_id_grid[px] = j
        base_k = e_lab[j] * npx
        r0 = r - scan_m
        r1 = r + scan_m
        c0 = c - scan_m
        c1 = c + scan_m
        if r0 < 0:
            r0 = 0
        if r1 > height - 1:
            r1 = height - 1
        if c0 < 0:
            c0 = 0
        if c1 > width - 1:
            c1 = width - 1
        for rr in range(r0, r1 + 1):
            base = rr * width
            for cc in range(c0, c1 + 1):
                near_cls[base_k + base + cc] = 1
                near_any[base + cc] = 1


@njit(cache=True)
def scatter_reverse_min(n, touched, pu, pv, pcls, width, height, scan_m,
                        npx, edge_lab_grid, edge_id_grid, near_cls, run_min2):
    """Update per-edge-pixel squared nearest-point distances from a render.

    Point-centric twin of the edge-centric window scan: pairs (edge, point)
    within scan_m cells of each other are exactly the pairs the reverse loss
    considers, so the running minima match the edge-centric result. Points
    with no class-matching edge pixel in reach are skipped outright.
    """
    for s in range(n):
        px = touched[s]
        k = pcls[s]
        if near_cls[k * npx + px] == 0:
            continue
        row = px // width
        col = px - row * width
        r0 = row - scan_m
        r1 = row + scan_m
        c0 = col - scan_m
        c1 = col + scan_m
        if r0 < 0:
            r0 = 0
        if r1 > height - 1:
            r1 = height - 1
        if c0 < 0:
            c0 = 0
        if c1 > width - 1:
            c1 = width - 1
        u = pu[s]
        v = pv[s]
        for rr in range(r0, r1 + 1):
            base = rr * width
            for cc in range(c0, c1 + 1):
                if edge_lab_grid[base + cc] == k:
                    du = u - cc
                    dv = v - rr
                    d2 = du * du + dv * dv
                    j = edge_id_grid[base + cc]
                    if d2 < run_min2[j]:
                        run_min2[j] = d2


@njit(cache=True)
def scatter_reverse_min_all(n, touched, pu, pv, pcls, width, height, scan_m,
                            k_total, edge_lab_grid, edge_id_grid, near_any,
                            run_min2k):
    """Confusion-mode twin of scatter_reverse_min: every (edge, point) pair
    within the window updates the pair's (edge, point-class) running minimum
    in run_min2k, laid out as edge index times k_total plus class.
    """
    for s in range(n):
        px = touched[s]
        if near_any[px] == 0:
            continue
        k = pcls[s]
        row = px // width
        col = px - row * width
        r0 = row - scan_m
        r1 = row + scan_m
        c0 = col - scan_m
        c1 = col + scan_m
        if r0 < 0:
            r0 = 0
        if r1 > height - 1:
            r1 = height - 1
        if c0 < 0:
            c0 = 0
        if c1 > width - 1:
            c1 = width - 1
        u = pu[s]
        v = pv[s]
        for rr in range(r0, r1 + 1):
            base = rr * width
            for cc in range(c0, c1 + 1):
                if edge_lab_grid[base + cc] != 255:
                    du = u - cc
                    dv = v - rr
                    d2 = du * du + dv * dv
                    pos = edge_id_grid[base + cc] * k_total + k
                    if d2 < run_min2k[pos]:
                        run_min2k[pos] = d2


@njit(cache=True)
def huber_sqrt_sum(run_min2, delta):
    total = 0.0
    for j in range(run_min2.shape[0]):
        total += _huber(np.sqrt(run_min2[j]), delta)
    return total


@njit(cache=True)
def huber_weighted_sum(e_lab, run_min2k, wmat, delta, k_total):
    total = 0.0
    for j in range(e_lab.shape[0]):
        base = j * k_total
        acc = 0.0
        for k in range(k_total):
            acc += wmat[e_lab[j], k] * _huber(np.sqrt(run_min2k[base + k]),
                                              delta)
        total += acc
    return total


def scan_radius(d_max: float) -> int:
    return int(np.floor(d_max + 0.5))


def warmup():
    """Trigger compilation of all kernels on tiny inputs."""
    cam = np.array([[0.0, 0.0, 2.0], [0.5, 0.5, 3.0]])
    labels = np.array([0, 1], dtype=np.uint8)
    buf = FrameBuffers(8, 8, 2)
    n = render_points(cam, labels, 0.0, 0.0, 0.0, 4.0, 4.0, 4.0, 4.0,
                      0.0, 0.0, 0.0, 0.0, 0.0, False, 8, 8,
                      buf.depth, buf.head, buf.touched,
                      buf.pu, buf.pv, buf.pcls, buf.pidx)
    fields = np.zeros((8, 8, 2), dtype=np.float64)
    eye = np.eye(2)
    forward_loss_sum(n, buf.pu, buf.pv, buf.pcls, fields, eye, True, 2.0)
    forward_loss_sum(n, buf.pu, buf.pv, buf.pcls, fields, eye, False, 2.0)
    npx = 64
    er = np.array([1], dtype=np.int32)
    ec = np.array([1], dtype=np.int32)
    el = np.array([0], dtype=np.uint8)
    edge_lab_grid = np.full(npx, 255, dtype=np.uint8)
    edge_id_grid = np.full(npx, -1, dtype=np.int32)
    near_cls = np.zeros(2 * npx, dtype=np.uint8)
    near_any = np.zeros(npx, dtype=np.uint8)
    m = scan_radius(5.0)
    build_edge_grids(er, ec, el, 8, 8, m, npx,
                     edge_lab_grid, edge_id_grid, near_cls, near_any)
    run_min2 = np.full(1, 25.0, dtype=np.float64)
    scatter_reverse_min(n, buf.touched, buf.pu, buf.pv, buf.pcls, 8, 8,
                        m, npx, edge_lab_grid, edge_id_grid,
                        near_cls, run_min2)
    huber_sqrt_sum(run_min2, 2.0)
    run_min2k = np.full(2, 25.0, dtype=np.float64)
    scatter_reverse_min_all(n, buf.touched, buf.pu, buf.pv, buf.pcls, 8, 8,
                            m, 2, edge_lab_grid, edge_id_grid, near_any,
                            run_min2k)
    huber_weighted_sum(el, run_min2k, eye, 2.0, 2)
    buf.reset()
