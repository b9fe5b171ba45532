import numpy as np
import pytest

from semloc.alignment import (ClassEdgeSets, DistanceFieldStack, LossConfig,
                              NoEvidenceError, build_distance_fields,
                              extract_edges, forward_loss, huber, reverse_loss,
                              total_loss)
from semloc.classes import IGNORE_LABEL, NUM_CLASSES
from semloc.crossmodal import ConfusionMatrix, posterior_weights
from semloc.geometry import (CameraIntrinsics, PlanarTranslation, RigidPose,
                             ViewGeometry, render_labeled_points)
from semloc.semantic_map import SemanticPointCloud


def make_proj(u, v, labels, width, height):
    from semloc.geometry import ProjectedSemanticPoints
    u = np.asarray(u, dtype=np.float64)
    return ProjectedSemanticPoints(
        u=u, v=np.asarray(v, dtype=np.float64),
        depth=np.ones_like(u), labels=np.asarray(labels, dtype=np.uint8),
        width=width, height=height)


def random_confusion(rng, k):
    mat = rng.uniform(0.05, 1.0, (k, k))
    mat /= mat.sum(axis=1, keepdims=True)
    return ConfusionMatrix(mat)


def random_scene(rng, k=4, size=24, n_points=60):
    mask = rng.integers(0, k, (size, size)).astype(np.uint8)
    edges = extract_edges(mask, num_classes=k)
    u = rng.uniform(0.0, size - 0.51, n_points)
    v = rng.uniform(0.0, size - 0.51, n_points)
    labels = rng.integers(0, k, n_points)
    return mask, edges, make_proj(u, v, labels, size, size)


class TestHuber:
    def test_frozen_values(self):
        assert huber(0.0, 2.0) == 0.0
        assert huber(2.0, 2.0) == 2.0
        assert huber(5.0, 2.0) == 8.0
        assert huber(3.0, 2.0) == 4.0
        assert huber(4.0, 2.0) == 6.0

    def test_continuity_and_monotonicity(self, rng):
        delta = 1.7
        d = np.sort(rng.uniform(0, 10, 300))
        vals = huber(d, delta)
        assert np.all(np.diff(vals) >= 0)
        eps = 1e-8
        assert abs(huber(delta + eps, delta) - huber(delta - eps, delta)) < 1e-6

    def test_array_input(self):
        out = huber(np.array([0.0, 2.0, 5.0]), 2.0)
        assert np.array_equal(out, [0.0, 2.0, 8.0])


class TestExtractEdges:
    def test_two_by_two_example(self):
        mask = np.array([[0, 0], [0, 1]], dtype=np.uint8)
        edges = extract_edges(mask, num_classes=2)
        a = {tuple(p) for p in edges.class_pixels(0)}
        b = {tuple(p) for p in edges.class_pixels(1)}
        assert a == {(0, 1), (1, 0)}
        assert b == {(1, 1)}
        assert edges.total == 3

    def test_uniform_mask_has_no_edges(self):
        mask = np.full((6, 9), 3, dtype=np.uint8)
        assert extract_edges(mask).total == 0

    def test_ignore_pixels_are_inert(self):
        # an ignore pixel is never an edge and never makes a neighbor one
        mask = np.full((3, 3), 2, dtype=np.uint8)
        mask[1, 1] = IGNORE_LABEL
        assert extract_edges(mask).total == 0

    def test_matches_brute_force(self, rng):
        for _ in range(20):
            k = int(rng.integers(2, 6))
            mask = rng.integers(0, k, (15, 11)).astype(np.uint8)
            mask[rng.random((15, 11)) < 0.1] = IGNORE_LABEL
            edges = extract_edges(mask, num_classes=k)
            want = set()
            for r in range(15):
                for c in range(11):
                    if mask[r, c] == IGNORE_LABEL:
                        continue
                    for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                        rr, cc = r + dr, c + dc
                        if not (0 <= rr < 15 and 0 <= cc < 11):
                            continue
                        if mask[rr, cc] != IGNORE_LABEL and mask[rr, cc] != mask[r, c]:
                            want.add((r, c))
                            break
            got = set(zip(edges.rows.tolist(), edges.cols.tolist()))
            assert got == want
            assert np.array_equal(edges.labels, mask[edges.rows, edges.cols])

    def test_raster_order(self, rng):
        mask = rng.integers(0, 3, (9, 9)).astype(np.uint8)
        edges = extract_edges(mask, num_classes=3)
        flat = edges.rows.astype(np.int64) * 9 + edges.cols
        assert np.all(np.diff(flat) > 0)

    def test_rejects_bad_labels(self):
        with pytest.raises(ValueError):
            extract_edges(np.array([[0, 9]], dtype=np.uint8), num_classes=4)


class TestDistanceFields:
    def test_single_edge_pixel_example(self):
        mask = np.zeros((5, 5), dtype=np.uint8)
        mask[0, 0] = 1
        edges = extract_edges(mask, num_classes=2)
        for d_max in (5.0, 2.0):
            fields = build_distance_fields(edges, d_max=d_max)
            # class 1 has a single edge pixel at (0, 0)
            assert fields.field(1)[2, 2] == min(2.0 * np.sqrt(2.0), d_max)
            assert fields.field(1)[0, 0] == 0.0

    def test_empty_class_is_d_max(self):
        mask = np.zeros((4, 4), dtype=np.uint8)
        mask[0, 0] = 1
        edges = extract_edges(mask, num_classes=3)
        fields = build_distance_fields(edges, d_max=4.0)
        assert np.all(fields.field(2) == 4.0)

    def test_matches_brute_force(self, rng):
        for _ in range(5):
            k = 4
            mask = rng.integers(0, k, (12, 10)).astype(np.uint8)
            edges = extract_edges(mask, num_classes=k)
            d_max = 3.5
            fields = build_distance_fields(edges, d_max=d_max)
            for class_id in range(k):
                pix = edges.class_pixels(class_id)
                for r in range(12):
                    for c in range(10):
                        if pix.shape[0]:
                            d = np.sqrt(((pix - [r, c]) ** 2).sum(axis=1)).min()
                        else:
                            d = np.inf
                        want = min(d, d_max)
                        assert abs(fields.field(class_id)[r, c] - want) < 1e-9

    def test_rejects_bad_d_max(self):
        edges = extract_edges(np.zeros((3, 3), dtype=np.uint8))
        with pytest.raises(ValueError):
            build_distance_fields(edges, d_max=0.0)


def forward_oracle(proj, fields, cfg):
    """Per-point bilinear sample and Huber, in plain python."""
    stack = fields.stack
    h, w, k = stack.shape
    if cfg.confusion is None:
        weights = np.eye(k)
    else:
        weights = cfg.confusion.matrix
    total = 0.0
    for i in range(len(proj)):
        u, v = proj.u[i], proj.v[i]
        x0, y0 = int(np.floor(u)), int(np.floor(v))
        x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
        wx, wy = u - x0, v - y0
        row = weights[proj.labels[i]]
        acc = 0.0
        for kk in range(k):
            d = ((1 - wy) * ((1 - wx) * stack[y0, x0, kk] + wx * stack[y0, x1, kk])
                 + wy * ((1 - wx) * stack[y1, x0, kk] + wx * stack[y1, x1, kk]))
            acc += row[kk] * huber(d, cfg.delta)
        total += acc
    return total / len(proj)


def reverse_oracle(edges, proj, cfg):
    """Per-edge-pixel nearest same-class point scan, in plain python."""
    k = edges.num_classes
    if cfg.confusion is None:
        weights = np.eye(k)
    elif cfg.reverse_weighting == "row":
        weights = cfg.confusion.matrix
    else:
        weights = posterior_weights(cfg.confusion)
    total = 0.0
    for j in range(edges.total):
        r, c = edges.rows[j], edges.cols[j]
        acc = 0.0
        for kk in range(k):
            sel = proj.labels == kk
            if np.any(sel):
                d = np.hypot(proj.u[sel] - c, proj.v[sel] - r).min()
                d = min(d, cfg.d_max)
            else:
                d = cfg.d_max
            acc += weights[edges.labels[j], kk] * huber(d, cfg.delta)
        total += acc
    return total / edges.total


class TestForwardLoss:
    def test_two_point_example(self):
        # distances 0 and 3 at delta 2: (0 + huber(3, 2)) / 2 = 2
        stack = np.full((5, 8, 2), 5.0)
        stack[1, 1, 0] = 0.0
        stack[1, 3, 0] = 3.0
        fields = DistanceFieldStack(stack=stack, d_max=5.0)
        proj = make_proj([1.0, 3.0], [1.0, 1.0], [0, 0], 8, 5)
        assert forward_loss(proj, fields, LossConfig(delta=2.0)) == 2.0

    def test_confusion_row_example(self):
        # row [0.8, 0.2], class distances (0, 4), delta 2 -> 0.2 * 6 = 1.2
        stack = np.zeros((4, 4, 2))
        stack[2, 2, 0] = 0.0
        stack[2, 2, 1] = 4.0
        fields = DistanceFieldStack(stack=stack, d_max=5.0)
        proj = make_proj([2.0], [2.0], [0], 4, 4)
        cfg = LossConfig(delta=2.0, confusion=ConfusionMatrix(
            [[0.8, 0.2], [0.1, 0.9]]))
        assert abs(forward_loss(proj, fields, cfg) - 1.2) < 1e-12

    def test_bilinear_sampling_by_hand(self):
        stack = np.zeros((4, 4, 1))
        stack[1, 1, 0] = 1.0
        stack[1, 2, 0] = 2.0
        stack[2, 1, 0] = 3.0
        stack[2, 2, 0] = 4.0
        fields = DistanceFieldStack(stack=stack, d_max=5.0)
        proj = make_proj([1.25], [1.5], [0], 4, 4)
        # sample = 0.5*(0.75*1 + 0.25*2) + 0.5*(0.75*3 + 0.25*4) = 2.25
        want = huber(2.25, 2.0)
        assert abs(forward_loss(proj, fields, LossConfig(delta=2.0)) - want) < 1e-12

    def test_matches_oracle(self, rng):
        for _ in range(15):
            k = 4
            mask, edges, proj = random_scene(rng, k=k)
            fields = build_distance_fields(edges, d_max=5.0)
            for cfg in (LossConfig(),
                        LossConfig(confusion=random_confusion(rng, k)),
                        LossConfig(delta=1.0, d_max=3.0)):
                fields_cfg = build_distance_fields(edges, d_max=cfg.d_max)
                got = forward_loss(proj, fields_cfg, cfg)
                want = forward_oracle(proj, fields_cfg, cfg)
                assert abs(got - want) < 1e-12

    def test_empty_proj_raises(self):
        fields = DistanceFieldStack(stack=np.zeros((4, 4, 2)), d_max=5.0)
        proj = make_proj([], [], [], 4, 4)
        with pytest.raises(NoEvidenceError):
            forward_loss(proj, fields, LossConfig())


class TestReverseLoss:
    def test_single_edge_example(self):
        # one edge pixel 3 px from its only same-class point: huber(3, 2) = 4
        edges = ClassEdgeSets(width=8, height=8, num_classes=2,
                              rows=np.array([0], dtype=np.int32),
                              cols=np.array([0], dtype=np.int32),
                              labels=np.array([1], dtype=np.uint8))
        proj = make_proj([3.0], [0.0], [1], 8, 8)
        assert reverse_loss(edges, proj, LossConfig(delta=2.0, d_max=5.0)) == 4.0

    def test_missing_class_contributes_d_max(self):
        edges = ClassEdgeSets(width=8, height=8, num_classes=2,
                              rows=np.array([4], dtype=np.int32),
                              cols=np.array([4], dtype=np.int32),
                              labels=np.array([0], dtype=np.uint8))
        proj = make_proj([4.0], [4.0], [1], 8, 8)  # only the other class
        cfg = LossConfig(delta=2.0, d_max=5.0)
        assert reverse_loss(edges, proj, cfg) == huber(5.0, 2.0)

    @pytest.mark.parametrize("weighting", ["posterior", "row"])
    def test_matches_oracle(self, rng, weighting):
        for _ in range(15):
            k = 4
            mask, edges, proj = random_scene(rng, k=k)
            for cfg in (LossConfig(d_max=5.0),
                        LossConfig(d_max=3.0, delta=1.5),
                        LossConfig(confusion=random_confusion(rng, k),
                                   reverse_weighting=weighting)):
                got = reverse_loss(edges, proj, cfg)
                want = reverse_oracle(edges, proj, cfg)
                assert abs(got - want) < 1e-12

    def test_large_d_max_wide_scan(self, rng):
        # scan window wider than the image still matches the oracle
        k = 3
        mask = rng.integers(0, k, (10, 10)).astype(np.uint8)
        edges = extract_edges(mask, num_classes=k)
        proj = make_proj([0.5], [0.5], [0], 10, 10)
        cfg = LossConfig(delta=2.0, d_max=40.0)
        assert abs(reverse_loss(edges, proj, cfg)
                   - reverse_oracle(edges, proj, cfg)) < 1e-12

    def test_empty_edges_raises(self):
        edges = extract_edges(np.zeros((4, 4), dtype=np.uint8))
        proj = make_proj([1.0], [1.0], [0], 4, 4)
        with pytest.raises(NoEvidenceError):
            reverse_loss(edges, proj, LossConfig())

    def test_point_outside_mask_raises(self):
        edges = ClassEdgeSets(width=4, height=4, num_classes=2,
                              rows=np.array([1], dtype=np.int32),
                              cols=np.array([1], dtype=np.int32),
                              labels=np.array([0], dtype=np.uint8))
        proj = make_proj([7.0], [1.0], [0], 8, 8)
        with pytest.raises(ValueError):
            reverse_loss(edges, proj, LossConfig())


class TestTotalLoss:
    def test_weighted_sum_example(self):
        # L_f = 2 and L_r = 4 with unit weights totals 6
        stack = np.full((8, 8, 2), 5.0)
        stack[0, 3, 1] = 0.0
        stack[0, 5, 1] = 3.0
        fields = DistanceFieldStack(stack=stack, d_max=5.0)
        edges = ClassEdgeSets(width=8, height=8, num_classes=2,
                              rows=np.array([0], dtype=np.int32),
                              cols=np.array([0], dtype=np.int32),
                              labels=np.array([1], dtype=np.uint8))
        proj = make_proj([3.0, 5.0], [0.0, 0.0], [1, 1], 8, 8)
        cfg = LossConfig(delta=2.0, d_max=5.0)
        assert forward_loss(proj, fields, cfg) == 2.0
        assert reverse_loss(edges, proj, cfg) == 4.0
        assert total_loss(edges, proj, fields, cfg) == 6.0

    def test_term_weights(self, rng):
        k = 4
        _, edges, proj = random_scene(rng, k=k)
        fields = build_distance_fields(edges, d_max=5.0)
        cfg = LossConfig(lambda_forward=0.3, lambda_reverse=1.7)
        want = (0.3 * forward_loss(proj, fields, cfg)
                + 1.7 * reverse_loss(edges, proj, cfg))
        assert abs(total_loss(edges, proj, fields, cfg) - want) < 1e-15

    def test_forward_only_ignores_empty_edges(self, rng):
        mask = np.full((8, 8), 2, dtype=np.uint8)
        edges = extract_edges(mask)
        fields = build_distance_fields(edges, d_max=5.0)
        proj = make_proj([4.0], [4.0], [2], 8, 8)
        cfg = LossConfig(lambda_reverse=0.0)
        assert total_loss(edges, proj, fields, cfg) == huber(5.0, cfg.delta)

    def test_identity_confusion_is_bit_identical_to_hard(self, rng):
        for _ in range(100):
            k = int(rng.integers(2, NUM_CLASSES + 1))
            _, edges, proj = random_scene(rng, k=k, size=16, n_points=40)
            if edges.total == 0:
                continue
            fields = build_distance_fields(edges, d_max=5.0)
            hard = LossConfig()
            soft = LossConfig(confusion=ConfusionMatrix.identity(k))
            assert forward_loss(proj, fields, soft) == forward_loss(proj, fields, hard)
            assert reverse_loss(edges, proj, soft) == reverse_loss(edges, proj, hard)

    def test_bounds(self, rng):
        for _ in range(20):
            k = 4
            _, edges, proj = random_scene(rng, k=k)
            cfg = LossConfig(confusion=random_confusion(rng, k))
            fields = build_distance_fields(edges, d_max=cfg.d_max)
            bound = huber(cfg.d_max, cfg.delta) + 1e-12
            assert 0.0 <= forward_loss(proj, fields, cfg) <= bound
            assert 0.0 <= reverse_loss(edges, proj, cfg) <= bound

    def test_class_relabeling_invariance(self, rng):
        k = 5
        mask, edges, proj = random_scene(rng, k=k)
        conf = random_confusion(rng, k)
        perm = rng.permutation(k)
        pmask = perm[mask].astype(np.uint8)
        pedges = extract_edges(pmask, num_classes=k)
        pproj = make_proj(proj.u, proj.v, perm[proj.labels], proj.width, proj.height)
        inv = np.argsort(perm)
        pconf = ConfusionMatrix(conf.matrix[np.ix_(inv, inv)])
        cfg = LossConfig(confusion=conf)
        pcfg = LossConfig(confusion=pconf)
        fields = build_distance_fields(edges, d_max=cfg.d_max)
        pfields = build_distance_fields(pedges, d_max=cfg.d_max)
        got = total_loss(pedges, pproj, pfields, pcfg)
        want = total_loss(edges, proj, fields, cfg)
        assert abs(got - want) < 1e-12


class TestSelfAlignmentZero:
    def test_pixel_aligned_checkerboard_has_zero_loss(self):
        # nadir camera over a unit-grid cloud whose projections land exactly
        # on integer pixels; the mask is the rendered label image, so both
        # terms vanish
        size = 64
        intr = CameraIntrinsics(fx=64.0, fy=64.0, cx=32.0, cy=32.0,
                                width=size, height=size)
        nadir = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
        view = ViewGeometry(attitude=np.eye(3),
                            cam_extrinsics=RigidPose(nadir, np.zeros(3)),
                            height=64.0, intrinsics=intr)
        xs, ys = np.meshgrid(np.arange(-32, 32), np.arange(-31, 33))
        pts = np.column_stack([xs.ravel(), ys.ravel(),
                               np.zeros(xs.size)]).astype(np.float64)
        labels = ((xs.ravel() + ys.ravel()) % 2).astype(np.uint8)
        cloud = SemanticPointCloud(points=pts, labels=labels,
                                   support=np.ones(pts.shape[0], dtype=np.uint16))
        proj = render_labeled_points(cloud, view, PlanarTranslation(0.0, 0.0))
        assert len(proj) == size * size
        mask = np.full((size, size), IGNORE_LABEL, dtype=np.uint8)
        cols = np.floor(proj.u + 0.5).astype(int)
        rows = np.floor(proj.v + 0.5).astype(int)
        mask[rows, cols] = proj.labels
        assert not np.any(mask == IGNORE_LABEL)
        edges = extract_edges(mask, num_classes=2)
        assert edges.total == size * size  # checkerboard: every pixel is an edge
        cfg = LossConfig()
        fields = build_distance_fields(edges, d_max=cfg.d_max)
        assert total_loss(edges, proj, fields, cfg) < 1e-9


class TestLossConfigValidation:
    def test_rejects_bad_delta(self):
        with pytest.raises(ValueError):
            LossConfig(delta=0.0)

    def test_rejects_d_max_below_delta(self):
        with pytest.raises(ValueError):
            LossConfig(delta=2.0, d_max=1.0)

    def test_rejects_all_zero_weights(self):
        with pytest.raises(ValueError):
            LossConfig(lambda_forward=0.0, lambda_reverse=0.0)

    def test_rejects_unknown_weighting(self):
        with pytest.raises(ValueError):
            LossConfig(reverse_weighting="uniform")

    def test_rejects_wrong_confusion_size(self, rng):
        cfg = LossConfig(confusion=random_confusion(rng, 3))
        stack = np.zeros((4, 4, NUM_CLASSES))
        fields = DistanceFieldStack(stack=stack, d_max=5.0)
        proj = make_proj([1.0], [1.0], [0], 4, 4)
        with pytest.raises(ValueError):
            forward_loss(proj, fields, cfg)
