import numpy as np
import pytest

from semloc.classes import (BUILDING, IGNORE_LABEL, LOW_VEGETATION, NUM_CLASSES,
                            WATER)
from semloc.crossmodal import ConfusionMatrix, estimate_confusion
from semloc.geometry import CameraIntrinsics, PlanarTranslation
from semloc.semantic_map import SemanticPointCloud
from semloc.synth import (CorruptionSpec, SceneSpec, corrupt_mask,
                          generate_world, nadir_view, render_truth_mask,
                          sample_frames)


def flat_spec(**kw):
    base = dict(seed=11, extent=100.0, density=3.0)
    base.update(kw)
    return SceneSpec(**base)


class TestGenerateWorld:
    def test_deterministic_in_seed(self):
        a = generate_world(flat_spec())
        b = generate_world(flat_spec())
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.labels, b.labels)

    def test_seeds_differ(self):
        a = generate_world(flat_spec(seed=1))
        b = generate_world(flat_spec(seed=2))
        assert not np.array_equal(a.points, b.points)

    def test_no_primitives_is_uniform_ground(self):
        spec = flat_spec(n_roads=0, n_discs=0, n_buildings=0,
                         ground_class=WATER)
        cloud = generate_world(spec)
        assert len(cloud) == int(spec.density * spec.extent ** 2)
        assert np.all(cloud.labels == WATER)
        assert np.all(cloud.points[:, 2] == 0.0)

    def test_points_stay_inside_extent(self):
        cloud = generate_world(flat_spec())
        assert np.abs(cloud.points[:, :2]).max() <= 50.0

    def test_primitives_add_their_classes(self):
        cloud = generate_world(flat_spec())
        present = set(np.unique(cloud.labels))
        assert LOW_VEGETATION in present
        assert BUILDING in present
        assert len(present) >= 4

    def test_building_fraction_targets_coverage(self):
        fracs = []
        for seed in range(10):
            spec = flat_spec(seed=seed, n_roads=0, n_discs=0,
                             building_fraction=0.3)
            cloud = generate_world(spec)
            fracs.append(float(np.mean(cloud.labels == BUILDING)))
        fracs = np.array(fracs)
        assert np.all((fracs > 0.25) & (fracs < 0.40))
        assert abs(fracs.mean() - 0.3) < 0.05

    def test_extruded_buildings_have_roof_and_walls(self):
        spec = flat_spec(n_roads=0, n_discs=0, n_buildings=3,
                         building_height=(5.0, 5.0))
        cloud = generate_world(spec)
        bld = cloud.points[cloud.labels == BUILDING]
        assert bld.shape[0] > 0
        assert np.any(bld[:, 2] == 5.0)  # roof samples at the box height
        assert np.any((bld[:, 2] > 0.0) & (bld[:, 2] < 5.0))  # wall samples
        # the ground sheet below stays unlabeled as building
        ground = cloud.points[:, 2] == 0.0
        assert np.all(cloud.labels[ground] != BUILDING)

    def test_rejects_bad_ranges(self):
        with pytest.raises(ValueError):
            flat_spec(road_width=(8.0, 4.0))
        with pytest.raises(ValueError):
            flat_spec(density=0.0)
        with pytest.raises(ValueError):
            flat_spec(building_fraction=1.5)


class TestRenderTruthMask:
    def test_single_point_fills_its_neighborhood(self):
        intr = CameraIntrinsics(fx=16.0, fy=16.0, cx=7.5, cy=7.5,
                                width=16, height=16)
        view = nadir_view(intr, 20.0)
        cloud = SemanticPointCloud(points=np.array([[0.625, -0.625, 0.0]]),
                                   labels=np.array([3], dtype=np.uint8),
                                   support=np.ones(1, dtype=np.uint16))
        mask = render_truth_mask(cloud, view, PlanarTranslation(0.0, 0.0))
        want = np.full((16, 16), IGNORE_LABEL, dtype=np.uint8)
        for dy in range(-2, 3):
            for dx in range(-2, 3):
                if dy * dy + dx * dx <= 4:
                    want[8 + dy, 8 + dx] = 3
        assert np.array_equal(mask, want)

    def test_fill_borrows_from_closest_depth(self):
        intr = CameraIntrinsics(fx=16.0, fy=16.0, cx=7.5, cy=7.5,
                                width=16, height=16)
        view = nadir_view(intr, 20.0)
        # pixel (5,5) from 10 m depth, pixel (5,9) from 20 m depth
        pts = np.array([[-1.5625, 1.5625, 10.0], [1.875, 3.125, 0.0]])
        cloud = SemanticPointCloud(points=pts,
                                   labels=np.array([1, 4], dtype=np.uint8),
                                   support=np.ones(2, dtype=np.uint16))
        mask = render_truth_mask(cloud, view, PlanarTranslation(0.0, 0.0))
        assert mask[5, 5] == 1
        assert mask[5, 9] == 4
        assert mask[5, 7] == 1  # equidistant hole: nearer depth wins
        assert mask[5, 6] == 1
        assert mask[5, 8] == 4  # only the deep point is within 2 px

    def test_dense_single_class_world_covers_view(self):
        spec = flat_spec(extent=40.0, density=12.0, n_roads=0, n_discs=0,
                         n_buildings=0)
        cloud = generate_world(spec)
        intr = CameraIntrinsics(fx=64.0, fy=64.0, cx=31.5, cy=31.5,
                                width=64, height=64)
        mask = render_truth_mask(cloud, nadir_view(intr, 20.0),
                                 PlanarTranslation(0.0, 0.0))
        assert mask.shape == (64, 64)
        assert np.all(mask == LOW_VEGETATION)


def four_class_confusion():
    return ConfusionMatrix(np.array([
        [0.7, 0.1, 0.1, 0.1],
        [0.05, 0.8, 0.1, 0.05],
        [0.2, 0.2, 0.5, 0.1],
        [0.1, 0.1, 0.1, 0.7],
    ]))


class TestCorruptMask:
    def test_zero_settings_return_equal_copy(self, rng):
        mask = rng.integers(0, 4, (32, 32)).astype(np.uint8)
        out = corrupt_mask(mask, CorruptionSpec(), seed=5)
        assert np.array_equal(out, mask)
        assert not np.shares_memory(out, mask)

    def test_full_flip_with_identity_confusion_is_identity(self, rng):
        mask = rng.integers(0, NUM_CLASSES, (64, 64)).astype(np.uint8)
        spec = CorruptionSpec(flip_rate=1.0,
                              confusion=ConfusionMatrix.identity())
        assert np.array_equal(corrupt_mask(mask, spec, seed=3), mask)

    def test_flip_rate_fraction(self):
        mask = np.full((512, 512), 2, dtype=np.uint8)
        conf = np.eye(NUM_CLASSES)
        conf[2] = 0.0
        conf[2, 3] = 1.0  # class 2 always flips to 3 when selected
        spec = CorruptionSpec(flip_rate=0.3, confusion=ConfusionMatrix(conf))
        out = corrupt_mask(mask, spec, seed=9)
        frac = float(np.mean(out != mask))
        assert abs(frac - 0.3) < 0.01

    def test_flip_then_estimate_recovers_confusion(self, rng):
        truth = rng.integers(0, 4, (256, 256)).astype(np.uint8)
        conf = four_class_confusion()
        spec = CorruptionSpec(flip_rate=1.0, confusion=conf)
        pred = corrupt_mask(truth, spec, seed=21)
        est = estimate_confusion(pred, truth, num_classes=4)
        assert np.abs(est.matrix - conf.matrix).max() < 0.02

    def test_flips_preserve_ignore(self):
        mask = np.full((16, 16), IGNORE_LABEL, dtype=np.uint8)
        mask[:8] = 1
        spec = CorruptionSpec(flip_rate=1.0, confusion=four_class_confusion())
        out = corrupt_mask(mask, spec, seed=2)
        assert np.all(out[8:] == IGNORE_LABEL)

    def test_full_dropout_blanks_everything(self, rng):
        mask = rng.integers(0, NUM_CLASSES, (16, 16)).astype(np.uint8)
        out = corrupt_mask(mask, CorruptionSpec(dropout=1.0), seed=1)
        assert np.all(out == IGNORE_LABEL)

    def test_jitter_moves_boundaries_without_new_labels(self):
        mask = np.zeros((64, 64), dtype=np.uint8)
        mask[:, 32:] = 5
        out = corrupt_mask(mask, CorruptionSpec(boundary_jitter=2.0), seed=4)
        assert out.shape == mask.shape
        assert set(np.unique(out)) <= {0, 5}
        assert not np.array_equal(out, mask)
        assert np.mean(out != mask) < 0.2  # jitter is local

    def test_deterministic_in_seed(self, rng):
        mask = rng.integers(0, 4, (32, 32)).astype(np.uint8)
        spec = CorruptionSpec(flip_rate=0.5, confusion=four_class_confusion(),
                              boundary_jitter=1.0, dropout=0.1)
        a = corrupt_mask(mask, spec, seed=7)
        b = corrupt_mask(mask, spec, seed=7)
        c = corrupt_mask(mask, spec, seed=8)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_flips_require_confusion(self):
        with pytest.raises(ValueError):
            CorruptionSpec(flip_rate=0.5)

    def test_rejects_bad_rates(self):
        with pytest.raises(ValueError):
            CorruptionSpec(dropout=1.5)
        with pytest.raises(ValueError):
            CorruptionSpec(boundary_jitter=-1.0)


class TestSampleFrames:
    def test_fields_and_determinism(self):
        spec = flat_spec(extent=60.0, density=4.0)
        cloud = generate_world(spec)
        intr = CameraIntrinsics(fx=64.0, fy=64.0, cx=31.5, cy=31.5,
                                width=64, height=64)
        a = sample_frames(cloud, intr, n_frames=4, seed=3, t_range=5.0,
                          prior_region=10.0, altitude=(20.0, 30.0))
        b = sample_frames(cloud, intr, n_frames=4, seed=3, t_range=5.0,
                          prior_region=10.0, altitude=(20.0, 30.0))
        assert [f.frame_id for f in a] == ["frame_0000", "frame_0001",
                                           "frame_0002", "frame_0003"]
        for fa, fb in zip(a, b):
            assert fa.prior == fb.prior
            assert fa.t_true == fb.t_true
            assert np.array_equal(fa.mask, fb.mask)
            assert fa.mask.shape == (64, 64)
            assert max(abs(fa.t_true[0]), abs(fa.t_true[1])) <= 5.0
            assert max(abs(fa.prior[0]), abs(fa.prior[1])) <= 10.0
            assert 20.0 <= fa.view.height <= 30.0

    def test_corruption_changes_masks_deterministically(self):
        spec = flat_spec(extent=60.0, density=4.0)
        cloud = generate_world(spec)
        intr = CameraIntrinsics(fx=64.0, fy=64.0, cx=31.5, cy=31.5,
                                width=64, height=64)
        kw = dict(n_frames=2, seed=3, t_range=5.0, prior_region=10.0,
                  altitude=(20.0, 30.0))
        clean = sample_frames(cloud, intr, **kw)
        noisy1 = sample_frames(cloud, intr, corruption=CorruptionSpec(
            flip_rate=0.3, confusion=four_class_confusion()), **kw)
        noisy2 = sample_frames(cloud, intr, corruption=CorruptionSpec(
            flip_rate=0.3, confusion=four_class_confusion()), **kw)
        assert not np.array_equal(noisy1[0].mask, clean[0].mask)
        assert np.array_equal(noisy1[0].mask, noisy2[0].mask)
        assert not np.array_equal(noisy1[0].mask, noisy1[1].mask)
