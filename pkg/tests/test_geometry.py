import numpy as np
import pytest

from bfcodec.errors import InsufficientCandidates, InsufficientMatches
from bfcodec.geometry import (
    backprojection_error,
    estimate_homography,
    homography_precision,
    match_features,
    read_ground_truth,
    write_ground_truth,
)
from bfcodec.synthdata import PlanarSceneConfig, gen_planar_scene


class TestMatchFeatures:
    def test_identical_sets_match_themselves(self, rng):
        a = (rng.random((10, 64)) < 0.5).astype(np.uint8)
        pairs = match_features(a, a, 0.7)
        # kept whenever the second-nearest is nonzero distance
        assert all(i == j for i, j in pairs)
        assert len(pairs) == 10

    def test_ratio_rejects_30_vs_40(self):
        a = np.zeros((1, 100), np.uint8)
        b = np.zeros((2, 100), np.uint8)
        b[0, :30] = 1           # d1 = 30
        b[1, :40] = 1           # d2 = 40
        assert match_features(a, b, 0.7) == []

    def test_exact_rational_boundary(self):
        # d1 = 28, d2 = 40: 28 < 0.7*40 is false in exact arithmetic, while
        # float 0.7*40 = 28.000000000000004 would wrongly accept
        a = np.zeros((1, 100), np.uint8)
        b = np.zeros((2, 100), np.uint8)
        b[0, :28] = 1
        b[1, :40] = 1
        assert match_features(a, b, 0.7) == []

    def test_accepts_below_boundary(self):
        a = np.zeros((1, 100), np.uint8)
        b = np.zeros((2, 100), np.uint8)
        b[0, :27] = 1
        b[1, :40] = 1
        assert match_features(a, b, 0.7) == [(0, 0)]

    def test_nearest_tie_is_ambiguous_and_rejected(self):
        # a tie on the nearest neighbor forces d1 == d2, so the ratio test
        # always drops the match regardless of which index wins the tie
        a = np.zeros((1, 16), np.uint8)
        b = np.zeros((3, 16), np.uint8)
        b[0, :2] = 1
        b[1, :2] = 1
        b[2, :12] = 1
        assert match_features(a, b, 0.7) == []

    def test_insufficient_candidates(self):
        a = np.zeros((2, 16), np.uint8)
        with pytest.raises(InsufficientCandidates):
            match_features(a, np.zeros((1, 16), np.uint8), 0.7)


def _apply(h, pts):
    ph = np.column_stack([pts, np.ones(len(pts))])
    q = (h @ ph.T).T
    return q[:, :2] / q[:, 2:3]


class TestEstimateHomography:
    def test_identity_no_outliers(self, rng):
        pts = rng.uniform(0, 500, (40, 2))
        h = estimate_homography(pts, pts, seed=0)
        assert h is not None
        assert np.abs(h - np.eye(3)).max() < 1e-6

    def test_known_h_with_outliers(self, rng):
        h_true = np.array([[0.95, -0.12, 40.0], [0.10, 1.02, -25.0], [1e-5, -2e-5, 1.0]])
        src = rng.uniform(50, 550, (30, 2))
        dst = _apply(h_true, src)
        dst[:10] += rng.uniform(-80, 80, (10, 2))     # 10 of 30 are outliers
        h = estimate_homography(src[:, :], dst, seed=3)
        assert h is not None
        held_out = rng.uniform(50, 550, (50, 2))
        err = np.sqrt(((_apply(h, held_out) - _apply(h_true, held_out)) ** 2).sum(1))
        assert err.max() < 0.5

    def test_exact_inliers_transfer_error(self, rng):
        h_true = np.array([[1.1, 0.05, 10.0], [-0.04, 0.97, 5.0], [0.0, 0.0, 1.0]])
        src = rng.uniform(0, 400, (25, 2))
        h = estimate_homography(src, _apply(h_true, src), seed=1)
        from bfcodec.geometry import _symmetric_error

        assert _symmetric_error(h, src, _apply(h_true, src)).max() < 1e-6

    def test_too_few_matches(self):
        pts = np.zeros((3, 2))
        with pytest.raises(InsufficientMatches):
            estimate_homography(pts, pts)

    def test_deterministic_given_seed(self, rng):
        src = rng.uniform(0, 400, (30, 2))
        dst = src + rng.normal(0, 1.0, (30, 2))
        a = estimate_homography(src, dst, seed=11)
        b = estimate_homography(src, dst, seed=11)
        assert np.array_equal(a, b)

    def test_degenerate_points_give_none(self):
        pts = np.column_stack([np.linspace(0, 10, 8), np.linspace(0, 10, 8)])  # collinear
        assert estimate_homography(pts, pts, iterations=50, seed=0) is None


@pytest.fixture(scope="module")
def scene():
    return gen_planar_scene(PlanarSceneConfig(frames=16, inliers=40, seed=8))


class TestPrecisionHarness:

    def test_lossless_precision_is_one(self, scene):
        pairs = [(scene.stream.frames[i], scene.stream.frames[i + 1]) for i in range(15)]
        corners = [
            (scene.ground_truth[i][1], scene.ground_truth[i + 1][1]) for i in range(15)
        ]
        rep = homography_precision(pairs, corners, iterations=1000, seed=0)
        assert rep.precision == 1.0
        assert rep.total == 15

    def test_destroyed_descriptors_fail(self, scene, rng):
        from bfcodec.features import BinaryDescriptor, FrameFeatures, LocalFeature

        def scramble(fr):
            feats = [
                LocalFeature(f.keypoint, BinaryDescriptor(rng.integers(0, 2, 512).astype(np.uint8)))
                for f in fr.features
            ]
            return FrameFeatures(fr.frame_index, feats)

        pairs = [
            (scramble(scene.stream.frames[i]), scramble(scene.stream.frames[i + 1]))
            for i in range(8)
        ]
        corners = [
            (scene.ground_truth[i][1], scene.ground_truth[i + 1][1]) for i in range(8)
        ]
        rep = homography_precision(pairs, corners, iterations=200, seed=0)
        assert rep.precision <= 0.25

    def test_backprojection_error_identity(self):
        corners = np.array([[0.0, 0.0], [10, 0], [10, 10], [0, 10]])
        assert backprojection_error(np.eye(3), corners, corners) == 0.0
        shifted = corners + [3.0, 4.0]
        assert abs(backprojection_error(np.eye(3), corners, shifted) - 5.0) < 1e-12


class TestGroundTruthFile:
    def test_round_trip(self, tmp_path):
        scene = gen_planar_scene(PlanarSceneConfig(frames=5, inliers=10, seed=1))
        path = tmp_path / "gt.csv"
        write_ground_truth(path, scene.ground_truth)
        rows = read_ground_truth(path)
        assert len(rows) == 5
        for (fi, c, h), (gi, gc, gh) in zip(rows, scene.ground_truth):
            assert fi == gi
            assert np.allclose(c, gc)
            assert np.allclose(h, gh)
