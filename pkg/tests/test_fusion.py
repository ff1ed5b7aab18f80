"""Visibility testing, feature fusion, and PCA colorization."""

from __future__ import annotations

import numpy as np
import pytest

from conftest import TWOBOX_SPEC
from physfield import synthetic as syn
from physfield.fusion import (FusionConfig, FusionError, fuse_features,
                              pca_colorize, visibility_test)
from physfield.points import SourcePointCloud
from physfield.scene import Camera, Frame, SceneBundle, normalize_poses


def identity_frame(depth_value=2.0, mask=None, size=64) -> Frame:
    cam = Camera(fx=size / 2.0, fy=size / 2.0, cx=size / 2.0, cy=size / 2.0,
                 width=size, height=size, cam_to_world=np.eye(4))
    depth = np.full((size, size), depth_value, dtype=np.float32)
    return Frame(camera=cam, image=np.zeros((size, size, 3), np.uint8),
                 depth=depth, mask=mask)


class FixedVectorProvider:
    """Returns one prescribed unit vector per frame, for every patch."""

    def __init__(self, per_frame_vectors):
        self.vectors = np.asarray(per_frame_vectors, dtype=np.float64)

    def embed_patches(self, frame_index, centers, patch_size):
        return np.tile(self.vectors[frame_index], (len(centers), 1))


def cloud_of(points) -> SourcePointCloud:
    pts = np.asarray(points, dtype=np.float64)
    return SourcePointCloud(points=pts,
                            origin_frame=np.zeros(len(pts), dtype=np.int32))


class TestVisibility:
    def test_within_threshold_visible(self):
        frame = identity_frame(depth_value=2.005)
        assert visibility_test((0.0, 0.0, 2.0), frame, threshold=0.01)

    def test_behind_surface_occluded(self):
        frame = identity_frame(depth_value=2.0)
        assert not visibility_test((0.0, 0.0, 2.5), frame, threshold=0.01)

    def test_out_of_bounds_not_visible(self):
        frame = identity_frame()
        assert not visibility_test((50.0, 0.0, 2.0), frame, threshold=0.01)

    def test_behind_camera_not_visible(self):
        frame = identity_frame()
        assert not visibility_test((0.0, 0.0, -1.0), frame, threshold=0.01)

    def test_invalid_depth_pixel_not_visible(self):
        frame = identity_frame(depth_value=0.0)
        assert not visibility_test((0.0, 0.0, 2.0), frame, threshold=0.01)

    def test_mask_gates_visibility(self):
        mask = np.zeros((64, 64), dtype=bool)
        frame = identity_frame(mask=mask)
        assert not visibility_test((0.0, 0.0, 2.0), frame, threshold=0.01)


class TestFusion:
    def test_paper_defaults(self):
        cfg = FusionConfig()
        assert cfg.patch_size == 56
        assert cfg.occlusion_threshold == 0.01
        assert cfg.effective_patch_size == 57  # even sizes widen by one

    def test_single_view_feature_is_normalized_embedding(self):
        bundle = SceneBundle(frames=(identity_frame(),))
        vec = np.array([3.0, 4.0, 0.0, 0.0])  # norm 5
        provider = FixedVectorProvider([vec])
        fused = fuse_features(cloud_of([(0.0, 0.0, 2.0)]), bundle, provider,
                              FusionConfig(feature_dim=4))
        np.testing.assert_allclose(fused.features[0], vec / 5.0, atol=1e-12)
        assert fused.visibility[0] == 1

    def test_two_orthonormal_views_average(self):
        # average of e1, e2 renormalizes to (e1 + e2)/sqrt(2)
        frames = (identity_frame(), identity_frame())
        bundle = SceneBundle(frames=frames)
        e1 = np.array([1.0, 0.0, 0.0])
        e2 = np.array([0.0, 1.0, 0.0])
        provider = FixedVectorProvider([e1, e2])
        fused = fuse_features(cloud_of([(0.0, 0.0, 2.0)]), bundle, provider,
                              FusionConfig(feature_dim=3))
        expected = (e1 + e2) / np.sqrt(2.0)
        np.testing.assert_allclose(fused.features[0], expected, atol=1e-12)
        assert np.isclose(np.linalg.norm(fused.features[0]), 1.0)

    def test_zero_visibility_points_dropped_and_reported(self):
        bundle = SceneBundle(frames=(identity_frame(),))
        provider = FixedVectorProvider([np.array([1.0, 0.0])])
        cloud = cloud_of([(0.0, 0.0, 2.0), (0.0, 0.0, 50.0)])  # 2nd occluded
        fused = fuse_features(cloud, bundle, provider, FusionConfig(feature_dim=2))
        assert len(fused) == 1
        np.testing.assert_array_equal(fused.dropped_indices, [1])

    def test_all_dropped_raises(self):
        bundle = SceneBundle(frames=(identity_frame(),))
        provider = FixedVectorProvider([np.array([1.0, 0.0])])
        with pytest.raises(FusionError, match="no visible"):
            fuse_features(cloud_of([(0.0, 0.0, 99.0)]), bundle, provider,
                          FusionConfig(feature_dim=2))

    def test_provider_failure_carries_frame_context(self):
        class Broken:
            def embed_patches(self, fi, centers, ps):
                raise RuntimeError("boom")

        bundle = SceneBundle(frames=(identity_frame(),))
        with pytest.raises(FusionError, match="frame 0"):
            fuse_features(cloud_of([(0.0, 0.0, 2.0)]), bundle, Broken(),
                          FusionConfig(feature_dim=2))


@pytest.fixture(scope="module")
def scene():
    spec = TWOBOX_SPEC
    bundle, rasters = syn.build_bundle(spec)
    nb = normalize_poses(bundle)
    rng = np.random.default_rng(4)
    # points on the box surface, in normalized world coordinates
    metric, _ = syn.sample_surface_points(spec, 200, rng)
    centers = syn.camera_centers(spec)
    centroid = centers.mean(axis=0)
    extent = np.abs(centers - centroid).max()
    world = (metric - centroid) / extent
    return spec, nb, rasters, cloud_of(world)


class TestFusionProperties:
    """Properties checked on the synthetic two-material box with noise."""

    def test_view_permutation_invariance(self, scene):
        spec, nb, rasters, cloud = scene
        cfg = FusionConfig(feature_dim=16)
        providers = syn.MockProviders(spec, rasters, feature_dim=16,
                                      noise=0.1, seed=0)
        fused = fuse_features(cloud, nb, providers, cfg)

        order = list(np.random.default_rng(1).permutation(len(nb.frames)))
        shuffled = SceneBundle(frames=tuple(nb.frames[i] for i in order),
                               scene_scale=nb.scene_scale)
        providers_s = syn.MockProviders(spec, [rasters[i] for i in order],
                                        feature_dim=16, noise=0.1, seed=0)
        fused_s = fuse_features(cloud, shuffled, providers_s, cfg)
        np.testing.assert_array_equal(fused.points.points, fused_s.points.points)
        np.testing.assert_allclose(fused.features, fused_s.features, atol=1e-12)

    def test_dropping_occluded_frame_keeps_feature(self, scene):
        spec, nb, rasters, cloud = scene
        cfg = FusionConfig(feature_dim=16)
        providers = syn.MockProviders(spec, rasters, feature_dim=16,
                                      noise=0.05, seed=0)
        fused = fuse_features(cloud, nb, providers, cfg)

        # find a point occluded in some frame, drop that frame, re-fuse
        from physfield.fusion import _visible_pixels

        vis = np.stack([
            _visible_pixels(fused.points.points, f, cfg.occlusion_threshold)[0]
            for f in nb.frames
        ])
        candidates = np.nonzero(~vis.all(axis=0))[0]
        assert candidates.size, "fixture should occlude some point somewhere"
        pi = int(candidates[0])
        fi = int(np.nonzero(~vis[:, pi])[0][0])

        keep = [i for i in range(len(nb.frames)) if i != fi]
        reduced = SceneBundle(frames=tuple(nb.frames[i] for i in keep),
                              scene_scale=nb.scene_scale)
        providers_r = syn.MockProviders(spec, [rasters[i] for i in keep],
                                        feature_dim=16, noise=0.05, seed=0)
        fused_r = fuse_features(cloud, reduced, providers_r, cfg)
        # locate the same point in both outputs
        match = np.nonzero(
            (fused_r.points.points == fused.points.points[pi]).all(axis=1))[0]
        assert match.size == 1
        np.testing.assert_allclose(fused_r.features[match[0]],
                                   fused.features[pi], atol=1e-12)

    def test_unit_norm_and_visibility_recount(self, scene):
        spec, nb, rasters, cloud = scene
        cfg = FusionConfig(feature_dim=16)
        providers = syn.MockProviders(spec, rasters, feature_dim=16,
                                      noise=0.1, seed=0)
        fused = fuse_features(cloud, nb, providers, cfg)
        norms = np.linalg.norm(fused.features, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-6)
        for i in range(0, len(fused), 17):
            count = sum(
                visibility_test(fused.points.points[i], f, cfg.occlusion_threshold)
                for f in nb.frames
            )
            assert count == fused.visibility[i]


class TestPcaColorize:
    def test_identical_features_one_color(self):
        colors = pca_colorize(np.tile([0.3, 0.4, 0.5], (10, 1)))
        assert np.all(colors == colors[0])

    def test_two_clusters_two_colors(self):
        feats = np.array([[1.0, 0.0]] * 5 + [[0.0, 1.0]] * 5)
        colors = pca_colorize(feats)
        uniq = np.unique(colors.round(9), axis=0)
        assert len(uniq) == 2
        # the separating component spans the full [0, 255] range
        assert colors[:, 0].min() == 0.0
        assert colors[:, 0].max() == 255.0

    def test_matches_eigendecomposition_oracle(self):
        rng = np.random.default_rng(21)
        for _ in range(5):
            x = rng.normal(size=(100, 8))
            colors = pca_colorize(x)
            centered = x - x.mean(axis=0)
            evals, evecs = np.linalg.eigh(centered.T @ centered)
            proj = centered @ evecs[:, ::-1][:, :3]
            expected = np.zeros_like(proj)
            for j in range(3):
                lo, hi = proj[:, j].min(), proj[:, j].max()
                expected[:, j] = (proj[:, j] - lo) / (hi - lo) * 255.0
            for j in range(3):
                direct = np.abs(colors[:, j] - expected[:, j]).max()
                flipped = np.abs(colors[:, j] - (255.0 - expected[:, j])).max()
                assert min(direct, flipped) <= 1e-6 * 255.0

    def test_needs_three_points(self):
        with pytest.raises(ValueError):
            pca_colorize(np.ones((2, 4)))

    def test_rank_deficient_padded_with_zeros(self):
        # features vary along a single direction only
        t = np.linspace(0, 1, 10)[:, None]
        feats = t * np.array([[1.0, 2.0, 3.0, 4.0]])
        colors = pca_colorize(feats)
        assert colors[:, 0].max() == 255.0
        assert np.all(colors[:, 1] == 0.0)
        assert np.all(colors[:, 2] == 0.0)
