"""Visibility-aware fusion of per-patch image embeddings into source points.

Each source point collects one embedding per frame in which it passes the
occlusion test; contributions are unit-normalized, averaged in ascending
frame order, and renormalized. Points visible in no frame are dropped and
reported in the result's ``dropped_indices``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .points import SourcePointCloud
from .scene import Frame, SceneBundle, project_point, project_points

DEFAULT_PATCH_SIZE = 56
DEFAULT_OCCLUSION_THRESHOLD = 0.01
DEFAULT_FEATURE_DIM = 512


class FusionError(RuntimeError):
    """All points dropped, or an embedding provider failure with context."""


@dataclass(frozen=True)
class FusionConfig:
    patch_size: int = DEFAULT_PATCH_SIZE
    occlusion_threshold: float = DEFAULT_OCCLUSION_THRESHOLD
    feature_dim: int = DEFAULT_FEATURE_DIM

    def __post_init__(self):
        if self.patch_size < 1:
            raise ValueError(f"patch_size must be >= 1, got {self.patch_size}")
        if not self.occlusion_threshold > 0:
            raise ValueError(
                f"occlusion_threshold must be positive, got {self.occlusion_threshold}"
            )

    @property
    def effective_patch_size(self) -> int:
        """Patch window edge; even requests round up to the next odd size
        so the window stays centered."""
        p = self.patch_size
        return p if p % 2 == 1 else p + 1


@dataclass(frozen=True)
class FeaturePointCloud:
    """Source points paired with fused unit-norm feature vectors."""

    points: SourcePointCloud
    features: np.ndarray          # (N, D) float64, rows unit norm
    visibility: np.ndarray        # (N,) int32, contributing view count
    dropped_indices: np.ndarray   # indices into the pre-fusion cloud

    def __post_init__(self):
        if self.features.shape[0] != len(self.points):
            raise ValueError("features and points lengths differ")
        if self.visibility.shape[0] != len(self.points):
            raise ValueError("visibility and points lengths differ")
        if self.visibility.size and self.visibility.min() < 1:
            raise ValueError("retained points must be visible in >= 1 view")

    def __len__(self) -> int:
        return len(self.points)


def visibility_test(point, frame: Frame, threshold: float) -> bool:
    """True iff the point projects in-bounds onto a valid-depth (and masked,
    when a mask exists) pixel and is not behind the stored surface by more
    than the threshold."""
    u, v, z = project_point(frame.camera, point)
    if not z > 0:
        return False
    iu, iv = int(round(u)), int(round(v))
    if not (0 <= iu < frame.camera.width and 0 <= iv < frame.camera.height):
        return False
    d = frame.depth[iv, iu]
    if not (np.isfinite(d) and d > 0):
        return False
    if frame.mask is not None and not frame.mask[iv, iu]:
        return False
    return z <= d + threshold


def _visible_pixels(points: np.ndarray, frame: Frame,
                    threshold: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized visibility_test; returns (visible mask, iu, iv)."""
    u, v, z = project_points(frame.camera, points)
    iu = np.round(u).astype(np.int64)
    iv = np.round(v).astype(np.int64)
    ok = (z > 0) & (iu >= 0) & (iu < frame.camera.width) \
        & (iv >= 0) & (iv < frame.camera.height)
    iu_c = np.clip(iu, 0, frame.camera.width - 1)
    iv_c = np.clip(iv, 0, frame.camera.height - 1)
    d = frame.depth[iv_c, iu_c]
    ok &= np.isfinite(d) & (d > 0)
    if frame.mask is not None:
        ok &= frame.mask[iv_c, iu_c]
    ok &= z <= d + threshold
    return ok, iu_c, iv_c


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise FusionError("embedding provider returned a zero vector")
    return x / norms


def fuse_features(points: SourcePointCloud, bundle: SceneBundle, provider,
                  cfg: FusionConfig) -> FeaturePointCloud:
    """Average patch embeddings over all frames where each point is visible.

    ``provider.embed_patches(frame_index, centers, patch_size)`` must return
    one D-dimensional vector per (u, v) center; the provider clamps patch
    windows that overrun image bounds. Provider failures propagate wrapped
    with frame context.
    """
    n = len(points)
    if n == 0:
        raise FusionError("empty source point cloud")
    sums = np.zeros((n, cfg.feature_dim), dtype=np.float64)
    counts = np.zeros(n, dtype=np.int32)
    patch = cfg.effective_patch_size

    for fi, frame in enumerate(bundle.frames):
        ok, iu, iv = _visible_pixels(points.points, frame, cfg.occlusion_threshold)
        idx = np.nonzero(ok)[0]
        if idx.size == 0:
            continue
        centers = np.stack([iu[idx], iv[idx]], axis=1)
        try:
            vecs = np.asarray(provider.embed_patches(fi, centers, patch), dtype=np.float64)
        except Exception as exc:
            raise FusionError(f"embedding provider failed on frame {fi}: {exc}") from exc
        if vecs.shape != (idx.size, cfg.feature_dim):
            raise FusionError(
                f"frame {fi}: provider returned shape {vecs.shape}, "
                f"expected {(idx.size, cfg.feature_dim)}"
            )
        sums[idx] += _normalize_rows(vecs)
        counts[idx] += 1

    kept = counts > 0
    mean = sums[kept] / counts[kept, None]
    norms = np.linalg.norm(mean, axis=1)
    degenerate = norms == 0
    if np.any(degenerate):
        # antipodal contributions cancelled; treat like never-seen points
        kept_idx = np.nonzero(kept)[0]
        kept[kept_idx[degenerate]] = False
        mean = mean[~degenerate]
        norms = norms[~degenerate]
    if not np.any(kept):
        raise FusionError("every point was dropped: no visible views")
    features = mean / norms[:, None]
    return FeaturePointCloud(
        points=SourcePointCloud(points=points.points[kept],
                                origin_frame=points.origin_frame[kept]),
        features=features,
        visibility=counts[kept],
        dropped_indices=np.nonzero(~kept)[0],
    )


def uniform_feature_cloud(points: SourcePointCloud, bundle: SceneBundle, provider,
                          cfg: FusionConfig, canonical_frame: int) -> FeaturePointCloud:
    """Ablation variant: embed one whole-image patch of the canonical view
    and assign it to every point that survives the usual visibility pass."""
    fused = fuse_features(points, bundle, provider, cfg)
    frame = bundle.frames[canonical_frame]
    center = np.array([[frame.camera.width // 2, frame.camera.height // 2]])
    whole = max(frame.camera.width, frame.camera.height)
    vec = np.asarray(provider.embed_patches(canonical_frame, center, whole),
                     dtype=np.float64)
    vec = _normalize_rows(vec.reshape(1, -1))[0]
    features = np.tile(vec, (len(fused), 1))
    return FeaturePointCloud(points=fused.points, features=features,
                             visibility=fused.visibility,
                             dropped_indices=fused.dropped_indices)


def pca_colorize(features, n_components: int = 3) -> np.ndarray:
    """Map feature vectors to RGB via their top principal components.

    Centered features are projected onto the leading ``n_components``
    right-singular vectors and each component is min-max scaled to
    [0, 255] (float). Rank-deficient feature matrices use the available
    components and pad the rest with zeros.
    """
    x = features.features if isinstance(features, FeaturePointCloud) else np.asarray(features)
    x = x.astype(np.float64)
    n = x.shape[0]
    if n < 3:
        raise ValueError(f"PCA colorization needs >= 3 points, got {n}")
    centered = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    tol = s.max(initial=0.0) * max(centered.shape) * np.finfo(np.float64).eps
    rank = int(np.sum(s > tol))
    k = min(n_components, rank)
    proj = np.zeros((n, n_components), dtype=np.float64)
    if k:
        proj[:, :k] = centered @ vt[:k].T
    out = np.zeros_like(proj)
    for j in range(n_components):
        lo, hi = proj[:, j].min(), proj[:, j].max()
        if hi > lo:
            out[:, j] = (proj[:, j] - lo) / (hi - lo) * 255.0
    return out
