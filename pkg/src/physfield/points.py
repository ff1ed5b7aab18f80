"""Source point extraction from depth maps: seeded ray sampling over valid
pixels, voxel downsampling, bounding-box filtering, and statistical outlier
removal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .scene import SceneBundle, backproject

# Extraction bounding boxes (world units, post pose normalization):
# a unit box at the origin for product-style orbit captures, and a deeper
# 1.5^3 box below the camera rig for handheld room captures.
UNIT_BBOX = ((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))
HANDHELD_BBOX = ((-0.75, -0.75, -1.5), (0.75, 0.75, 0.0))

DEFAULT_N_RAYS = 100_000
DEFAULT_VOXEL_GRID = 0.01
DEFAULT_OUTLIER_K = 20
DEFAULT_OUTLIER_SIGMA = 10.0


class EmptySceneError(ValueError):
    """No valid (and masked, where masks exist) depth pixels to sample."""


@dataclass(frozen=True)
class SamplingConfig:
    n_rays: int = DEFAULT_N_RAYS
    voxel_grid: float = DEFAULT_VOXEL_GRID
    bbox: tuple = UNIT_BBOX
    outlier_k: int = DEFAULT_OUTLIER_K
    outlier_sigma: float = DEFAULT_OUTLIER_SIGMA
    seed: int = 0

    def __post_init__(self):
        if self.n_rays < 1:
            raise ValueError(f"n_rays must be >= 1, got {self.n_rays}")
        if not self.voxel_grid > 0:
            raise ValueError(f"voxel_grid must be positive, got {self.voxel_grid}")
        lo, hi = np.asarray(self.bbox[0]), np.asarray(self.bbox[1])
        if not np.all(lo < hi):
            raise ValueError(f"bbox min must be < max per axis, got {self.bbox}")
        if self.outlier_k < 1:
            raise ValueError(f"outlier_k must be >= 1, got {self.outlier_k}")
        if not self.outlier_sigma > 0:
            raise ValueError(f"outlier_sigma must be positive, got {self.outlier_sigma}")


@dataclass(frozen=True)
class SourcePointCloud:
    """World-space surface points with the frame index each was sampled from."""

    points: np.ndarray        # (N, 3) float64
    origin_frame: np.ndarray  # (N,) int32

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        frames = np.asarray(self.origin_frame, dtype=np.int32).reshape(-1)
        if pts.shape[0] != frames.shape[0]:
            raise ValueError("points and origin_frame lengths differ")
        if pts.size and not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "origin_frame", frames)

    def __len__(self) -> int:
        return self.points.shape[0]


def sample_source_points(bundle: SceneBundle, cfg: SamplingConfig) -> SourcePointCloud:
    """Backproject cfg.n_rays seeded uniform pixel draws into world points.

    Pixels are pooled across all frames; a frame's mask (when present)
    restricts its pool. Draws are with replacement, so n_rays may exceed
    the number of valid pixels. Points falling outside cfg.bbox are
    discarded, hence the result never exceeds n_rays points.
    """
    pools = []  # (frame_idx, v, u) per frame
    for fi, fr in enumerate(bundle.frames):
        valid = fr.valid_depth()
        if fr.mask is not None:
            valid &= fr.mask
        vs, us = np.nonzero(valid)
        if vs.size:
            pools.append((fi, vs, us))
    total = sum(vs.size for _, vs, _ in pools)
    if total == 0:
        raise EmptySceneError("no valid depth pixels in any frame")

    rng = np.random.default_rng(cfg.seed)
    draws = np.sort(rng.integers(0, total, size=cfg.n_rays))

    points = []
    frames = []
    offset = 0
    for fi, vs, us in pools:
        sel = draws[(draws >= offset) & (draws < offset + vs.size)] - offset
        offset += vs.size
        if sel.size == 0:
            continue
        v, u = vs[sel], us[sel]
        fr = bundle.frames[fi]
        pts = backproject(fr.camera, u.astype(np.float64), v.astype(np.float64),
                          fr.depth[v, u].astype(np.float64))
        points.append(pts)
        frames.append(np.full(sel.size, fi, dtype=np.int32))

    pts = np.concatenate(points, axis=0)
    frames = np.concatenate(frames, axis=0)
    lo = np.asarray(cfg.bbox[0], dtype=np.float64)
    hi = np.asarray(cfg.bbox[1], dtype=np.float64)
    keep = np.all((pts >= lo) & (pts <= hi), axis=1)
    return SourcePointCloud(points=pts[keep], origin_frame=frames[keep])


def voxel_downsample(cloud: SourcePointCloud, grid: float) -> SourcePointCloud:
    """Collapse points into voxel centroids.

    Voxels are keyed by floor(coord / grid) anchored at the world origin;
    each non-empty voxel yields the centroid of its members, ordered by
    ascending lexicographic voxel key. A centroid inherits the origin frame
    of its first member (original input order). Member coordinates are
    summed exactly (correct rounding), so centroids do not depend on
    summation order.
    """
    if not grid > 0:
        raise ValueError(f"grid must be positive, got {grid}")
    pts = cloud.points
    if pts.shape[0] == 0:
        return cloud
    keys = np.floor(pts / grid).astype(np.int64)
    # lexicographic sort on (kx, ky, kz); stable so within-voxel order is
    # original input order
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    skeys = keys[order]
    spts = pts[order]
    sframes = cloud.origin_frame[order]
    boundary = np.any(skeys[1:] != skeys[:-1], axis=1)
    starts = np.concatenate([[0], np.nonzero(boundary)[0] + 1])
    ends = np.concatenate([starts[1:], [len(spts)]])
    xs, ys, zs = (spts[:, a].tolist() for a in range(3))
    centroids = np.empty((len(starts), 3))
    for i, (s, e) in enumerate(zip(starts, ends)):
        n = e - s
        centroids[i, 0] = math.fsum(xs[s:e]) / n
        centroids[i, 1] = math.fsum(ys[s:e]) / n
        centroids[i, 2] = math.fsum(zs[s:e]) / n
    return SourcePointCloud(points=centroids, origin_frame=sframes[starts])


def remove_outliers(cloud: SourcePointCloud, k: int = DEFAULT_OUTLIER_K,
                    sigma: float = DEFAULT_OUTLIER_SIGMA) -> SourcePointCloud:
    """Drop points whose mean k-nearest-neighbor distance is more than
    sigma standard deviations above the cloud-wide mean of that statistic.

    Clouds with at most k points are returned unchanged.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    n = len(cloud)
    if n <= k:
        return cloud
    tree = cKDTree(cloud.points)
    # k+1 neighbors include the query point itself at distance 0
    dists, _ = tree.query(cloud.points, k=k + 1)
    mean_dist = dists.sum(axis=1) / k
    mu = mean_dist.mean()
    sd = mean_dist.std()
    keep = mean_dist <= mu + sigma * sd
    return SourcePointCloud(points=cloud.points[keep],
                            origin_frame=cloud.origin_frame[keep])


def save_cloud(cloud: SourcePointCloud, points_path: str | Path,
               frames_path: Optional[str | Path] = None) -> None:
    """Cache a cloud as a raw little-endian float32 xyz triple stream."""
    np.ascontiguousarray(cloud.points, dtype="<f4").tofile(points_path)
    if frames_path is not None:
        np.ascontiguousarray(cloud.origin_frame, dtype="<i4").tofile(frames_path)


def load_cloud(points_path: str | Path,
               frames_path: Optional[str | Path] = None) -> SourcePointCloud:
    pts = np.fromfile(points_path, dtype="<f4").astype(np.float64).reshape(-1, 3)
    if frames_path is not None and Path(frames_path).is_file():
        frames = np.fromfile(frames_path, dtype="<i4")
    else:
        frames = np.zeros(pts.shape[0], dtype=np.int32)
    return SourcePointCloud(points=pts, origin_frame=frames)
