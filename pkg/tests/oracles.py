"""Independent brute-force oracles shared by the unit and acceptance tests.

Each oracle recomputes its operation through a different code path than the
implementation it checks (dict bucketing, full pairwise distances, linear
scans, dense eigendecomposition, high-precision arithmetic).
"""

from __future__ import annotations

import numpy as np


def voxel_oracle(points: np.ndarray, frames: np.ndarray, grid: float):
    """Dict-bucket downsampling with exact rational accumulation."""
    from fractions import Fraction

    buckets: dict[tuple, list[int]] = {}
    for i, p in enumerate(points):
        key = tuple(int(np.floor(c / grid)) for c in p)
        buckets.setdefault(key, []).append(i)
    out_pts, out_frames = [], []
    for key in sorted(buckets):
        members = buckets[key]
        sums = [Fraction(0), Fraction(0), Fraction(0)]
        for i in members:
            for a in range(3):
                sums[a] += Fraction(float(points[i, a]))
        out_pts.append([float(s) / len(members) for s in sums])
        out_frames.append(frames[members[0]])
    return np.array(out_pts).reshape(-1, 3), np.array(out_frames)


def outlier_keep_oracle(points: np.ndarray, k: int, sigma: float) -> np.ndarray:
    """Keep mask from a full pairwise-distance kNN statistic."""
    n = len(points)
    if n <= k:
        return np.ones(n, dtype=bool)
    diffs = points[:, None, :] - points[None, :, :]
    dists = np.sqrt((diffs ** 2).sum(axis=2))
    means = np.empty(n)
    for i in range(n):
        sorted_d = np.sort(dists[i])
        means[i] = np.sum(sorted_d[:k + 1]) / k  # drops the self-distance 0
    mu, sd = means.mean(), means.std()
    return means <= mu + sigma * sd


def nearest_value_oracle(sources: np.ndarray, values: np.ndarray,
                         query: np.ndarray) -> float:
    """Linear-scan nearest neighbor (lowest index wins ties)."""
    return float(values[np.argmin(((sources - query) ** 2).sum(axis=1))])


def pca_color_oracle(features: np.ndarray) -> np.ndarray:
    """Top-3 PCA colors via dense covariance eigendecomposition."""
    centered = features - features.mean(axis=0)
    _, evecs = np.linalg.eigh(centered.T @ centered)
    proj = centered @ evecs[:, ::-1][:, :3]
    out = np.zeros_like(proj)
    for j in range(proj.shape[1]):
        lo, hi = proj[:, j].min(), proj[:, j].max()
        if hi > lo:
            out[:, j] = (proj[:, j] - lo) / (hi - lo) * 255.0
    return out


def kernel_oracle(weights, values, temperature) -> float:
    """Direct high-precision softmax average via mpmath."""
    import mpmath as mp

    with mp.workdps(50):
        e = [mp.e ** (mp.mpf(float(w)) / mp.mpf(float(temperature)))
             for w in weights]
        num = mp.fsum(ei * mp.mpf(float(y)) for ei, y in zip(e, values))
        return float(num / mp.fsum(e))


def colors_match_up_to_sign(ours: np.ndarray, expected: np.ndarray,
                            atol: float) -> bool:
    """Per-channel comparison allowing the PCA sign flip c -> 255 - c."""
    for j in range(ours.shape[1]):
        direct = np.abs(ours[:, j] - expected[:, j]).max()
        flipped = np.abs(ours[:, j] - (255.0 - expected[:, j])).max()
        if min(direct, flipped) > atol:
            return False
    return True
