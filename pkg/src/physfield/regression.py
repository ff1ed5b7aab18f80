"""Per-point property estimation: cosine similarities against material-name
text embeddings, temperature-softmax kernel regression over the dictionary
values, argmax material segmentation, and nearest-neighbor field queries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .fusion import FeaturePointCloud
from .materials import MaterialDictionary, combine_shore_scales
from .points import SourcePointCloud

DEFAULT_TEMPERATURE = {"mass_density": 0.1, "friction": 0.01, "hardness": 0.01,
                       "youngs_modulus": 0.01, "thermal_conductivity": 0.01,
                       "custom": 0.1}


@dataclass(frozen=True)
class KernelConfig:
    temperature: float = 0.1
    text_prompt_template: str = "{name}"

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")


def similarity_weights(feature: np.ndarray, text_embeddings: np.ndarray) -> np.ndarray:
    """Cosine similarities of one unit feature against K unit text embeddings."""
    z = np.asarray(feature, dtype=np.float64)
    e = np.asarray(text_embeddings, dtype=np.float64)
    if e.ndim != 2 or z.ndim != 1 or z.shape[0] != e.shape[1]:
        raise ValueError(
            f"dimension mismatch: feature {z.shape} vs embeddings {e.shape}"
        )
    if np.linalg.norm(z) == 0 or np.any(np.linalg.norm(e, axis=1) == 0):
        raise ValueError("zero-length vector has no cosine similarity")
    return e @ z


def softmax(weights: np.ndarray, temperature: float) -> np.ndarray:
    """Max-subtracted softmax over weights / temperature; safe down to
    temperatures around 1e-6."""
    w = np.asarray(weights, dtype=np.float64) / temperature
    w = w - w.max(axis=-1, keepdims=True)
    e = np.exp(w)
    return e / e.sum(axis=-1, keepdims=True)


def kernel_regress(weights: np.ndarray, values: np.ndarray, temperature: float) -> float:
    """Softmax-weighted average of the material values (a convex combination,
    so the result always lies within [min(values), max(values)])."""
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    w = np.asarray(weights, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    if w.shape != y.shape or w.ndim != 1 or w.size < 1:
        raise ValueError(f"weights {w.shape} and values {y.shape} must be equal-length 1-D")
    return float(softmax(w, temperature) @ y)


def segment_material(weights: np.ndarray) -> int:
    """Index of the best-matching material; ties break to the lowest index."""
    w = np.asarray(weights)
    if w.size < 1:
        raise ValueError("empty weight vector")
    return int(np.argmax(w))


@dataclass
class PropertyField:
    """Per-source-point property values with an exact nearest-neighbor index.

    ``weights`` keeps the raw per-point cosine similarities so downstream
    aggregation can reuse the same softmax weights.
    """

    source_points: SourcePointCloud
    values: np.ndarray           # (N,)
    material_index: np.ndarray   # (N,) int32
    weights: np.ndarray          # (N, K)
    kind: str
    units: str
    temperature: float
    _tree: Optional[cKDTree] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.source_points)
        if not (self.values.shape == (n,) and self.material_index.shape == (n,)
                and self.weights.shape[0] == n):
            raise ValueError("field arrays misaligned with source points")
        if n and not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    def __len__(self) -> int:
        return len(self.source_points)

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.source_points.points)
        return self._tree

    def nearest_index(self, x) -> int:
        """Exact nearest source point; ties break to the lowest point index."""
        q = np.asarray(x, dtype=np.float64)
        d, i = self.tree.query(q)
        ties = self.tree.query_ball_point(q, r=d)
        return int(min(ties)) if ties else int(i)

    def nearest_indices(self, xs: np.ndarray) -> np.ndarray:
        _, idx = self.tree.query(np.asarray(xs, dtype=np.float64))
        return np.asarray(idx, dtype=np.int64)


def build_field(cloud: FeaturePointCloud, dictionary: MaterialDictionary,
                text_provider, cfg: KernelConfig,
                retrieval: bool = False) -> PropertyField:
    """Regress a property value for every fused point.

    ``text_provider.embed_text(texts)`` must return unit-norm embeddings for
    the rendered material-name prompts. ``retrieval=True`` replaces the
    softmax average with the argmax material's value (the temperature-to-zero
    limit).
    """
    if len(dictionary) < 1:
        raise ValueError("empty material dictionary")
    entries = dictionary.entries
    if dictionary.property_kind == "hardness":
        entries = combine_shore_scales(entries)
    prompts = [cfg.text_prompt_template.format(name=e.name) for e in entries]
    text_emb = np.asarray(text_provider.embed_text(prompts), dtype=np.float64)
    if text_emb.shape != (len(entries), cloud.features.shape[1]):
        raise ValueError(
            f"text embeddings shape {text_emb.shape} does not match "
            f"{len(entries)} materials x {cloud.features.shape[1]} dims"
        )
    weights = cloud.features @ text_emb.T
    midpoints = np.array([e.value.midpoint() for e in entries])
    material_index = np.argmax(weights, axis=1).astype(np.int32)
    if retrieval:
        values = midpoints[material_index]
    else:
        values = softmax(weights, cfg.temperature) @ midpoints
    return PropertyField(
        source_points=cloud.points, values=values,
        material_index=material_index, weights=weights,
        kind=dictionary.property_kind, units=dictionary.units,
        temperature=cfg.temperature,
    )


def query_field(field: PropertyField, x) -> float:
    """Property value at an arbitrary point: the value of the nearest
    source point (ties to the lowest index)."""
    if len(field) == 0:
        raise ValueError("cannot query an empty field")
    return float(field.values[field.nearest_index(x)])


def query_field_many(field: PropertyField, xs: np.ndarray) -> np.ndarray:
    if len(field) == 0:
        raise ValueError("cannot query an empty field")
    return field.values[field.nearest_indices(xs)]
