"""Object-level mass: thickness-weighted cuboid integration over the visible
surface, a depth-carving volume upper bound, and calibration scaling.

Unit chain: dictionary thickness arrives in cm, is converted to meters and
then into the bundle's world units through scene_scale; densities stay in
kg/m^3; cell areas and volumes are converted back to metric before the
final kilogram figure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .materials import MaterialDictionary, ValueRange
from .points import voxel_downsample
from .regression import PropertyField, softmax
from .scene import SceneBundle, project_points

DEFAULT_SURFACE_GRID = 0.005
DEFAULT_CARVE_GRID = 0.002
DEFAULT_CALIBRATION = 0.6
MASS_CLIP_KG = (0.01, 100.0)


@dataclass(frozen=True)
class MassConfig:
    surface_grid: float = DEFAULT_SURFACE_GRID
    carve_grid: float = DEFAULT_CARVE_GRID
    calibration: float = DEFAULT_CALIBRATION
    clamp: bool = True

    def __post_init__(self):
        if not (self.surface_grid > 0 and self.carve_grid > 0):
            raise ValueError("grid sizes must be positive")
        if not self.calibration > 0:
            raise ValueError(f"calibration must be positive, got {self.calibration}")


@dataclass(frozen=True)
class CarveResult:
    """Voxels that survived depth carving; their total volume bounds the
    object volume from above (world units cubed)."""

    occupied_count: int
    voxel_edge: float
    centers: np.ndarray  # (M, 3) surviving voxel centers

    @property
    def volume_bound(self) -> float:
        return self.occupied_count * self.voxel_edge ** 3


@dataclass(frozen=True)
class MassEstimate:
    mass_kg: float
    implied_volume_world: float
    volume_bound_world: float
    clamped: bool


def carve_volume(bundle: SceneBundle, bbox, grid: float) -> CarveResult:
    """Remove voxels that any frame observes as free space.

    A voxel is carved iff in some frame its center projects in-bounds onto a
    valid-depth (and masked, when masks exist) pixel at least one grid cell
    in front of the stored surface. Everything else stays and bounds the
    volume.
    """
    if not grid > 0:
        raise ValueError(f"grid must be positive, got {grid}")
    lo = np.asarray(bbox[0], dtype=np.float64)
    hi = np.asarray(bbox[1], dtype=np.float64)
    axes = [np.arange(lo[a] + grid / 2.0, hi[a], grid) for a in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    carved = np.zeros(centers.shape[0], dtype=bool)

    for frame in bundle.frames:
        remaining = np.nonzero(~carved)[0]
        if remaining.size == 0:
            break
        u, v, z = project_points(frame.camera, centers[remaining])
        iu = np.round(u).astype(np.int64)
        iv = np.round(v).astype(np.int64)
        ok = (z > 0) & (iu >= 0) & (iu < frame.camera.width) \
            & (iv >= 0) & (iv < frame.camera.height)
        iu = np.clip(iu, 0, frame.camera.width - 1)
        iv = np.clip(iv, 0, frame.camera.height - 1)
        d = frame.depth[iv, iu]
        ok &= np.isfinite(d) & (d > 0)
        if frame.mask is not None:
            ok &= frame.mask[iv, iu]
        ok &= z < d - grid
        carved[remaining[ok]] = True

    kept = centers[~carved]
    return CarveResult(occupied_count=kept.shape[0], voxel_edge=grid, centers=kept)


def integrate_mass(field: PropertyField, dictionary: MaterialDictionary,
                   cfg: MassConfig, carve: CarveResult, scene_scale: float,
                   surface_cloud=None) -> MassEstimate:
    """Sum cuboid masses over voxel-downsampled surface cells.

    Each cell contributes area d^2 times the softmax-weighted product of
    material density and thickness, with the softmax taken over the nearest
    source point's similarity weights at the field's own temperature. When
    clamping, the implied total volume (d^2 times softmax-weighted
    thickness) is rescaled uniformly so it never exceeds the carving bound.

    The cell grid must tile the surface at pitch d for the d^2 footprints
    to cover the true area, so pass the dense pre-downsample samples as
    ``surface_cloud`` whenever the field's source cloud is sparser than d.
    """
    if field.kind != "mass_density":
        raise ValueError(f"mass integration needs a density field, got {field.kind}")
    if not dictionary.has_thickness:
        raise ValueError("dictionary is missing thickness estimates")
    base = surface_cloud if surface_cloud is not None else field.source_points
    cells = voxel_downsample(base, cfg.surface_grid)
    if len(cells) == 0:
        raise ValueError("no surface cells to integrate")

    idx = field.nearest_indices(cells.points)
    probs = softmax(field.weights[idx], field.temperature)  # (M, K)
    density = dictionary.midpoints()                        # kg/m^3
    thickness_w = dictionary.thickness_midpoints_cm() / 100.0 * scene_scale

    d2 = cfg.surface_grid ** 2
    cell_volumes = d2 * (probs @ thickness_w)               # world units^3
    cell_mass_terms = d2 * (probs @ (density * thickness_w))

    total_volume = float(cell_volumes.sum())
    scale = 1.0
    clamped = False
    if cfg.clamp and total_volume > carve.volume_bound:
        scale = carve.volume_bound / total_volume
        clamped = True
    mass = cfg.calibration * scale * float(cell_mass_terms.sum()) / scene_scale ** 3
    return MassEstimate(
        mass_kg=mass,
        implied_volume_world=scale * total_volume,
        volume_bound_world=carve.volume_bound,
        clamped=clamped,
    )


def integrate_mass_no_thickness(field: PropertyField, cfg: MassConfig,
                                carve: CarveResult,
                                scene_scale: float) -> MassEstimate:
    """Ablation: fill every surviving carve voxel with the local density."""
    if field.kind != "mass_density":
        raise ValueError(f"mass integration needs a density field, got {field.kind}")
    if carve.occupied_count == 0:
        raise ValueError("carving left no voxels to fill")
    values = field.values[field.nearest_indices(carve.centers)]
    voxel_volume = carve.voxel_edge ** 3
    mass = cfg.calibration * float(values.sum()) * voxel_volume / scene_scale ** 3
    return MassEstimate(
        mass_kg=mass,
        implied_volume_world=carve.volume_bound,
        volume_bound_world=carve.volume_bound,
        clamped=False,
    )


def clip_mass(m: float) -> float:
    """Clamp a mass prediction into the reporting range [0.01, 100] kg."""
    return float(min(max(m, MASS_CLIP_KG[0]), MASS_CLIP_KG[1]))


def mass_range(field: PropertyField, dictionary: MaterialDictionary,
               cfg: MassConfig, carve: CarveResult, scene_scale: float,
               surface_cloud=None) -> tuple[float, float]:
    """Rerun the integration at the dictionary range endpoints."""

    def pinned(pick):
        entries = []
        for e in dictionary.entries:
            v = pick(e.value)
            t = pick(e.thickness_cm)
            entries.append(replace(e, value=ValueRange(v, v),
                                   thickness_cm=ValueRange(t, t)))
        return replace(dictionary, entries=tuple(entries))

    low = integrate_mass(field, pinned(lambda r: r.low), cfg, carve,
                         scene_scale, surface_cloud)
    high = integrate_mass(field, pinned(lambda r: r.high), cfg, carve,
                          scene_scale, surface_cloud)
    return low.mass_kg, high.mass_kg


def save_mass_report(path: str | Path, scene: str, estimate: MassEstimate,
                     scene_scale: float, low_kg: float = None,
                     high_kg: float = None) -> None:
    payload = {
        "scene": scene,
        "mass_kg": estimate.mass_kg,
        "mass_low_kg": low_kg if low_kg is not None else estimate.mass_kg,
        "mass_high_kg": high_kg if high_kg is not None else estimate.mass_kg,
        "volume_bound_m3": estimate.volume_bound_world / scene_scale ** 3,
        "clamped": estimate.clamped,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
