"""Deterministic synthetic scene bundles with analytically known geometry,
per-pixel material IDs, and ground-truth masses, plus the mock model
providers that make fully offline pipeline runs possible.

Shapes are centered at the metric origin: a one-sided plate in the z=0
plane (viewed from the upper hemisphere), axis-aligned boxes (optionally
with the top face in a different material), and a sphere. Depth maps are
exact ray intersections; the material raster stores part index + 1 with 0
for background.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .materials import MaterialEntry, ValueRange, render_entries
from .providers import ProviderError
from .scene import Camera, Frame, SceneBundle, write_scene_bundle

SHAPES = ("plate", "box", "two-material-box", "sphere")
GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))

SPEC_FILE = "spec.json"
GROUND_TRUTH_FILE = "gt.json"


@dataclass(frozen=True)
class PartSpec:
    name: str
    value: float              # property value (e.g. kg/m^3 for density)
    thickness_cm: float
    shore: Optional[str] = None


@dataclass(frozen=True)
class SyntheticSpec:
    shape: str
    dimensions: tuple          # meters; plate (L, W), box (X, Y, Z), sphere (diameter,)
    parts: tuple               # PartSpec, id = index + 1 in material rasters
    camera_count: int = 20
    orbit_radius: float = 0.35
    resolution: int = 64
    seed: int = 0
    property_kind: str = "mass_density"
    axis_cameras: bool = False  # first six cameras on the +-xyz axes (carving)
    name: str = "synthetic"

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        dims = tuple(float(d) for d in self.dimensions)
        if not all(d > 0 for d in dims):
            raise ValueError(f"dimensions must be positive, got {dims}")
        object.__setattr__(self, "dimensions", dims)
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise ValueError("at least one material part required")
        if self.shape == "two-material-box" and len(self.parts) != 2:
            raise ValueError("two-material-box needs exactly 2 parts")
        if self.camera_count < 1:
            raise ValueError("camera_count must be >= 1")
        if self.axis_cameras and self.camera_count < 6:
            raise ValueError("axis camera layouts need >= 6 cameras for carving")

    def to_json(self) -> dict:
        return {
            "shape": self.shape, "dimensions": list(self.dimensions),
            "parts": [
                {"name": p.name, "value": p.value,
                 "thickness_cm": p.thickness_cm, "shore": p.shore}
                for p in self.parts
            ],
            "camera_count": self.camera_count, "orbit_radius": self.orbit_radius,
            "resolution": self.resolution, "seed": self.seed,
            "property_kind": self.property_kind, "axis_cameras": self.axis_cameras,
            "name": self.name,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "SyntheticSpec":
        parts = tuple(
            PartSpec(name=p["name"], value=p["value"],
                     thickness_cm=p["thickness_cm"], shore=p.get("shore"))
            for p in payload["parts"]
        )
        return cls(
            shape=payload["shape"], dimensions=tuple(payload["dimensions"]),
            parts=parts, camera_count=payload["camera_count"],
            orbit_radius=payload["orbit_radius"], resolution=payload["resolution"],
            seed=payload["seed"], property_kind=payload["property_kind"],
            axis_cameras=payload.get("axis_cameras", False),
            name=payload.get("name", "synthetic"),
        )


def camera_centers(spec: SyntheticSpec) -> np.ndarray:
    """Deterministic camera placement: plates get an upper-hemisphere spiral
    (one-sided geometry), everything else a full Fibonacci sphere; axis
    layouts pin the first six cameras to the coordinate axes."""
    r = spec.orbit_radius
    n = spec.camera_count
    centers = []
    if spec.axis_cameras:
        for axis in range(3):
            for sign in (1.0, -1.0):
                c = np.zeros(3)
                c[axis] = sign * r
                centers.append(c)
        n -= 6
    hemisphere = spec.shape == "plate"
    for i in range(n):
        if hemisphere:
            z = 0.15 + 0.8 * (i + 0.5) / max(n, 1)
        else:
            z = 1.0 - 2.0 * (i + 0.5) / max(n, 1)
        rho = math.sqrt(max(0.0, 1.0 - z * z))
        phi = i * GOLDEN_ANGLE
        centers.append(r * np.array([rho * math.cos(phi), rho * math.sin(phi), z]))
    return np.stack(centers)


def _look_at(eye: np.ndarray) -> np.ndarray:
    forward = -eye / np.linalg.norm(eye)
    up_hint = np.array([0.0, 0.0, 1.0])
    if abs(forward @ up_hint) > 0.99:
        up_hint = np.array([0.0, 1.0, 0.0])
    right = np.cross(forward, up_hint)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    pose = np.eye(4)
    pose[:3, 0] = right
    pose[:3, 1] = down
    pose[:3, 2] = forward
    pose[:3, 3] = eye
    return pose


def object_radius(spec: SyntheticSpec) -> float:
    dims = np.zeros(3)
    if spec.shape == "plate":
        dims[:2] = spec.dimensions[:2]
    elif spec.shape == "sphere":
        dims[:] = spec.dimensions[0]
    else:
        dims[:] = spec.dimensions[:3]
    return float(np.linalg.norm(dims / 2.0))


def _intersect(spec: SyntheticSpec, origin: np.ndarray,
               dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ray-shape intersection for rays origin + s*dirs.

    Returns (s, material_id) with s = inf and id = 0 for misses. The ray
    parameter s equals camera z-depth because camera-frame directions are
    built with unit z.
    """
    n = dirs.shape[0]
    s = np.full(n, np.inf)
    mat = np.zeros(n, dtype=np.uint8)

    if spec.shape == "plate":
        length, width = spec.dimensions[:2]
        dz = dirs[:, 2]
        valid = dz != 0
        t = np.where(valid, -origin[2] / np.where(valid, dz, 1.0), np.inf)
        hit = valid & (t > 1e-9)
        px = origin[0] + t * dirs[:, 0]
        py = origin[1] + t * dirs[:, 1]
        hit &= (np.abs(px) <= length / 2.0) & (np.abs(py) <= width / 2.0)
        s[hit] = t[hit]
        mat[hit] = 1
        return s, mat

    if spec.shape == "sphere":
        radius = spec.dimensions[0] / 2.0
        a = np.einsum("ij,ij->i", dirs, dirs)
        b = 2.0 * dirs @ origin
        c = origin @ origin - radius * radius
        disc = b * b - 4.0 * a * c
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t0 = (-b - sq) / (2.0 * a)
        t1 = (-b + sq) / (2.0 * a)
        t = np.where(t0 > 1e-9, t0, t1)
        hit &= t > 1e-9
        s[hit] = t[hit]
        mat[hit] = 1
        return s, mat

    # axis-aligned box, optionally with a separate top-face material
    half = np.array(spec.dimensions[:3]) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t_lo = (-half - origin) * inv
        t_hi = (half - origin) * inv
    tmin = np.fmin(t_lo, t_hi)
    tmax = np.fmax(t_lo, t_hi)
    t_near = tmin.max(axis=1)
    t_far = tmax.min(axis=1)
    hit = (t_far >= t_near) & (t_near > 1e-9)
    s[hit] = t_near[hit]
    if spec.shape == "two-material-box":
        entry_axis = np.argmax(tmin, axis=1)
        pz = origin[2] + t_near * dirs[:, 2]
        top = (entry_axis == 2) & (pz > 0)
        mat[hit & top] = 1
        mat[hit & ~top] = 2
    else:
        mat[hit] = 1
    return s, mat


def render_frame(spec: SyntheticSpec, camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Exact float64 depth and material-ID rasters for one camera.

    Bundles store depth as float32 (the file contract); the cast happens at
    bundle assembly so the rendering math itself stays exact.
    """
    h, w = camera.height, camera.width
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    dirs_cam = np.stack([
        (us.ravel() - camera.cx) / camera.fx,
        (vs.ravel() - camera.cy) / camera.fy,
        np.ones(h * w),
    ], axis=1)
    rot = camera.cam_to_world[:3, :3]
    dirs = dirs_cam @ rot.T
    origin = camera.cam_to_world[:3, 3]
    s, mat = _intersect(spec, origin, dirs)
    depth = np.where(np.isfinite(s), s, 0.0).reshape(h, w)
    return depth, mat.reshape(h, w)


_PALETTE = np.array([
    [255, 255, 255],   # background
    [190, 120, 60],    # part 1
    [90, 110, 200],    # part 2
    [80, 180, 90],     # part 3
    [210, 200, 80],    # part 4
], dtype=np.uint8)


def part_areas(spec: SyntheticSpec) -> np.ndarray:
    """Surface area (m^2) attributed to each part for the sheet mass model."""
    if spec.shape == "plate":
        length, width = spec.dimensions[:2]
        return np.array([length * width])
    if spec.shape == "sphere":
        radius = spec.dimensions[0] / 2.0
        return np.array([4.0 * math.pi * radius ** 2])
    x, y, z = spec.dimensions[:3]
    total = 2.0 * (x * y + y * z + x * z)
    if spec.shape == "two-material-box":
        top = x * y
        return np.array([top, total - top])
    return np.array([total])


def ground_truth_mass(spec: SyntheticSpec) -> float:
    """Sheet-model mass: sum over parts of density * thickness * area."""
    areas = part_areas(spec)
    return float(sum(
        p.value * (p.thickness_cm / 100.0) * a
        for p, a in zip(spec.parts, areas)
    ))


def sample_surface_points(spec: SyntheticSpec, n: int,
                          rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Seeded surface samples with their part ids (metric coordinates)."""
    if spec.shape == "plate":
        length, width = spec.dimensions[:2]
        xy = rng.uniform(-0.5, 0.5, size=(n, 2)) * [length, width]
        pts = np.column_stack([xy, np.zeros(n)])
        return pts, np.ones(n, dtype=np.int64)
    if spec.shape == "sphere":
        radius = spec.dimensions[0] / 2.0
        g = rng.normal(size=(n, 3))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return g * radius, np.ones(n, dtype=np.int64)
    half = np.array(spec.dimensions[:3]) / 2.0
    faces = np.array([half[1] * half[2], half[1] * half[2],
                      half[0] * half[2], half[0] * half[2],
                      half[0] * half[1], half[0] * half[1]])
    face = rng.choice(6, size=n, p=faces / faces.sum())
    pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    pts[np.arange(n), axis] = sign * half[axis]
    if spec.shape == "two-material-box":
        ids = np.where((axis == 2) & (sign > 0), 1, 2)
    else:
        ids = np.ones(n, dtype=np.int64)
    return pts, ids


def material_at(spec: SyntheticSpec, points_metric: np.ndarray) -> np.ndarray:
    """Part id (1-based) of the nearest surface region for metric points."""
    pts = np.atleast_2d(points_metric)
    if spec.shape != "two-material-box":
        return np.ones(pts.shape[0], dtype=np.int64)
    half = np.array(spec.dimensions[:3]) / 2.0
    # a surface point belongs to the top face iff z is its dominant face
    dist_to_face = half - np.abs(pts)
    axis = np.argmin(np.abs(dist_to_face), axis=1)
    top = (axis == 2) & (pts[:, 2] > 0)
    return np.where(top, 1, 2)


def boundary_distance(spec: SyntheticSpec, points_metric: np.ndarray) -> np.ndarray:
    """Euclidean distance (m) to the material boundary; infinite for
    single-material shapes."""
    pts = np.atleast_2d(points_metric)
    if spec.shape != "two-material-box":
        return np.full(pts.shape[0], np.inf)
    hx, hy, hz = np.array(spec.dimensions[:3]) / 2.0
    corners = [(-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy)]
    best = np.full(pts.shape[0], np.inf)
    for i in range(4):
        ax, ay = corners[i]
        bx, by = corners[(i + 1) % 4]
        a = np.array([ax, ay, hz])
        b = np.array([bx, by, hz])
        ab = b - a
        t = np.clip((pts - a) @ ab / (ab @ ab), 0.0, 1.0)
        closest = a + t[:, None] * ab
        best = np.minimum(best, np.linalg.norm(pts - closest, axis=1))
    return best


def build_bundle(spec: SyntheticSpec) -> tuple[SceneBundle, list[np.ndarray]]:
    """Render all frames in memory; returns the bundle plus material rasters."""
    res = spec.resolution
    f = 0.7 * (res / 2.0) * spec.orbit_radius / object_radius(spec)
    frames = []
    material_rasters = []
    for center in camera_centers(spec):
        camera = Camera(fx=f, fy=f, cx=res / 2.0, cy=res / 2.0,
                        width=res, height=res, cam_to_world=_look_at(center))
        depth, mat = render_frame(spec, camera)
        image = _PALETTE[np.minimum(mat, len(_PALETTE) - 1)]
        frames.append(Frame(camera=camera, image=image,
                            depth=depth.astype(np.float32), mask=mat > 0))
        material_rasters.append(mat)
    return SceneBundle(frames=tuple(frames), name=spec.name), material_rasters


def generate_scene(spec: SyntheticSpec, out_dir: str | Path) -> Path:
    """Write the bundle, material rasters, spec, and ground truth to disk."""
    out = Path(out_dir)
    bundle, rasters = build_bundle(spec)
    write_scene_bundle(bundle, out)
    for i, mat in enumerate(rasters):
        Image.fromarray(mat.astype(np.uint8)).save(out / f"material_{i:04d}.png")
    with open(out / SPEC_FILE, "w") as fh:
        json.dump(spec.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    rng = np.random.default_rng(spec.seed)
    pts, ids = sample_surface_points(spec, min(500, 100 * len(spec.parts)), rng)
    gt = {
        "mass_kg": ground_truth_mass(spec),
        "per_point": [
            {"xyz": [float(c) for c in p],
             "material": spec.parts[i - 1].name,
             "value": spec.parts[i - 1].value}
            for p, i in zip(pts, ids)
        ],
    }
    with open(out / GROUND_TRUTH_FILE, "w") as fh:
        json.dump(gt, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def load_spec(scene_dir: str | Path) -> SyntheticSpec:
    with open(Path(scene_dir) / SPEC_FILE) as fh:
        return SyntheticSpec.from_json(json.load(fh))


def to_metric(spec: SyntheticSpec, world_points: np.ndarray) -> np.ndarray:
    """Invert the pipeline's pose normalization for this spec's cameras."""
    centers = camera_centers(spec)
    centroid = centers.mean(axis=0)
    extent = np.abs(centers - centroid).max()
    return np.asarray(world_points) * extent + centroid


def normalized_object_bbox(spec: SyntheticSpec, pad: float = 0.1) -> tuple:
    """Object bounding box in pose-normalized world coordinates.

    Mirrors the pose normalization applied by the pipeline (camera centroid
    shift + max-extent scaling) so extraction configs can be derived
    without loading the scene.
    """
    centers = camera_centers(spec)
    centroid = centers.mean(axis=0)
    extent = np.abs(centers - centroid).max()
    dims = np.zeros(3)
    if spec.shape == "plate":
        dims[:2] = spec.dimensions[:2]
    elif spec.shape == "sphere":
        dims[:] = spec.dimensions[0]
    else:
        dims[:] = spec.dimensions[:3]
    half = dims / 2.0 + pad * dims.max() / 2.0 + 1e-3
    lo = (-half - centroid) / extent
    hi = (half - centroid) / extent
    return (tuple(lo), tuple(hi))


class MockProviders:
    """Deterministic providers driven by synthetic ground truth.

    Patch embeddings are the unit basis vector of the material under the
    patch center plus seeded noise of magnitude ``noise``; text embeddings
    of material names are the same basis vectors; completions are rendered
    from the scene's material parts in the canonical reply grammar.
    """

    def __init__(self, spec: SyntheticSpec, material_rasters: Sequence[np.ndarray],
                 feature_dim: int = 512, noise: float = 0.0, seed: int = 0):
        if len(spec.parts) > feature_dim:
            raise ValueError("feature_dim must be >= number of materials")
        self.spec = spec
        self.rasters = list(material_rasters)
        self.feature_dim = feature_dim
        self.noise = noise
        self.seed = seed
        self._name_to_part = {p.name.casefold(): i for i, p in enumerate(spec.parts)}
        # noise is keyed by raster content, not frame index, so reordering
        # the views never changes a frame's embeddings
        self._frame_tags = [
            int.from_bytes(hashlib.sha256(r.tobytes()).digest()[:8], "little")
            for r in self.rasters
        ]

    def _basis(self, part_index: int) -> np.ndarray:
        out = np.zeros(self.feature_dim)
        out[part_index] = 1.0
        return out

    def _global_vector(self) -> np.ndarray:
        v = np.mean([self._basis(i) for i in range(len(self.spec.parts))], axis=0)
        return v / np.linalg.norm(v)

    def embed_patches(self, frame_index: int, centers, patch_size: int) -> np.ndarray:
        raster = self.rasters[frame_index]
        tag = self._frame_tags[frame_index]
        out = np.empty((len(centers), self.feature_dim))
        for i, (u, v) in enumerate(np.asarray(centers, dtype=np.int64)):
            mat = int(raster[int(v), int(u)])
            base = self._global_vector() if mat == 0 else self._basis(mat - 1)
            if self.noise > 0:
                rng = np.random.default_rng((self.seed, tag, int(u), int(v)))
                g = rng.normal(size=self.feature_dim)
                base = base + self.noise * g / np.linalg.norm(g)
                base = base / np.linalg.norm(base)
            out[i] = base
        return out

    def embed_text(self, texts: Sequence[str]) -> np.ndarray:
        out = []
        for t in texts:
            key = t.casefold()
            if key not in self._name_to_part:
                raise ProviderError(f"unknown material name {t!r}")
            out.append(self._basis(self._name_to_part[key]))
        return np.stack(out)

    def caption(self, frame_index: int) -> str:
        names = ", ".join(p.name for p in self.spec.parts)
        return f"a {self.spec.shape} made of {names}"

    def complete(self, system: str, user: str) -> str:
        if "thickness (in cm)" in system:
            entries = [
                MaterialEntry(name=p.name,
                              value=ValueRange(p.thickness_cm, p.thickness_cm))
                for p in self.spec.parts
            ]
            return render_entries(entries, "thickness")
        markers = {
            "mass_density": "mass densities", "friction": "friction coefficient",
            "hardness": "Shore A hardness", "youngs_modulus": "Young's modulus",
            "thermal_conductivity": "thermal conductivity",
        }
        asked = next((k for k, m in markers.items() if m in system), None)
        scene_kind = self.spec.property_kind
        if asked == scene_kind:
            entries = [
                MaterialEntry(name=p.name, value=ValueRange(p.value, p.value),
                              shore_scale=p.shore)
                for p in self.spec.parts
            ]
            return render_entries(entries, asked)
        if asked == "mass_density":
            # density proposals on non-density scenes exist only to fix the
            # material names; the values are placeholders
            entries = [
                MaterialEntry(name=p.name, value=ValueRange(1000.0, 1000.0))
                for p in self.spec.parts
            ]
            return render_entries(entries, asked)
        raise ProviderError(
            f"mock completion for this scene answers {scene_kind!r} prompts, "
            f"not {asked!r}"
        )


def make_mock_providers(scene_dir: str | Path, feature_dim: int = 512,
                        noise: float = 0.0, seed: int = 0) -> MockProviders:
    """Load the mock providers for a generated scene directory."""
    root = Path(scene_dir)
    spec = load_spec(root)
    rasters = []
    for i in range(spec.camera_count):
        path = root / f"material_{i:04d}.png"
        if not path.is_file():
            raise ProviderError(f"missing material raster {path}")
        rasters.append(np.asarray(Image.open(path)))
    return MockProviders(spec, rasters, feature_dim=feature_dim,
                         noise=noise, seed=seed)
