"""Scene bundles: posed RGB frames with metric depth, optional masks, and
pinhole camera math.

Coordinate conventions (fixed for the whole pipeline):
  World frame: right-handed; poses stored as camera-to-world 4x4 rigid
      transforms.
  Camera frame: right-handed, +z forward (into the scene), +x right,
      +y down. Image origin is the top-left pixel; u runs along width,
      v along height; pixel centers sit at integer coordinates.
  Depth: camera-frame z (not ray length), in the bundle's current world
      units. Non-finite or zero values mark invalid pixels.

A bundle directory contains ``manifest.json`` plus one raw ``.f32`` depth
file and one RGB PNG per frame (masks are optional grayscale PNGs, value
> 127 meaning object).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

ROTATION_TOL = 1e-6
MANIFEST_NAME = "manifest.json"


class SceneError(ValueError):
    """Malformed bundle on disk or invalid frame/camera data."""


class DegeneratePoseError(SceneError):
    """Pose normalization is undefined (all camera centers coincide)."""


@dataclass(frozen=True)
class Camera:
    """Pinhole camera with a camera-to-world rigid transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    cam_to_world: np.ndarray  # (4, 4) float64

    def __post_init__(self):
        m = np.asarray(self.cam_to_world, dtype=np.float64)
        if m.shape != (4, 4):
            raise SceneError(f"cam_to_world must be 4x4, got {m.shape}")
        object.__setattr__(self, "cam_to_world", m)
        if not (self.fx > 0 and self.fy > 0):
            raise SceneError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise SceneError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )
        r = m[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=ROTATION_TOL):
            raise SceneError("cam_to_world rotation block is not orthonormal")
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=1e-9):
            raise SceneError("cam_to_world last row must be [0, 0, 0, 1]")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return self.cam_to_world[:3, 3]


@dataclass(frozen=True)
class Frame:
    """One posed view: image + metric depth raster + optional object mask."""

    camera: Camera
    image: np.ndarray            # (H, W, 3) uint8
    depth: np.ndarray            # (H, W) float32/float64
    mask: Optional[np.ndarray] = None  # (H, W) bool

    def __post_init__(self):
        h, w = self.camera.height, self.camera.width
        if self.depth.shape != (h, w):
            raise SceneError(
                f"depth raster {self.depth.shape} does not match camera {h}x{w}"
            )
        if self.image.shape[:2] != (h, w):
            raise SceneError(
                f"image raster {self.image.shape[:2]} does not match camera {h}x{w}"
            )
        if self.mask is not None and self.mask.shape != (h, w):
            raise SceneError(
                f"mask raster {self.mask.shape} does not match camera {h}x{w}"
            )

    def valid_depth(self) -> np.ndarray:
        """Boolean raster of pixels carrying usable depth (finite and > 0)."""
        d = self.depth
        return np.isfinite(d) & (d > 0)


@dataclass(frozen=True)
class SceneBundle:
    """Ordered collection of frames sharing one world frame.

    ``scene_scale`` is the cumulative factor taking original metric lengths
    to the bundle's current world units (1.0 for a freshly loaded bundle);
    metric quantities are recovered by dividing by it.
    """

    frames: tuple[Frame, ...]
    scene_scale: float = 1.0
    name: str = "scene"

    def __post_init__(self):
        if len(self.frames) < 1:
            raise SceneError("bundle must contain at least one frame")
        if not self.scene_scale > 0:
            raise SceneError(f"scene_scale must be positive, got {self.scene_scale}")
        object.__setattr__(self, "frames", tuple(self.frames))

    @property
    def has_masks(self) -> bool:
        return all(f.mask is not None for f in self.frames)

    def camera_centers(self) -> np.ndarray:
        return np.stack([f.camera.center for f in self.frames])


def _read_depth_file(path: Path, width: int, height: int) -> np.ndarray:
    try:
        raw = np.fromfile(path, dtype="<f4")
    except OSError as exc:
        raise SceneError(f"unreadable depth file {path}: {exc}") from exc
    if raw.size != width * height:
        raise SceneError(
            f"depth file {path} holds {raw.size} floats, expected {width * height}"
        )
    return raw.reshape(height, width)


def write_depth_file(path: Path, depth: np.ndarray) -> None:
    np.ascontiguousarray(depth, dtype="<f4").tofile(path)


def load_scene_bundle(path: str | Path) -> SceneBundle:
    """Load and validate a scene bundle directory.

    Raises SceneError on missing manifest, raster/camera size mismatches,
    non-orthonormal rotations, or unreadable rasters.
    """
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise SceneError(f"missing manifest: {manifest_path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("version") != 1:
        raise SceneError(f"unsupported bundle version {manifest.get('version')!r}")

    frames = []
    for i, rec in enumerate(manifest.get("frames", [])):
        try:
            pose = np.asarray(rec["cam_to_world"], dtype=np.float64).reshape(4, 4)
            camera = Camera(
                fx=float(rec["fx"]), fy=float(rec["fy"]),
                cx=float(rec["cx"]), cy=float(rec["cy"]),
                width=int(rec["width"]), height=int(rec["height"]),
                cam_to_world=pose,
            )
        except (KeyError, TypeError) as exc:
            raise SceneError(f"frame {i}: bad camera record ({exc})") from exc

        image = np.asarray(Image.open(root / rec["image"]).convert("RGB"), dtype=np.uint8)
        depth = _read_depth_file(root / rec["depth"], camera.width, camera.height)
        mask = None
        if rec.get("mask"):
            mask_raw = np.asarray(Image.open(root / rec["mask"]).convert("L"))
            mask = mask_raw > 127
        frames.append(Frame(camera=camera, image=image, depth=depth, mask=mask))

    if not frames:
        raise SceneError(f"manifest {manifest_path} lists no frames")
    return SceneBundle(frames=tuple(frames), name=manifest.get("name", root.name))


def write_scene_bundle(bundle: SceneBundle, path: str | Path) -> None:
    """Write a bundle to disk in the manifest + rasters layout."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    records = []
    for i, fr in enumerate(bundle.frames):
        image_rel = f"image_{i:04d}.png"
        depth_rel = f"depth_{i:04d}.f32"
        mask_rel = f"mask_{i:04d}.png" if fr.mask is not None else None
        Image.fromarray(fr.image).save(root / image_rel)
        write_depth_file(root / depth_rel, fr.depth)
        if mask_rel:
            Image.fromarray((fr.mask.astype(np.uint8)) * 255).save(root / mask_rel)
        cam = fr.camera
        records.append({
            "image": image_rel, "depth": depth_rel, "mask": mask_rel,
            "width": cam.width, "height": cam.height,
            "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "cam_to_world": [float(x) for x in cam.cam_to_world.reshape(-1)],
        })
    manifest = {"version": 1, "name": bundle.name, "frames": records}
    with open(root / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def normalize_poses(bundle: SceneBundle) -> SceneBundle:
    """Center camera centers on their centroid and scale them into [-1, 1]^3.

    Depths are scaled by the same factor and the factor is accumulated into
    ``scene_scale`` so metric quantities stay recoverable. Idempotent.
    """
    centers = bundle.camera_centers()
    centroid = centers.mean(axis=0)
    extent = np.abs(centers - centroid).max()
    if extent <= 0:
        raise DegeneratePoseError(
            "camera centers are coincident; normalization scale is undefined"
        )
    frames = []
    for fr in bundle.frames:
        pose = fr.camera.cam_to_world.copy()
        pose[:3, 3] = (pose[:3, 3] - centroid) / extent
        camera = replace(fr.camera, cam_to_world=pose)
        frames.append(replace(fr, camera=camera, depth=fr.depth / extent))
    return SceneBundle(
        frames=tuple(frames),
        scene_scale=bundle.scene_scale / extent,
        name=bundle.name,
    )


def project_point(camera: Camera, point) -> tuple[float, float, float]:
    """Project a world point; returns (u, v, z-depth).

    A non-positive depth signals the point is behind the camera; callers
    check depth and image bounds themselves.
    """
    p = np.asarray(point, dtype=np.float64)
    m = camera.cam_to_world
    pc = m[:3, :3].T @ (p - m[:3, 3])
    z = pc[2]
    if z == 0:
        return float("nan"), float("nan"), 0.0
    u = camera.fx * pc[0] / z + camera.cx
    v = camera.fy * pc[1] / z + camera.cy
    return float(u), float(v), float(z)


def project_points(camera: Camera, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized projection of an (N, 3) array; returns (u, v, z) arrays."""
    pts = np.asarray(points, dtype=np.float64)
    m = camera.cam_to_world
    pc = (pts - m[:3, 3]) @ m[:3, :3]
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.fx * pc[:, 0] / z + camera.cx
        v = camera.fy * pc[:, 1] / z + camera.cy
    return u, v, z


def backproject(camera: Camera, u, v, depth) -> np.ndarray:
    """Lift pixel coordinates + z-depth back to world points.

    Accepts scalars or equally shaped arrays; returns (..., 3) world points.
    Inverse of project_point for depth > 0.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    x = (u - camera.cx) / camera.fx * depth
    y = (v - camera.cy) / camera.fy * depth
    pc = np.stack([x, y, depth], axis=-1)
    m = camera.cam_to_world
    return pc @ m[:3, :3].T + m[:3, 3]
