"""Shared fixtures: synthetic scenes and an in-memory pipeline runner."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from physfield import synthetic as syn
from physfield.cli import fixture_config
from physfield.fusion import FusionConfig, fuse_features
from physfield.materials import estimate_thickness, propose_materials
from physfield.points import remove_outliers, sample_source_points, voxel_downsample
from physfield.regression import KernelConfig, build_field
from physfield.scene import normalize_poses

PLATE_SPEC = syn.SyntheticSpec(
    shape="plate", dimensions=(0.1, 0.1),
    parts=(syn.PartSpec("aluminum", 1000.0, 1.0),),
    camera_count=20, orbit_radius=0.35, resolution=64, seed=0, name="plate")

CUBE_SPEC = syn.SyntheticSpec(
    shape="box", dimensions=(0.1, 0.1, 0.1),
    parts=(syn.PartSpec("pine wood", 500.0, 1.0),),
    camera_count=6, orbit_radius=0.8, resolution=96, seed=0,
    axis_cameras=True, name="cube")

TWOBOX_SPEC = syn.SyntheticSpec(
    shape="two-material-box", dimensions=(0.1, 0.1, 0.1),
    parts=(syn.PartSpec("oak wood", 700.0, 2.0),
           syn.PartSpec("steel", 7850.0, 0.2)),
    camera_count=20, orbit_radius=0.4, resolution=64, seed=0, name="twobox")

SPHERE_SPEC = syn.SyntheticSpec(
    shape="sphere", dimensions=(0.1,),
    parts=(syn.PartSpec("glass", 2500.0, 0.5),),
    camera_count=12, orbit_radius=0.4, resolution=64, seed=0, name="sphere")


@dataclass
class PipelineRun:
    spec: syn.SyntheticSpec
    bundle: object           # normalized SceneBundle
    raw: object              # pre-downsample SourcePointCloud
    cloud: object            # extracted SourcePointCloud
    fused: object            # FeaturePointCloud
    dictionary: object
    field: object
    providers: object
    config: object

    @property
    def scene_scale(self) -> float:
        return self.bundle.scene_scale


def run_pipeline(spec: syn.SyntheticSpec, noise: float = 0.1,
                 feature_dim: int = 32, with_thickness: bool = True,
                 calibration: float = 1.0) -> PipelineRun:
    """Run extract->fuse->propose->predict in memory on a synthetic spec."""
    bundle, rasters = syn.build_bundle(spec)
    nb = normalize_poses(bundle)
    cfg = fixture_config(spec, noise=noise, calibration=calibration)
    raw = sample_source_points(nb, cfg.sampling)
    cloud = voxel_downsample(raw, cfg.sampling.voxel_grid)
    cloud = remove_outliers(cloud, cfg.sampling.outlier_k, cfg.sampling.outlier_sigma)
    providers = syn.MockProviders(spec, rasters, feature_dim=feature_dim,
                                  noise=noise, seed=spec.seed)
    fused = fuse_features(cloud, nb, providers, FusionConfig(feature_dim=feature_dim))
    caption = providers.caption(0)
    dictionary = propose_materials(caption, spec.property_kind,
                                   len(spec.parts), providers)
    if with_thickness:
        dictionary = estimate_thickness(caption, dictionary, providers)
    field = build_field(fused, dictionary, providers,
                        KernelConfig(temperature=cfg.resolved_temperature))
    return PipelineRun(spec=spec, bundle=nb, raw=raw, cloud=cloud, fused=fused,
                       dictionary=dictionary, field=field, providers=providers,
                       config=cfg)


@pytest.fixture(scope="session")
def plate_run() -> PipelineRun:
    return run_pipeline(PLATE_SPEC)


@pytest.fixture(scope="session")
def cube_run() -> PipelineRun:
    return run_pipeline(CUBE_SPEC)


@pytest.fixture(scope="session")
def twobox_run() -> PipelineRun:
    return run_pipeline(TWOBOX_SPEC)


@pytest.fixture(scope="session")
def plate_scene_dir(tmp_path_factory) -> str:
    out = tmp_path_factory.mktemp("scenes") / "plate"
    syn.generate_scene(PLATE_SPEC, out)
    return str(out)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
