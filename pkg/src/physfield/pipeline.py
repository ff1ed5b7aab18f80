"""Stage orchestration with cached intermediates.

Each stage is a pure function of (config, upstream artifacts, seed): it
validates its upstream files, writes its own artifacts deterministically,
and records a stamp carrying the config hash so unchanged reruns are
no-ops. Stages fail fast naming the exact missing artifact.

Artifact layout inside the output directory::

    points.f32 / point_frames.i32 / extract.json      extract
    fused_points.f32 / fused_frames.i32 /
        features.f32 / visibility.i32 / fuse.json     fuse
    dictionary_<kind>.json                            propose
    values_<kind>.f32 / weights_<kind>.f32 /
        materials_<kind>.i32 / field_<kind>.json      predict
    mass_report.json                                  mass
    metrics.csv / metrics.json / metrics.png          eval
    cloud_<tag>.ply / preview_<tag>.png               export
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import materials as mat
from . import mass as massmod
from .export import value_colormap, write_ply
from .figures import render_cloud_preview, render_metrics_figure
from .fusion import FeaturePointCloud, FusionConfig, fuse_features, pca_colorize, uniform_feature_cloud
from .metrics import MetricsReport, aggregate_report
from .points import (SamplingConfig, SourcePointCloud, load_cloud,
                     remove_outliers, sample_source_points, save_cloud,
                     voxel_downsample)
from .providers import FileProviders, HttpProviders
from .regression import (DEFAULT_TEMPERATURE, KernelConfig, PropertyField,
                         build_field)
from .scene import SceneBundle, load_scene_bundle, normalize_poses

PROPERTY_ALIASES = {
    "density": "mass_density", "friction": "friction", "hardness": "hardness",
    "youngs": "youngs_modulus", "thermal": "thermal_conductivity",
}
DEFAULT_CARVE_PAD_CELLS = 2


class PipelineError(RuntimeError):
    """Missing upstream artifact or invalid stage configuration."""


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    property_kind: str = "mass_density"
    provider: str = "mock"              # mock | file | http
    endpoint: Optional[str] = None      # http mode
    provider_path: Optional[str] = None  # file mode
    mock_noise: float = 0.0
    feature_dim: int = 512
    k_materials: Optional[int] = None   # None -> per-kind default
    temperature: Optional[float] = None  # None -> per-kind default
    text_prompt_template: str = "{name}"
    normalize: bool = True
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    mass: massmod.MassConfig = field(default_factory=massmod.MassConfig)
    no_thickness: bool = False
    retrieval: bool = False
    uniform_feature: bool = False

    def __post_init__(self):
        if self.property_kind not in mat.PROPERTY_KINDS:
            raise ValueError(f"unknown property kind {self.property_kind!r}")
        if self.provider not in ("mock", "file", "http"):
            raise ValueError(f"provider must be mock, file or http, got {self.provider!r}")
        if self.provider == "http" and not self.endpoint:
            raise ValueError("http provider needs --endpoint")
        if self.provider == "file" and not self.provider_path:
            raise ValueError("file provider needs a provider directory path")

    @property
    def resolved_k(self) -> int:
        return self.k_materials if self.k_materials is not None \
            else mat.DEFAULT_K[self.property_kind]

    @property
    def resolved_temperature(self) -> float:
        return self.temperature if self.temperature is not None \
            else DEFAULT_TEMPERATURE[self.property_kind]

    def to_json(self) -> dict:
        payload = asdict(self)
        payload["sampling"]["bbox"] = [list(map(float, b)) for b in self.sampling.bbox]
        return payload

    @classmethod
    def from_json(cls, payload: dict) -> "PipelineConfig":
        payload = dict(payload)
        if "sampling" in payload:
            s = dict(payload["sampling"])
            if "bbox" in s:
                s["bbox"] = (tuple(s["bbox"][0]), tuple(s["bbox"][1]))
            payload["sampling"] = SamplingConfig(**s)
        if "fusion" in payload:
            payload["fusion"] = FusionConfig(**payload["fusion"])
        if "mass" in payload:
            payload["mass"] = massmod.MassConfig(**payload["mass"])
        return cls(**payload)

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def make_providers(cfg: PipelineConfig, scene_dir: str | Path,
                   bundle: Optional[SceneBundle] = None):
    if cfg.provider == "mock":
        from .synthetic import make_mock_providers

        return make_mock_providers(scene_dir, feature_dim=cfg.feature_dim,
                                   noise=cfg.mock_noise, seed=cfg.seed)
    if cfg.provider == "file":
        return FileProviders(cfg.provider_path)
    return HttpProviders(cfg.endpoint, bundle=bundle)


def _stamp_path(out_dir: Path, stage: str) -> Path:
    return out_dir / f"{stage}.stamp.json"


def _is_cached(out_dir: Path, stage: str, cfg: PipelineConfig,
               outputs: list[str], force: bool) -> bool:
    if force:
        return False
    stamp = _stamp_path(out_dir, stage)
    if not stamp.is_file():
        return False
    with open(stamp) as fh:
        recorded = json.load(fh)
    if recorded.get("config_hash") != cfg.config_hash():
        return False
    return all((out_dir / name).is_file() for name in outputs)


def _write_stamp(out_dir: Path, stage: str, cfg: PipelineConfig) -> None:
    with open(_stamp_path(out_dir, stage), "w") as fh:
        json.dump({"stage": stage, "config_hash": cfg.config_hash()}, fh,
                  indent=2, sort_keys=True)
        fh.write("\n")


def _require(out_dir: Path, names: list[str], producer: str) -> None:
    missing = [n for n in names if not (out_dir / n).is_file()]
    if missing:
        raise PipelineError(
            f"missing artifact {missing[0]!r} in {out_dir} (run the "
            f"{producer!r} stage first)"
        )


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_bundle_for(cfg: PipelineConfig, scene_dir: str | Path) -> SceneBundle:
    bundle = load_scene_bundle(scene_dir)
    if cfg.normalize:
        bundle = normalize_poses(bundle)
    return bundle


def stage_extract(cfg: PipelineConfig, scene_dir: str | Path,
                  out_dir: str | Path, force: bool = False) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = ["points.f32", "point_frames.i32", "raw_points.f32", "extract.json"]
    if _is_cached(out, "extract", cfg, outputs, force):
        return {"stage": "extract", "cached": True}

    bundle = load_bundle_for(cfg, scene_dir)
    raw = sample_source_points(bundle, cfg.sampling)
    cloud = voxel_downsample(raw, cfg.sampling.voxel_grid)
    cloud = remove_outliers(cloud, cfg.sampling.outlier_k, cfg.sampling.outlier_sigma)
    save_cloud(cloud, out / "points.f32", out / "point_frames.i32")
    # dense pre-downsample samples, kept for surface-cell integration
    save_cloud(raw, out / "raw_points.f32")
    _write_json(out / "extract.json", {
        "scene": bundle.name, "n_points": len(cloud), "n_raw": len(raw),
        "scene_scale": bundle.scene_scale,
    })
    _write_stamp(out, "extract", cfg)
    return {"stage": "extract", "cached": False, "n_points": len(cloud)}


def stage_fuse(cfg: PipelineConfig, scene_dir: str | Path,
               out_dir: str | Path, force: bool = False) -> dict:
    out = Path(out_dir)
    outputs = ["fused_points.f32", "fused_frames.i32", "features.f32",
               "visibility.i32", "fuse.json"]
    if _is_cached(out, "fuse", cfg, outputs, force):
        return {"stage": "fuse", "cached": True}
    _require(out, ["points.f32", "point_frames.i32"], "extract")

    bundle = load_bundle_for(cfg, scene_dir)
    cloud = load_cloud(out / "points.f32", out / "point_frames.i32")
    providers = make_providers(cfg, scene_dir, bundle)
    if cfg.uniform_feature:
        canonical = mat.select_canonical_view(bundle, cfg.seed)
        fused = uniform_feature_cloud(cloud, bundle, providers, cfg.fusion, canonical)
    else:
        fused = fuse_features(cloud, bundle, providers, cfg.fusion)
    save_cloud(fused.points, out / "fused_points.f32", out / "fused_frames.i32")
    np.ascontiguousarray(fused.features, dtype="<f4").tofile(out / "features.f32")
    np.ascontiguousarray(fused.visibility, dtype="<i4").tofile(out / "visibility.i32")
    _write_json(out / "fuse.json", {
        "n_points": len(fused), "feature_dim": cfg.fusion.feature_dim,
        "n_dropped": int(fused.dropped_indices.size),
        "dropped_indices": [int(i) for i in fused.dropped_indices[:1000]],
    })
    _write_stamp(out, "fuse", cfg)
    return {"stage": "fuse", "cached": False, "n_points": len(fused),
            "n_dropped": int(fused.dropped_indices.size)}


def _dictionary_path(out: Path, kind: str) -> Path:
    return out / f"dictionary_{kind}.json"


def stage_propose(cfg: PipelineConfig, scene_dir: str | Path,
                  out_dir: str | Path, force: bool = False) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kind = cfg.property_kind
    outputs = [f"dictionary_{kind}.json"]
    if _is_cached(out, "propose", cfg, outputs, force):
        return {"stage": "propose", "cached": True}

    bundle = load_bundle_for(cfg, scene_dir)
    providers = make_providers(cfg, scene_dir, bundle)
    canonical = mat.select_canonical_view(bundle, cfg.seed)
    caption = providers.caption(canonical)
    if kind in ("youngs_modulus", "thermal_conductivity"):
        # these prompts take the candidate materials as input; reuse the
        # density dictionary's materials (proposing it first if needed)
        density_path = _dictionary_path(out, "mass_density")
        if density_path.is_file():
            names = mat.load_dictionary(density_path).names
        else:
            density = mat.propose_materials(caption, "mass_density",
                                            cfg.resolved_k, providers)
            mat.save_dictionary(density, density_path)
            names = density.names
        dictionary = mat.propose_values_for(caption, names, kind, providers)
    else:
        dictionary = mat.propose_materials(caption, kind, cfg.resolved_k,
                                           providers)
        if kind == "mass_density" and not cfg.no_thickness:
            dictionary = mat.estimate_thickness(caption, dictionary, providers)
    mat.save_dictionary(dictionary, _dictionary_path(out, kind))
    _write_stamp(out, "propose", cfg)
    return {"stage": "propose", "cached": False, "caption": caption,
            "materials": dictionary.names}


def _load_fused(out: Path, feature_dim: int) -> FeaturePointCloud:
    cloud = load_cloud(out / "fused_points.f32", out / "fused_frames.i32")
    features = np.fromfile(out / "features.f32", dtype="<f4").astype(np.float64)
    features = features.reshape(len(cloud), feature_dim)
    visibility = np.fromfile(out / "visibility.i32", dtype="<i4")
    # cached features are float32; renormalize so downstream cosine math
    # sees unit rows again
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    features = features / np.where(norms == 0, 1.0, norms)
    return FeaturePointCloud(points=cloud, features=features,
                             visibility=visibility,
                             dropped_indices=np.empty(0, dtype=np.int64))


def stage_predict(cfg: PipelineConfig, scene_dir: str | Path,
                  out_dir: str | Path, force: bool = False) -> dict:
    out = Path(out_dir)
    kind = cfg.property_kind
    outputs = [f"values_{kind}.f32", f"weights_{kind}.f32",
               f"materials_{kind}.i32", f"field_{kind}.json"]
    if _is_cached(out, "predict", cfg, outputs, force):
        return {"stage": "predict", "cached": True}
    _require(out, ["fused_points.f32", "features.f32"], "fuse")
    _require(out, [f"dictionary_{kind}.json"], "propose")

    dictionary = mat.load_dictionary(_dictionary_path(out, kind))
    fused = _load_fused(out, cfg.fusion.feature_dim)
    providers = make_providers(cfg, scene_dir)
    kcfg = KernelConfig(temperature=cfg.resolved_temperature,
                        text_prompt_template=cfg.text_prompt_template)
    field_ = build_field(fused, dictionary, providers, kcfg,
                         retrieval=cfg.retrieval)
    np.ascontiguousarray(field_.values, dtype="<f4").tofile(out / f"values_{kind}.f32")
    np.ascontiguousarray(field_.weights, dtype="<f4").tofile(out / f"weights_{kind}.f32")
    np.ascontiguousarray(field_.material_index, dtype="<i4").tofile(
        out / f"materials_{kind}.i32")
    _write_json(out / f"field_{kind}.json", {
        "kind": kind, "units": field_.units, "temperature": field_.temperature,
        "k": len(dictionary), "n_points": len(field_),
        "retrieval": cfg.retrieval,
    })
    _write_stamp(out, "predict", cfg)
    return {"stage": "predict", "cached": False, "n_points": len(field_)}


def load_field(cfg: PipelineConfig, out_dir: str | Path) -> PropertyField:
    out = Path(out_dir)
    kind = cfg.property_kind
    _require(out, [f"values_{kind}.f32", f"field_{kind}.json"], "predict")
    with open(out / f"field_{kind}.json") as fh:
        meta = json.load(fh)
    cloud = load_cloud(out / "fused_points.f32", out / "fused_frames.i32")
    values = np.fromfile(out / f"values_{kind}.f32", dtype="<f4").astype(np.float64)
    weights = np.fromfile(out / f"weights_{kind}.f32", dtype="<f4").astype(np.float64)
    weights = weights.reshape(len(cloud), meta["k"])
    material_index = np.fromfile(out / f"materials_{kind}.i32", dtype="<i4")
    return PropertyField(
        source_points=cloud, values=values, material_index=material_index,
        weights=weights, kind=meta["kind"], units=meta["units"],
        temperature=meta["temperature"],
    )


def carve_bbox_from_cloud(cloud: SourcePointCloud, grid: float,
                          pad_cells: int = DEFAULT_CARVE_PAD_CELLS) -> tuple:
    pad = pad_cells * grid
    lo = cloud.points.min(axis=0) - pad
    hi = cloud.points.max(axis=0) + pad
    return (tuple(lo), tuple(hi))


def stage_mass(cfg: PipelineConfig, scene_dir: str | Path,
               out_dir: str | Path, force: bool = False) -> dict:
    out = Path(out_dir)
    outputs = ["mass_report.json"]
    if _is_cached(out, "mass", cfg, outputs, force):
        return {"stage": "mass", "cached": True}
    field_ = load_field(cfg, out)
    _require(out, ["extract.json"], "extract")
    with open(out / "extract.json") as fh:
        scene_scale = json.load(fh)["scene_scale"]

    bundle = load_bundle_for(cfg, scene_dir)
    bbox = carve_bbox_from_cloud(field_.source_points, cfg.mass.carve_grid)
    carve = massmod.carve_volume(bundle, bbox, cfg.mass.carve_grid)
    if cfg.no_thickness:
        estimate = massmod.integrate_mass_no_thickness(field_, cfg.mass, carve,
                                                       scene_scale)
        low = high = estimate.mass_kg
    else:
        _require(out, ["raw_points.f32"], "extract")
        surface = load_cloud(out / "raw_points.f32")
        dictionary = mat.load_dictionary(_dictionary_path(out, cfg.property_kind))
        estimate = massmod.integrate_mass(field_, dictionary, cfg.mass, carve,
                                          scene_scale, surface_cloud=surface)
        low, high = massmod.mass_range(field_, dictionary, cfg.mass, carve,
                                       scene_scale, surface_cloud=surface)
    massmod.save_mass_report(out / "mass_report.json", bundle.name, estimate,
                             scene_scale, low, high)
    _write_stamp(out, "mass", cfg)
    return {"stage": "mass", "cached": False, "mass_kg": estimate.mass_kg,
            "clamped": estimate.clamped}


def _format_float(x: float) -> str:
    return repr(float(x))


def stage_eval(cfg: PipelineConfig, predictions_path: str | Path,
               out_dir: str | Path, force: bool = False,
               clip: bool = True) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = ["metrics.csv", "metrics.json", "metrics.png"]
    if _is_cached(out, "eval", cfg, outputs, force):
        return {"stage": "eval", "cached": True}

    rows = read_predictions(predictions_path)
    if clip and cfg.property_kind == "mass_density":
        rows = [(s, massmod.clip_mass(p), g) for s, p, g in rows]
    report = aggregate_report(rows)
    write_metrics_files(report, out)
    _write_stamp(out, "eval", cfg)
    return {"stage": "eval", "cached": False, "n": report.n,
            "mean_mnre": report.mean_mnre, "pra": report.pra}


def read_predictions(path: str | Path) -> list[tuple[str, float, float]]:
    """Rows of (scene, pred, gt) from a CSV (with header) or JSONL file."""
    p = Path(path)
    if not p.is_file():
        raise PipelineError(f"missing predictions file {p}")
    rows = []
    if p.suffix == ".jsonl":
        with open(p) as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    rows.append((str(rec["scene"]), float(rec["pred"]), float(rec["gt"])))
    else:
        with open(p, newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.append((rec["scene"], float(rec["pred"]), float(rec["gt"])))
    if not rows:
        raise PipelineError(f"predictions file {p} holds no rows")
    return rows


def write_metrics_files(report: MetricsReport, out: Path) -> None:
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scene", "pred", "gt", "ade", "alde", "ape", "mnre"])
        for i in range(report.n):
            writer.writerow([
                report.scenes[i], _format_float(report.preds[i]),
                _format_float(report.gts[i]), _format_float(report.ade[i]),
                _format_float(report.alde[i]), _format_float(report.ape[i]),
                _format_float(report.mnre[i]),
            ])
        writer.writerow(["mean", "", "", _format_float(report.mean_ade),
                         _format_float(report.mean_alde),
                         _format_float(report.mean_ape),
                         _format_float(report.mean_mnre)])
    _write_json(out / "metrics.json", {
        "n": report.n,
        "mean": {"ade": report.mean_ade, "alde": report.mean_alde,
                 "ape": report.mean_ape, "mnre": report.mean_mnre},
        "pra": report.pra,
        "instances": [
            {"scene": report.scenes[i], "pred": report.preds[i],
             "gt": report.gts[i], "ade": report.ade[i], "alde": report.alde[i],
             "ape": report.ape[i], "mnre": report.mnre[i]}
            for i in range(report.n)
        ],
    })
    render_metrics_figure(report, out / "metrics.png")


def stage_export(cfg: PipelineConfig, out_dir: str | Path, color: str = "value",
                 force: bool = False, binary: bool = True) -> dict:
    out = Path(out_dir)
    tag = "pca" if color == "pca" else cfg.property_kind
    outputs = [f"cloud_{tag}.ply", f"preview_{tag}.png"]
    if _is_cached(out, f"export_{tag}", cfg, outputs, force):
        return {"stage": "export", "cached": True}

    if color == "pca":
        _require(out, ["fused_points.f32", "features.f32"], "fuse")
        fused = _load_fused(out, cfg.fusion.feature_dim)
        colors = pca_colorize(fused).round().astype(np.uint8)
        points = fused.points.points
        values = np.zeros(len(fused))
    else:
        field_ = load_field(cfg, out)
        points = field_.source_points.points
        values = field_.values
        colors = value_colormap(values)
    write_ply(out / f"cloud_{tag}.ply", points, colors, values, binary=binary)
    render_cloud_preview(points, colors, out / f"preview_{tag}.png",
                         title=tag.replace("_", " "))
    _write_stamp(out, f"export_{tag}", cfg)
    return {"stage": "export", "cached": False,
            "ply": str(out / f"cloud_{tag}.ply")}
