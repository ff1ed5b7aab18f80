"""CLI stages: artifact production, caching, determinism, and failure modes."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from conftest import PLATE_SPEC
from physfield import synthetic as syn
from physfield.cli import fixture_config, main
from physfield.export import read_ply
from physfield.pipeline import PipelineConfig, read_predictions

STAGES = ("extract", "fuse", "propose", "predict", "mass")


@pytest.fixture(scope="module")
def scene_and_config(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    scene = root / "scene"
    syn.generate_scene(PLATE_SPEC, scene)
    cfg = fixture_config(PLATE_SPEC, noise=0.1, calibration=1.0, n_rays=20_000)
    cfg_path = root / "config.json"
    with open(cfg_path, "w") as fh:
        json.dump(cfg.to_json(), fh, indent=2, sort_keys=True)
    return str(scene), str(cfg_path)


def run_stage(name, scene, cfg_path, out, extra=()):
    args = [name, "--out", str(out), "--config", cfg_path, *extra]
    if name not in ("eval", "export"):
        args += ["--scene", scene]
    return main(args)


def artifact_digests(out: Path) -> dict[str, str]:
    return {
        p.name: hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(out.iterdir()) if p.is_file()
    }


class TestStageChain:
    def test_full_chain_and_mass_report(self, scene_and_config, tmp_path):
        scene, cfg_path = scene_and_config
        out = tmp_path / "out"
        for stage in STAGES:
            assert run_stage(stage, scene, cfg_path, out) == 0
        report = json.loads((out / "mass_report.json").read_text())
        assert report["scene"] == "plate"
        assert report["mass_kg"] == pytest.approx(0.1, rel=0.15)
        assert report["mass_low_kg"] <= report["mass_kg"] <= report["mass_high_kg"]
        assert set(report) == {"scene", "mass_kg", "mass_low_kg", "mass_high_kg",
                               "volume_bound_m3", "clamped"}

        assert run_stage("export", scene, cfg_path, out) == 0
        pts, cols, vals = read_ply(out / "cloud_mass_density.ply")
        n = json.loads((out / "fuse.json").read_text())["n_points"]
        assert len(pts) == n
        assert (out / "preview_mass_density.png").is_file()

        # feature-colored export carries the PCA colors through unchanged
        assert run_stage("export", scene, cfg_path, out,
                         extra=["--color", "pca"]) == 0
        _, pca_cols, _ = read_ply(out / "cloud_pca.ply")
        from physfield.fusion import pca_colorize

        dim = json.loads((out / "fuse.json").read_text())["feature_dim"]
        feats = np.fromfile(out / "features.f32", dtype="<f4")
        feats = feats.reshape(n, dim).astype(np.float64)
        norms = np.linalg.norm(feats, axis=1, keepdims=True)
        expected = pca_colorize(feats / norms).round().astype(np.uint8)
        np.testing.assert_array_equal(pca_cols, expected)

    def test_rerun_hits_cache(self, scene_and_config, tmp_path, capsys):
        scene, cfg_path = scene_and_config
        out = tmp_path / "out"
        run_stage("extract", scene, cfg_path, out)
        capsys.readouterr()
        run_stage("extract", scene, cfg_path, out)
        assert json.loads(capsys.readouterr().out)["cached"] is True

    def test_forced_rerun_byte_identical(self, scene_and_config, tmp_path):
        scene, cfg_path = scene_and_config
        out = tmp_path / "out"
        for stage in STAGES:
            run_stage(stage, scene, cfg_path, out)
        run_stage("export", scene, cfg_path, out)
        before = artifact_digests(out)
        for stage in STAGES:
            run_stage(stage, scene, cfg_path, out, extra=["--force"])
        run_stage("export", scene, cfg_path, out, extra=["--force"])
        assert artifact_digests(out) == before

    def test_config_change_invalidates_cache(self, scene_and_config, tmp_path, capsys):
        scene, cfg_path = scene_and_config
        out = tmp_path / "out"
        run_stage("extract", scene, cfg_path, out)
        capsys.readouterr()
        assert main(["extract", "--scene", scene, "--out", str(out),
                     "--config", cfg_path, "--seed", "99"]) == 0
        assert json.loads(capsys.readouterr().out)["cached"] is False

    def test_missing_upstream_fails_fast(self, scene_and_config, tmp_path, capsys):
        scene, cfg_path = scene_and_config
        out = tmp_path / "empty"
        out.mkdir()
        assert run_stage("fuse", scene, cfg_path, out) == 1
        err = capsys.readouterr().err
        assert "points.f32" in err
        assert "extract" in err


class TestAblationFlags:
    def test_no_thickness_flag(self, scene_and_config, tmp_path):
        scene, cfg_path = scene_and_config
        out = tmp_path / "out"
        for stage in STAGES[:-1]:
            run_stage(stage, scene, cfg_path, out)
        assert run_stage("mass", scene, cfg_path, out,
                         extra=["--no-thickness"]) == 0
        report = json.loads((out / "mass_report.json").read_text())
        assert report["mass_kg"] > 0

    def test_retrieval_flag_changes_only_values(self, scene_and_config, tmp_path):
        scene, cfg_path = scene_and_config
        out = tmp_path / "out"
        for stage in ("extract", "fuse", "propose"):
            run_stage(stage, scene, cfg_path, out)
        run_stage("predict", scene, cfg_path, out)
        plain = np.fromfile(out / "values_mass_density.f32", dtype="<f4")
        run_stage("predict", scene, cfg_path, out, extra=["--retrieval", "--force"])
        retrieval = np.fromfile(out / "values_mass_density.f32", dtype="<f4")
        assert plain.shape == retrieval.shape
        # one material: the argmax value equals the softmax value
        np.testing.assert_allclose(retrieval, plain, rtol=1e-6)

    def test_uniform_feature_flag(self, scene_and_config, tmp_path):
        scene, cfg_path = scene_and_config
        out = tmp_path / "out"
        run_stage("extract", scene, cfg_path, out)
        assert run_stage("fuse", scene, cfg_path, out,
                         extra=["--uniform-feature"]) == 0
        dim = json.loads((out / "fuse.json").read_text())["feature_dim"]
        n = json.loads((out / "fuse.json").read_text())["n_points"]
        feats = np.fromfile(out / "features.f32", dtype="<f4").reshape(n, dim)
        assert np.all(feats == feats[0])


class TestEval:
    def test_eval_writes_table_records_and_figure(self, tmp_path):
        pred_path = tmp_path / "preds.csv"
        pred_path.write_text(
            "scene,pred,gt\nplate,0.11,0.1\ncube,0.25,0.3\nbox,2.0,1.0\n")
        out = tmp_path / "metrics"
        assert main(["eval", "--out", str(out), "--predictions",
                     str(pred_path)]) == 0
        table = (out / "metrics.csv").read_text().strip().splitlines()
        assert table[0] == "scene,pred,gt,ade,alde,ape,mnre"
        assert len(table) == 5  # header + 3 rows + mean
        assert table[-1].startswith("mean")
        records = json.loads((out / "metrics.json").read_text())
        assert records["n"] == 3
        assert records["pra"] is not None
        assert (out / "metrics.png").stat().st_size > 0

    def test_eval_clips_mass_predictions(self, tmp_path):
        pred_path = tmp_path / "preds.csv"
        pred_path.write_text("scene,pred,gt\nhuge,1e6,50\ntiny,1e-6,0.02\n")
        out = tmp_path / "metrics"
        main(["eval", "--out", str(out), "--predictions", str(pred_path)])
        records = json.loads((out / "metrics.json").read_text())
        assert records["instances"][0]["pred"] == 100.0
        assert records["instances"][1]["pred"] == 0.01

    def test_jsonl_predictions(self, tmp_path):
        pred_path = tmp_path / "preds.jsonl"
        pred_path.write_text('{"scene": "a", "pred": 1.0, "gt": 2.0}\n'
                             '{"scene": "b", "pred": 2.0, "gt": 1.0}\n')
        rows = read_predictions(pred_path)
        assert rows == [("a", 1.0, 2.0), ("b", 2.0, 1.0)]

    def test_missing_predictions_file(self, tmp_path, capsys):
        assert main(["eval", "--out", str(tmp_path / "m"),
                     "--predictions", str(tmp_path / "nope.csv")]) == 1
        assert "predictions" in capsys.readouterr().err


class TestConfig:
    def test_json_round_trip(self):
        cfg = fixture_config(PLATE_SPEC)
        again = PipelineConfig.from_json(json.loads(json.dumps(cfg.to_json())))
        assert again == cfg
        assert again.config_hash() == cfg.config_hash()

    def test_http_provider_needs_endpoint(self):
        with pytest.raises(ValueError, match="endpoint"):
            PipelineConfig(provider="http")

    def test_resolved_defaults_per_property(self):
        assert PipelineConfig(property_kind="mass_density").resolved_k == 5
        assert PipelineConfig(property_kind="friction").resolved_k == 3
        assert PipelineConfig(property_kind="friction").resolved_temperature == 0.01

    def test_synth_command_generates_loadable_scene(self, tmp_path):
        out = tmp_path / "synth_scene"
        assert main(["synth", "--out", str(out), "--shape", "sphere",
                     "--preset-config", str(tmp_path / "cfg.json")]) == 0
        from physfield.scene import load_scene_bundle

        bundle = load_scene_bundle(out)
        assert len(bundle.frames) == 12
        cfg = PipelineConfig.from_file(tmp_path / "cfg.json")
        assert cfg.provider == "mock"
