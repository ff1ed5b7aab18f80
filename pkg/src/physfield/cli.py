"""Command-line pipeline driver.

Stages are composable and cached: ``extract -> fuse -> propose -> predict``
build the property field, ``mass`` aggregates it into kilograms, ``eval``
scores a predictions file, ``export`` writes PLY + preview figures, and
``synth`` generates a synthetic fixture scene. Rerunning a stage with an
unchanged config and seed reuses its cached artifacts.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from . import pipeline as pl
from .pipeline import PROPERTY_ALIASES, PipelineConfig, PipelineError


def _add_common(parser: argparse.ArgumentParser, scene: bool = True) -> None:
    if scene:
        parser.add_argument("--scene", required=True, help="scene bundle directory")
    parser.add_argument("--out", required=True, help="output/cache directory")
    parser.add_argument("--config", help="pipeline config JSON file")
    parser.add_argument("--provider", choices=["mock", "file", "http"])
    parser.add_argument("--endpoint", help="sidecar base URL (http provider)")
    parser.add_argument("--provider-path", help="precomputed vectors dir (file provider)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--property", dest="property_name",
                        choices=sorted(PROPERTY_ALIASES))
    parser.add_argument("--no-thickness", action="store_true", default=None,
                        help="skip thickness; fill the carved volume instead")
    parser.add_argument("--retrieval", action="store_true", default=None,
                        help="argmax material value instead of the softmax average")
    parser.add_argument("--uniform-feature", action="store_true", default=None,
                        help="one global feature from the canonical view")
    parser.add_argument("--force", action="store_true", help="ignore cached artifacts")


def build_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    updates = {}
    if args.provider is not None:
        updates["provider"] = args.provider
    if args.endpoint is not None:
        updates["endpoint"] = args.endpoint
    if getattr(args, "provider_path", None) is not None:
        updates["provider_path"] = args.provider_path
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.property_name is not None:
        updates["property_kind"] = PROPERTY_ALIASES[args.property_name]
    for flag in ("no_thickness", "retrieval", "uniform_feature"):
        if getattr(args, flag) is not None:
            updates[flag] = getattr(args, flag)
    return replace(cfg, **updates) if updates else cfg


def _report(result: dict) -> None:
    print(json.dumps(result, sort_keys=True))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="physfield", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("extract", "fuse", "propose", "predict", "mass"):
        p = sub.add_parser(name)
        _add_common(p)

    p = sub.add_parser("eval", help="score a predictions file")
    _add_common(p, scene=False)
    p.add_argument("--predictions", required=True,
                   help="CSV (scene,pred,gt header) or JSONL rows")
    p.add_argument("--no-clip", action="store_true",
                   help="skip the 0.01-100 kg mass clipping")

    p = sub.add_parser("export", help="write PLY + preview figure")
    _add_common(p, scene=False)
    p.add_argument("--color", choices=["value", "pca"], default="value")
    p.add_argument("--ascii", action="store_true", help="ASCII PLY instead of binary")

    p = sub.add_parser("synth", help="generate a synthetic fixture scene")
    p.add_argument("--out", required=True)
    p.add_argument("--shape", choices=["plate", "box", "two-material-box", "sphere"],
                   default="plate")
    p.add_argument("--preset-config", help="also write a matching pipeline config here")
    p.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)

    try:
        if args.command == "synth":
            return _cmd_synth(args)
        cfg = build_config(args)
        if args.command == "extract":
            _report(pl.stage_extract(cfg, args.scene, args.out, args.force))
        elif args.command == "fuse":
            _report(pl.stage_fuse(cfg, args.scene, args.out, args.force))
        elif args.command == "propose":
            _report(pl.stage_propose(cfg, args.scene, args.out, args.force))
        elif args.command == "predict":
            _report(pl.stage_predict(cfg, args.scene, args.out, args.force))
        elif args.command == "mass":
            _report(pl.stage_mass(cfg, args.scene, args.out, args.force))
        elif args.command == "eval":
            _report(pl.stage_eval(cfg, args.predictions, args.out, args.force,
                                  clip=not args.no_clip))
        elif args.command == "export":
            _report(pl.stage_export(cfg, args.out, args.color, args.force,
                                    binary=not args.ascii))
    except (PipelineError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    from . import synthetic as syn

    presets = {
        "plate": syn.SyntheticSpec(
            shape="plate", dimensions=(0.1, 0.1),
            parts=(syn.PartSpec("aluminum", 2700.0, 1.0),),
            camera_count=20, orbit_radius=0.35, resolution=64,
            seed=args.seed, name="plate"),
        "box": syn.SyntheticSpec(
            shape="box", dimensions=(0.1, 0.1, 0.1),
            parts=(syn.PartSpec("pine wood", 500.0, 1.0),),
            camera_count=12, orbit_radius=0.8, resolution=64,
            seed=args.seed, axis_cameras=True, name="box"),
        "two-material-box": syn.SyntheticSpec(
            shape="two-material-box", dimensions=(0.1, 0.1, 0.1),
            parts=(syn.PartSpec("oak wood", 700.0, 2.0),
                   syn.PartSpec("steel", 7850.0, 0.2)),
            camera_count=20, orbit_radius=0.4, resolution=64,
            seed=args.seed, name="two-material-box"),
        "sphere": syn.SyntheticSpec(
            shape="sphere", dimensions=(0.1,),
            parts=(syn.PartSpec("glass", 2500.0, 0.5),),
            camera_count=12, orbit_radius=0.4, resolution=64,
            seed=args.seed, name="sphere"),
    }
    spec = presets[args.shape]
    syn.generate_scene(spec, args.out)
    print(json.dumps({"scene": args.out, "shape": spec.shape,
                      "mass_kg": syn.ground_truth_mass(spec)}, sort_keys=True))
    if args.preset_config:
        cfg = fixture_config(spec)
        with open(args.preset_config, "w") as fh:
            json.dump(cfg.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def fixture_config(spec, noise: float = 0.1, calibration: float = 1.0,
                   n_rays: int = 60_000, clamp: bool = None) -> PipelineConfig:
    """Pipeline config tuned for a synthetic fixture: mock providers, the
    object's normalized bounding box, and one dictionary entry per part.

    Clamping defaults off for the zero-thickness plate (its carved volume
    is a thin slab that would defeat the thickness model) and on for solid
    shapes.
    """
    from . import synthetic as syn
    from .mass import MassConfig
    from .points import SamplingConfig

    if clamp is None:
        clamp = spec.shape != "plate"
    bbox = syn.normalized_object_bbox(spec)
    return PipelineConfig(
        seed=spec.seed,
        property_kind=spec.property_kind,
        provider="mock",
        mock_noise=noise,
        k_materials=len(spec.parts),
        sampling=SamplingConfig(n_rays=n_rays, bbox=bbox, seed=spec.seed),
        mass=MassConfig(calibration=calibration, clamp=clamp),
    )


if __name__ == "__main__":
    sys.exit(main())
