"""Command-line entry points.

Subcommands: gen-data, train-stage1, train-stage2, sample, render, relight,
edit, gradcheck, serve. Global flags: --seed, --config FILE, --out.

The optional JSON config file may carry:
  light_sampler: {strategy, weight_floor, seed}
  render:        {mu, alpha, eps, f0_dielectric}
  train:         {stage1_steps, stage1_batch, stage2_steps, lights_per_iter,
                  lr, pretrain_steps, cia_dropout_p}
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bundle_io import load_bundle, save_bundle
from .core import PbrError
from .edits import (
    EditOp,
    RelightSweepSpec,
    apply_edits,
    relight_sweep,
    save_sweep,
    to_display_png,
    to_linear_png,
)
from .model import MODALITIES, AdapterSet, BackboneConfig, CiaConfig
from .objectives import grad_check, rendering_loss_arrays
from .sampling import LightSampler
from .service import render_display_png, serve
from .shading import (
    INFERENCE_LIGHT_INTENSITY,
    DirectionalLight,
    RenderConfig,
    display_image,
    shade,
    view_direction_map,
)
from .synthdata import generate_bundle, generate_dataset, random_spec
from .training import (
    load_checkpoint,
    pretrain_backbone,
    sample_joint,
    save_checkpoint,
    train_stage1,
    train_stage2,
)


def _load_config(path):
    if not path:
        return {}
    return json.loads(Path(path).read_text())


def _render_cfg(config: dict) -> RenderConfig:
    r = config.get("render", {})
    base = RenderConfig()
    return RenderConfig(
        mu=r.get("mu", base.mu),
        alpha=r.get("alpha", base.alpha),
        eps=r.get("eps", base.eps),
        f0_dielectric=r.get("f0_dielectric", base.f0_dielectric),
    )


def _sampler(config: dict, seed: int) -> LightSampler:
    s = config.get("light_sampler", {})
    return LightSampler(
        strategy=s.get("strategy", "importance"),
        weight_floor=s.get("weight_floor", 1e-3),
        rng_seed=s.get("seed", seed),
    )


def cmd_gen_data(args, config):
    ds = generate_dataset(args.n, seed=args.seed, resolution=args.res)
    out = Path(args.out or "data")
    out.mkdir(parents=True, exist_ok=True)
    for i in range(len(ds)):
        bundle, cond = ds[i]
        root = save_bundle(bundle, out / f"sample_{i:05d}")
        (root / "cond.json").write_text(json.dumps(list(map(float, cond))) + "\n")
    print(f"wrote {len(ds)} bundles to {out}")
    return 0


def _dataset_from_args(args, config):
    train = config.get("train", {})
    n = getattr(args, "n", None) or train.get("dataset_size", 512)
    res = getattr(args, "res", None) or train.get("resolution", 64)
    return generate_dataset(n, seed=args.seed, resolution=res)


def cmd_train_stage1(args, config):
    train = config.get("train", {})
    cfg = BackboneConfig()
    ds = _dataset_from_args(args, config)
    if args.backbone:
        cfg, params, adapters, _ = load_checkpoint(args.backbone)
    else:
        print("no --backbone checkpoint given: pretraining a fresh backbone")
        params = pretrain_backbone(
            cfg, ds, steps=train.get("pretrain_steps", 300), seed=args.seed
        )
        adapters = AdapterSet.initialized(cfg, seed=args.seed)
    steps = args.steps or train.get("stage1_steps", 2000)
    adapters, trace = train_stage1(
        params,
        cfg,
        adapters,
        args.modality,
        ds,
        steps=steps,
        batch=train.get("stage1_batch", 4),
        lr=train.get("lr", 3e-3),
        seed=args.seed,
    )
    out = args.out or "stage1.npz"
    save_checkpoint(out, cfg, params, adapters, step=steps)
    first = float(np.mean(trace[:100])) if trace else float("nan")
    last = float(np.mean(trace[-100:])) if trace else float("nan")
    print(f"stage1[{args.modality}] {steps} steps: first-100 mean {first:.4f} -> last-100 mean {last:.4f}")
    print(f"checkpoint written to {out}")
    return 0


def cmd_train_stage2(args, config):
    train = config.get("train", {})
    cfg, params, adapters, _ = load_checkpoint(args.checkpoint)
    ds = _dataset_from_args(args, config)
    steps = args.steps or train.get("stage2_steps", 1000)
    adapters, log = train_stage2(
        params,
        cfg,
        adapters,
        ds,
        steps=steps,
        lights_per_iter=train.get("lights_per_iter", 5),
        cia=CiaConfig(dropout_p=train.get("cia_dropout_p", 0.25), rng_seed=args.seed),
        lr=train.get("lr", 5e-4),
        seed=args.seed,
        sampler_cfg=_sampler(config, args.seed),
        render_cfg=_render_cfg(config),
    )
    out = args.out or "stage2.npz"
    save_checkpoint(out, cfg, params, adapters, step=steps)
    if log:
        print(f"stage2 {steps} steps: total {log[0].total:.4f} -> {log[-1].total:.4f}")
    print(f"checkpoint written to {out}")
    return 0


def cmd_sample(args, config):
    cfg, params, adapters, _ = load_checkpoint(args.checkpoint)
    if args.cond:
        cond = np.asarray(json.loads(Path(args.cond).read_text()), dtype=np.float64)
    else:
        _, cond = generate_bundle(random_spec(args.seed, cfg.image_size))
    bundle = sample_joint(params, cfg, adapters, cond, n_steps=args.steps, seed=args.seed)
    out = Path(args.out or "sampled_bundle")
    save_bundle(bundle, out)
    print(f"sampled bundle written to {out}")
    return 0


def _light_from_args(args) -> DirectionalLight:
    return DirectionalLight.from_angles(args.azimuth, args.elevation, args.intensity)


def cmd_render(args, config):
    bundle = load_bundle(args.bundle)
    cfg = _render_cfg(config)
    light = _light_from_args(args)
    out = Path(args.out or "render.png")
    if args.output_space == "display":
        out.write_bytes(render_display_png(bundle, light, [], cfg))
    else:
        out.write_bytes(to_linear_png(shade(bundle, light, cfg)))
    print(f"wrote {out}")
    return 0


def cmd_relight(args, config):
    bundle = load_bundle(args.bundle)
    spec = RelightSweepSpec(
        elevation_deg=args.elevation,
        azimuth_start_deg=args.start,
        azimuth_stop_deg=args.stop,
        count=args.count,
        intensity=args.intensity,
    )
    frames = relight_sweep(bundle, spec, _render_cfg(config))
    out = save_sweep(frames, spec, args.out or "sweep")
    print(f"wrote {spec.count} frames to {out}")
    return 0


def cmd_edit(args, config):
    bundle = load_bundle(args.bundle)
    ops = [EditOp.from_json_dict(d) for d in json.loads(Path(args.edits).read_text())]
    edited = apply_edits(bundle, ops)
    out = Path(args.out or "edited_bundle")
    save_bundle(edited, out)
    print(f"applied {len(ops)} edits -> {out}")
    return 0


def cmd_gradcheck(args, config):
    from .core import ImageBuffer, IntrinsicBundle
    from .sampling import sample_lights

    rng = np.random.default_rng(args.seed)
    normals = rng.normal(size=(4, 4, 3)) * 0.3
    normals[:, :, 2] = 1.0 + np.abs(normals[:, :, 2])
    normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
    bundle = IntrinsicBundle(
        albedo=ImageBuffer(rng.uniform(0.2, 0.8, (4, 4, 3))),
        roughness=ImageBuffer(rng.uniform(0.2, 0.8, (4, 4, 1))),
        metallic=ImageBuffer(rng.uniform(0.2, 0.8, (4, 4, 1))),
        normal=ImageBuffer(normals),
    )
    lights = sample_lights(bundle, _sampler(config, args.seed), 2)
    gt_maps = {
        "albedo": bundle.albedo.array,
        "roughness": bundle.roughness.array[:, :, 0],
        "metallic": bundle.metallic.array[:, :, 0],
        "normal": bundle.normal.array,
    }
    pred_base = {
        k: np.clip(v + rng.normal(scale=0.05, size=v.shape), 0.05, 0.95) if k != "normal" else v
        for k, v in gt_maps.items()
    }
    w_o = view_direction_map(4, 4, bundle.camera)
    cfg = _render_cfg(config)

    def loss_fn(params):
        pred = dict(pred_base)
        pred[args.map] = params
        l2, perc = rendering_loss_arrays(pred, gt_maps, w_o, lights, cfg)
        return l2 + 0.1 * perc

    rel_tol = args.rel_tol if args.rel_tol is not None else (1e-4 if args.map == "albedo" else 1e-3)
    report = grad_check(loss_fn, pred_base[args.map], rel_tol=rel_tol, rng_seed=args.seed)
    print(json.dumps(report.to_json_dict(), indent=2))
    return 0 if report.passed else 1


def cmd_serve(args, config):
    serve(args.store, host=args.host, port=args.port, ui_root=args.ui_root)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pbrflow", description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--out", help="output path")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write procedural bundles + cond vectors")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--res", type=int, default=64)

    p = sub.add_parser("train-stage1", help="train one modality's adapters")
    p.add_argument("--modality", choices=MODALITIES, required=True)
    p.add_argument("--backbone", help="checkpoint to start from (else pretrain fresh)")
    p.add_argument("--steps", type=int)
    p.add_argument("--n", type=int, help="dataset size")
    p.add_argument("--res", type=int, help="dataset resolution")

    p = sub.add_parser("train-stage2", help="joint finetuning with the rendering loss")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--res", type=int)

    p = sub.add_parser("sample", help="sample an intrinsic bundle")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cond", help="JSON file with a 16-value condition vector")
    p.add_argument("--steps", type=int, default=20)

    p = sub.add_parser("render", help="render a bundle under one light")
    p.add_argument("--bundle", required=True)
    p.add_argument("--azimuth", type=float, default=0.0)
    p.add_argument("--elevation", type=float, default=45.0)
    p.add_argument("--intensity", type=float, default=INFERENCE_LIGHT_INTENSITY)
    p.add_argument("--output-space", choices=("display", "linear"), default="display")

    p = sub.add_parser("relight", help="azimuth sweep at fixed elevation")
    p.add_argument("--bundle", required=True)
    p.add_argument("--elevation", type=float, default=45.0)
    p.add_argument("--start", type=float, default=0.0)
    p.add_argument("--stop", type=float, default=315.0)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--intensity", type=float, default=INFERENCE_LIGHT_INTENSITY)

    p = sub.add_parser("edit", help="apply a JSON list of edit ops to a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--edits", required=True, help="JSON file: [{kind, params}, ...]")

    p = sub.add_parser("gradcheck", help="finite-difference check of the rendering loss")
    p.add_argument("--map", choices=("albedo", "roughness", "metallic"), default="albedo")
    p.add_argument("--rel-tol", type=float, default=None)

    p = sub.add_parser("serve", help="run the HTTP render service")
    p.add_argument("--store", required=True, help="bundle store directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8517)
    p.add_argument("--ui-root", help="directory with the built workbench UI")

    return parser


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-stage1": cmd_train_stage1,
    "train-stage2": cmd_train_stage2,
    "sample": cmd_sample,
    "render": cmd_render,
    "relight": cmd_relight,
    "edit": cmd_edit,
    "gradcheck": cmd_gradcheck,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = _load_config(args.config)
    try:
        return COMMANDS[args.command](args, config)
    except PbrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
