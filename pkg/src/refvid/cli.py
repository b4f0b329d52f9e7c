"""Command-line entry point.

Subcommands: train, generate, curate, eval, ablate, selftest. Every
subcommand honors --seed / --config / --set overrides, and identical
(config, seed) pairs produce byte-identical outputs.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import torch

from . import datapipe, mten
from .backends import sprite_backend_suite
from .config import ENV_CONFIG_VAR, RunConfig, dump_config, load_config
from .denoiser import build_model
from .errors import ConfigError, RefvidError
from .latents import VideoClip
from .masking import ReferenceImage
from .metrics import format_table
from .selftest import run_selftest
from .sprites import generate_sample, load_scene
from .training import (FlowSettings, copy_rate, derive_seed, evaluate_scene,
                       generate, load_checkpoint, matched_mismatched_similarity,
                       train)

ABLATION_ARMS = ("no-region-mask", "no-cross-pair", "alpha0")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None,
                        help=f"config file (default: ${ENV_CONFIG_VAR} if set)")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override one config key")


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    path = args.config or os.environ.get(ENV_CONFIG_VAR) or None
    return load_config(path, overrides=args.overrides, seed=args.seed)


def _write_png(path: Path, frame: torch.Tensor) -> None:
    from PIL import Image

    array = (frame.clamp(0, 1) * 255).round().to(torch.uint8).permute(1, 2, 0).numpy()
    Image.fromarray(array, mode="RGB").save(path)


def _read_image(path: Path) -> torch.Tensor:
    if path.suffix == ".mten":
        return mten.read_tensor(path)
    from PIL import Image

    with Image.open(path) as img:
        rgb = img.convert("RGB")
        data = torch.frombuffer(bytearray(rgb.tobytes()), dtype=torch.uint8)
        return (data.reshape(rgb.height, rgb.width, 3).permute(2, 0, 1).float() / 255.0)


def cmd_train(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    if args.steps is not None:
        config = dataclasses.replace(
            config, flow=dataclasses.replace(config.flow, train_steps=args.steps))
    out_dir = Path(args.out or config.out_dir)
    codec = config.codec.build()
    result = train(config.model_config(), codec, config.sprites, config.flow, config.seed)
    result.save(out_dir)
    (out_dir / "config.txt").write_text(dump_config(config) + "\n")
    print(f"trained {config.flow.train_steps} steps; "
          f"loss {result.loss_log[0][1]:.4f} -> {result.loss_log[-1][1]:.4f}")
    print(f"checkpoint: {out_dir / 'checkpoint.mten'}")
    return 0


def _build_trained_model(config: RunConfig, checkpoint: str):
    model = build_model(config.model_config(), config.seed)
    load_checkpoint(model, checkpoint)
    model.eval()
    return model


def cmd_generate(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    settings = config.flow
    if args.steps is not None:
        settings = dataclasses.replace(settings, sample_steps=args.steps)
    model = _build_trained_model(config, args.checkpoint)
    codec = config.codec.build()

    labels = args.label or []
    refs = [Path(p) for p in args.ref or []]
    if labels and len(labels) != len(refs):
        raise ConfigError(f"{len(refs)} references but {len(labels)} labels",
                          module="cli", op="generate")
    references = []
    for i, path in enumerate(refs):
        label = labels[i] if labels else f"subject{i}"
        references.append(ReferenceImage(pixels=_read_image(path), kind="object",
                                         label=label))
    frames = args.frames or config.sprites.frames
    canvas = (config.sprites.height, config.sprites.width)
    video, latent = generate(model, codec, references, args.prompt, frames, canvas,
                             settings, config.seed, fps=config.sprites.fps)

    out_dir = Path(args.out or config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mten.write_tensor(out_dir / "video.mten", video.data)
    mten.write_tensor(out_dir / "latent.mten", latent)
    for t in range(video.frames):
        _write_png(out_dir / f"preview_{t:02d}.png", video.data[t])
    print(f"wrote {out_dir / 'video.mten'} and {video.frames} preview frames")
    return 0


def cmd_curate(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    input_dir = Path(args.input)
    if not input_dir.is_dir():
        raise ConfigError(f"input directory {input_dir} does not exist",
                          module="cli", op="curate")
    videos: list[tuple[str, VideoClip]] = []
    for scene_dir in sorted(p for p in input_dir.iterdir() if (p / "scene.json").exists()):
        videos.append((scene_dir.name, load_scene(scene_dir).video))
    for path in sorted(input_dir.glob("*.mten")):
        videos.append((path.stem, VideoClip(mten.read_tensor(path))))
    if not videos:
        raise ConfigError(f"no scene directories or .mten videos under {input_dir}",
                          module="cli", op="curate")
    if args.backends != "sprite":
        raise ConfigError(f"unknown backend suite {args.backends!r}",
                          module="cli", op="curate")
    backends = sprite_backend_suite(config.seed)
    rng = torch.Generator().manual_seed(derive_seed(config.seed, 11))
    records = datapipe.curate(videos, backends, config.pipeline, rng)
    manifest = datapipe.write_manifest(records, Path(args.out or config.out_dir))
    print(f"curated {len(records)} records from {len(videos)} videos -> {manifest}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    video = VideoClip(mten.read_tensor(args.video), fps=config.sprites.fps)
    scene = load_scene(args.scene)
    report = evaluate_scene(video, scene)
    print(format_table(report))
    if args.out:
        report.save(args.out)
        print(f"report: {args.out}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    if args.steps is not None:
        config = dataclasses.replace(
            config, flow=dataclasses.replace(config.flow, train_steps=args.steps))
    arms = args.arms.split(",") if args.arms != "all" else list(ABLATION_ARMS)
    for arm in arms:
        if arm not in ABLATION_ARMS:
            raise ConfigError(f"unknown ablation arm {arm!r}; choose from "
                              f"{ABLATION_ARMS}", module="cli", op="ablate")
    out_dir = Path(args.out or config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = {"base": _run_arm(config, None)}
    for arm in arms:
        results[arm] = _run_arm(config, arm)
    payload = json.dumps(results, indent=2, sort_keys=True)
    (out_dir / "ablation_report.json").write_text(payload + "\n")
    header = f"{'arm':<16}{'matched':>9}{'mismatch':>9}{'gap':>8}{'copy':>8}{'loss':>9}"
    print(header)
    for arm, row in results.items():
        print(f"{arm:<16}{row['matched']:>9.3f}{row['mismatched']:>9.3f}"
              f"{row['gap']:>8.3f}{row['copy_rate']:>8.3f}{row['final_loss']:>9.4f}")
    print(f"report: {out_dir / 'ablation_report.json'}")
    return 0


def ablation_settings(config: RunConfig, arm: str | None) -> RunConfig:
    """Config for one ablation arm: a single mechanism disabled."""
    if arm is None:
        return config
    if arm == "no-region-mask":
        return dataclasses.replace(
            config, flow=dataclasses.replace(config.flow, use_region_mask=False))
    if arm == "no-cross-pair":
        return dataclasses.replace(
            config, flow=dataclasses.replace(config.flow, cross_pair=False))
    if arm == "alpha0":
        return dataclasses.replace(
            config, model=dataclasses.replace(config.model, alpha=0.0))
    raise ConfigError(f"unknown ablation arm {arm!r}", module="cli", op="ablate")


def _run_arm(config: RunConfig, arm: str | None, eval_scenes: int = 4) -> dict:
    arm_config = ablation_settings(config, arm)
    codec = arm_config.codec.build()
    result = train(arm_config.model_config(), codec, arm_config.sprites,
                   arm_config.flow, arm_config.seed)
    matched = mismatched = copies = 0.0
    for i in range(eval_scenes):
        scene = generate_sample(arm_config.sprites,
                                torch.Generator().manual_seed(derive_seed(777, i)))
        video, _ = generate(result.model, codec, scene.references, scene.caption,
                            scene.video.frames,
                            (scene.video.data.shape[2], scene.video.data.shape[3]),
                            arm_config.flow, seed=derive_seed(778, i))
        m, mm = matched_mismatched_similarity(video, scene)
        matched += m / eval_scenes
        mismatched += mm / eval_scenes
        copies += copy_rate(video, scene) / eval_scenes
    return {"matched": matched, "mismatched": mismatched, "gap": matched - mismatched,
            "copy_rate": copies, "final_loss": result.loss_log[-1][1]}


def cmd_selftest(args: argparse.Namespace) -> int:
    failures = run_selftest(verbose=True)
    return 0 if failures == 0 else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="refvid",
                                     description="masked-guidance any-reference "
                                                 "video generation, desk scale")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="flow-matching training on sprite scenes")
    _add_common(p)
    p.add_argument("--steps", type=int, default=None, help="training steps")
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("generate", help="sample a video from references + prompt")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ref", action="append", help="reference image (.png or .mten); repeatable")
    p.add_argument("--label", action="append", help="subject word for each --ref")
    p.add_argument("--prompt", required=True)
    p.add_argument("--steps", type=int, default=None, help="Euler integration steps")
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("curate", help="run the four-stage pipeline over a directory")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--backends", default="sprite")
    p.set_defaults(fn=cmd_curate)

    p = sub.add_parser("eval", help="score a video against a scene")
    _add_common(p)
    p.add_argument("--video", required=True, help="video .mten")
    p.add_argument("--scene", required=True, help="scene directory")
    p.add_argument("--out", default=None, help="report JSON path")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="rerun train/eval with one mechanism disabled")
    _add_common(p)
    p.add_argument("--arms", default="all",
                   help=f"comma list from {ABLATION_ARMS} or 'all'")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("selftest", help="run built-in executable checks")
    _add_common(p)
    p.set_defaults(fn=cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error in {exc.module}.{exc.op}: {exc}", file=sys.stderr)
        return 1
    except RefvidError as exc:
        print(f"error in {exc.module}.{exc.op}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - surface unexpected faults as exit 2
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
