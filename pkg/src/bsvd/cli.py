"""Command-line front end: train, denoise, analyze, and synthetic-data
generation, each emitting a run manifest for reproducibility."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .analysis import (
    equivalent_filters,
    flow_from_filters,
    frame_contributions,
    render_filter_heatmap,
)
from .arrayio import save_array
from .checkpoint import load_checkpoint, save_checkpoint
from .frameio import load_frames, save_frames
from .metrics import psnr, ssim
from .network import NetConfig, build_network
from .pipeline import denoise_video
from .synth import SceneObject, SyntheticScene, add_gaussian_noise, clip_for_display, synth_video
from .training import (
    AUGMENTATIONS,
    NoiseModel,
    TrainConfig,
    TrainingDiverged,
    fit,
    load_config_file,
    write_loss_trace,
)

USAGE_ERROR = 2
RUNTIME_ERROR = 1

_SIGMA_MODES = {
    "known": "gaussian_known_sigma",
    "estimate": "gaussian_unknown_sigma",
    "unknown": "unknown",
}
_AUGMENT_ALIASES = {
    "flip": "flip",
    "time-reverse": "time_reverse",
    "time_reverse": "time_reverse",
    "subsample": "temporal_subsample",
    "temporal_subsample": "temporal_subsample",
}


class UsageError(Exception):
    pass


def _hash_path(path: Path) -> str:
    h = hashlib.sha256()
    if path.is_dir():
        for f in sorted(path.iterdir()):
            if f.is_file():
                h.update(f.name.encode())
                h.update(f.read_bytes())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


def write_manifest(
    out_dir: Path,
    command: str,
    config: dict,
    seed: int | None,
    inputs: list[Path],
    outputs: list[Path],
    wall_clock: float,
) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "input_hashes": {str(p): _hash_path(p) for p in inputs},
        "output_paths": [str(p) for p in outputs],
        "wall_clock_seconds": round(wall_clock, 3),
        "code_version": __version__,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def _require_dir(path: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"input directory not found: {p}")
    return p


def _parse_augment(text: str) -> tuple[str, ...]:
    names = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if token not in _AUGMENT_ALIASES:
            raise UsageError(
                f"unknown augmentation {token!r}; choose from "
                f"{sorted(set(_AUGMENT_ALIASES))}"
            )
        names.append(_AUGMENT_ALIASES[token])
    return tuple(dict.fromkeys(names))


def _noise_from_args(args) -> NoiseModel:
    kind = _SIGMA_MODES[args.sigma_mode]
    if kind == "gaussian_known_sigma":
        if args.sigma is None:
            raise UsageError("--sigma-mode known requires --sigma")
        return NoiseModel(kind, args.sigma)
    if args.sigma is not None:
        raise UsageError(f"--sigma is not used with --sigma-mode {args.sigma_mode}")
    return NoiseModel(kind)


def _train_config(args) -> TrainConfig:
    fields = load_config_file(args.config) if args.config else {}
    if args.seed is not None:
        fields["seed"] = args.seed
    if args.frames is not None:
        fields["frame_count"] = args.frames
    if args.epochs is not None:
        fields["epochs"] = args.epochs
    if args.patch_size is not None:
        fields["patch_size"] = args.patch_size
    if args.batch_size is not None:
        fields["batch_size"] = args.batch_size
    if args.lr0 is not None:
        fields["lr0"] = args.lr0
    if args.lr_checkpoints is not None:
        fields["lr_checkpoints"] = [int(t) for t in args.lr_checkpoints.split(",") if t]
    if args.early_stop_frames is not None:
        fields["early_stop_frames"] = args.early_stop_frames
    if args.augment is not None:
        fields["augmentations"] = list(_parse_augment(args.augment))
    elif args.single_video and "augmentations" not in fields:
        fields["augmentations"] = list(AUGMENTATIONS)
    noise = _noise_from_args(args)
    fields["noise_kind"] = noise.kind
    fields["noise_sigma"] = noise.sigma
    try:
        return TrainConfig.from_dict(fields)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad config: {exc}") from exc


def cmd_train(args) -> int:
    t0 = time.time()
    input_dirs = [_require_dir(d) for d in args.inputs]
    if args.single_video and len(input_dirs) != 1:
        raise UsageError("--single-video takes exactly one input directory")
    cfg = _train_config(args)
    videos = [load_frames(d) for d in input_dirs]
    channels = videos[0].shape[1]
    net = build_network(NetConfig(frame_count=cfg.frame_count, channels=channels), seed=cfg.seed)
    try:
        result = fit(videos, net, cfg)
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.ckpt"
    save_checkpoint(ckpt, net, {"train_config": cfg.to_dict()})
    outputs = [ckpt]
    if result.sigma_net is not None:
        sigma_ckpt = out / "sigma_checkpoint.ckpt"
        save_checkpoint(sigma_ckpt, result.sigma_net, {"train_config": cfg.to_dict()})
        outputs.append(sigma_ckpt)
    trace_path = out / "loss_trace.csv"
    write_loss_trace(trace_path, result.trace)
    outputs.append(trace_path)
    outputs.append(
        write_manifest(out, "train", cfg.to_dict(), cfg.seed, input_dirs, outputs, time.time() - t0)
    )
    print(f"trained {cfg.epochs} epochs; final loss {result.epoch_means[-1]:.4f}")
    return 0


def _load_net(path: str):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"checkpoint not found: {p}")
    return load_checkpoint(p)


def cmd_denoise(args) -> int:
    t0 = time.time()
    input_dir = _require_dir(args.input)
    net, meta = _load_net(args.checkpoint)
    noisy = load_frames(input_dir)
    if noisy.shape[1] != net.config.channels:
        raise UsageError(
            f"checkpoint expects {net.config.channels}-channel frames, "
            f"input has {noisy.shape[1]}"
        )
    noise = None if args.sigma_mode == "unknown" and args.sigma is None else _noise_from_args(args)
    sigma_net = None
    if noise is not None and noise.kind == "gaussian_unknown_sigma":
        sigma_path = Path(args.checkpoint).with_name("sigma_checkpoint.ckpt")
        if not sigma_path.is_file():
            raise UsageError(f"--sigma-mode estimate needs {sigma_path}")
        sigma_net, _ = load_checkpoint(sigma_path)
    denoised = denoise_video(net, noisy, noise=noise, sigma_net=sigma_net,
                             fusion=not args.no_fusion, tile=args.tile)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_frames(clip_for_display(denoised), out / "frames")
    save_array(out / "denoised", denoised)
    outputs = [out / "frames", out / "denoised.bin", out / "denoised.json"]
    inputs = [input_dir, Path(args.checkpoint)]
    if args.clean:
        clean_dir = _require_dir(args.clean)
        clean = load_frames(clean_dir)
        inputs.append(clean_dir)
        metrics_path = out / "metrics.csv"
        with open(metrics_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame", "psnr", "ssim"])
            for t in range(len(denoised)):
                writer.writerow([
                    t,
                    f"{psnr(denoised[t], clean[t]):.4f}",
                    f"{ssim(denoised[t].mean(axis=0), clean[t].mean(axis=0)):.4f}",
                ])
        outputs.append(metrics_path)
        print(f"mean psnr {psnr(denoised, clean):.2f} dB")
    config = {
        "checkpoint_meta": meta.get("train_config"),
        "sigma_mode": args.sigma_mode,
        "sigma": args.sigma,
        "fusion": not args.no_fusion,
        "tile": args.tile,
    }
    outputs.append(write_manifest(out, "denoise", config, None, inputs, outputs, time.time() - t0))
    return 0


def _analysis_window(net, video: np.ndarray, center: int) -> np.ndarray:
    k = net.config.frame_count
    if not k // 2 <= center <= len(video) - 1 - k // 2:
        raise UsageError(f"--frame {center} leaves no room for a {k}-frame window")
    return video[center - k // 2 : center + k // 2 + 1]


def cmd_analyze(args) -> int:
    t0 = time.time()
    input_dir = _require_dir(args.input)
    net, _ = _load_net(args.checkpoint)
    net = net.double()
    video = load_frames(input_dir)
    center = args.frame if args.frame is not None else len(video) // 2
    window = _analysis_window(net, video, center)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs: list[Path] = []
    config: dict = {"mode": args.mode, "frame": center}

    if args.mode == "filters":
        try:
            r, c = (int(v) for v in args.pixel.split(","))
        except ValueError as exc:
            raise UsageError("--pixel expects ROW,COL") from exc
        filt = equivalent_filters(net, window, (r, c))
        for t, m in enumerate(filt.maps):
            path = out / f"filter_frame{t}.png"
            render_filter_heatmap(m, path)
            outputs.append(path)
        save_array(out / "filter_weights", filt.weights)
        outputs += [out / "filter_weights.bin", out / "filter_weights.json"]
        config.update(pixel=[r, c], bias=filt.bias, value=filt.value,
                      frame_sums=filt.frame_sums.tolist())
    elif args.mode == "flow":
        if net.config.frame_count < 3:
            raise UsageError("flow analysis needs a checkpoint with >= 3 frames")
        H, W = video.shape[-2:]
        step = args.grid
        margin = max(step, 4)
        pixels = [
            (r, c)
            for r in range(margin, H - margin, step)
            for c in range(margin, W - margin, step)
        ]
        field = flow_from_filters(net, window, pixels)
        save_array(out / "flow", field.flow)
        flow_csv = out / "flow.csv"
        with open(flow_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "col", "dy", "dx", "valid"])
            for (r, c), (dy, dx), ok in zip(field.pixels, field.flow, field.valid):
                writer.writerow([r, c, f"{dy:.4f}", f"{dx:.4f}", int(ok)])
        outputs += [out / "flow.bin", out / "flow.json", flow_csv]
        config.update(grid=step, n_pixels=len(pixels), n_valid=int(field.valid.sum()))
    else:  # contributions
        H, W = video.shape[-2:]
        rng = np.random.default_rng(args.seed or 0)
        pixels = rng.integers((2, 2), (H - 2, W - 2), size=(args.pixels, 2))
        filters = [equivalent_filters(net, window, (int(r), int(c))) for r, c in pixels]
        fc = frame_contributions(filters)
        contrib_csv = out / "contributions.csv"
        with open(contrib_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame", "mean_sum"])
            for t, s in enumerate(fc.per_frame_mean_sums):
                writer.writerow([t, f"{s:.6f}"])
        save_array(out / "total_sums", fc.total_sums)
        outputs += [contrib_csv, out / "total_sums.bin", out / "total_sums.json"]
        config.update(pixels=args.pixels,
                      per_frame_mean_sums=fc.per_frame_mean_sums.tolist())

    inputs = [input_dir, Path(args.checkpoint)]
    outputs.append(
        write_manifest(out, f"analyze {args.mode}", config, args.seed, inputs, outputs,
                       time.time() - t0)
    )
    return 0


def cmd_synth(args) -> int:
    t0 = time.time()
    try:
        dy, dx = (int(v) for v in args.velocity.split(","))
        H, W = (int(v) for v in args.size.split("x"))
    except ValueError as exc:
        raise UsageError("--velocity expects DY,DX and --size expects HxW") from exc
    objects = []
    if args.object:
        for spec_text in args.object:
            vals = [int(v) for v in spec_text.split(",")]
            if len(vals) != 6:
                raise UsageError("--object expects ROW,COL,HEIGHT,WIDTH,DY,DX")
            objects.append(SceneObject(tuple(vals[0:2]), tuple(vals[2:4]), tuple(vals[4:6])))
    scene = SyntheticScene(
        seed=args.seed or 0,
        channels=args.channels,
        background_velocity=(dy, dx),
        objects=tuple(objects),
    )
    clean, flow = synth_video(scene, args.length, H, W)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_frames(clean, out / "clean")
    save_array(out / "flow", flow)
    outputs = [out / "clean", out / "flow.bin", out / "flow.json"]
    if args.sigma:
        noisy = add_gaussian_noise(clean, args.sigma, seed=(args.seed or 0) + 1)
        save_array(out / "noisy", noisy)
        save_frames(clip_for_display(noisy), out / "noisy_frames")
        outputs += [out / "noisy.bin", out / "noisy.json", out / "noisy_frames"]
    config = {
        "length": args.length, "size": [H, W], "velocity": [dy, dx],
        "channels": args.channels, "sigma": args.sigma,
        "objects": [list(o.position) + list(o.size) + list(o.velocity) for o in objects],
    }
    outputs.append(write_manifest(out, "synth", config, args.seed, [], outputs, time.time() - t0))
    return 0


def _add_noise_flags(p):
    p.add_argument("--sigma", type=float, default=None,
                   help="noise standard deviation on the [0, 255] scale")
    p.add_argument("--sigma-mode", choices=sorted(_SIGMA_MODES), default="unknown")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bsvd",
                                     description="Blind-spot video denoising toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a denoiser on noisy frame directories")
    p.add_argument("inputs", nargs="+", metavar="FRAME_DIR")
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--frames", type=int, choices=(1, 3, 5), default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--patch-size", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr0", type=float, default=None, help="initial learning rate")
    p.add_argument("--lr-checkpoints", default=None, help="comma-separated epoch list")
    p.add_argument("--augment", default=None,
                   help="comma-separated: flip,time-reverse,subsample")
    p.add_argument("--single-video", action="store_true",
                   help="train on one video with the full augmentation suite")
    p.add_argument("--early-stop-frames", type=int, default=None)
    _add_noise_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("denoise", help="run a checkpoint over a noisy video")
    p.add_argument("input", metavar="FRAME_DIR")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--clean", default=None, help="clean frames for PSNR/SSIM reporting")
    p.add_argument("--no-fusion", action="store_true")
    p.add_argument("--tile", type=int, default=None,
                   help="spatial tile size for inference (use the training patch size)")
    _add_noise_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("analyze", help="gradient-based filter analysis")
    p.add_argument("mode", choices=("filters", "flow", "contributions"))
    p.add_argument("input", metavar="FRAME_DIR")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--frame", type=int, default=None, help="central frame index")
    p.add_argument("--pixel", default="8,8", help="ROW,COL for filter heatmaps")
    p.add_argument("--grid", type=int, default=8, help="flow sampling stride")
    p.add_argument("--pixels", type=int, default=500, help="sample size for contributions")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synth", help="generate a synthetic benchmark video")
    p.add_argument("--length", type=int, default=32, help="number of frames")
    p.add_argument("--size", default="96x96")
    p.add_argument("--velocity", default="0,0", help="background DY,DX px/frame")
    p.add_argument("--object", action="append", default=None,
                   help="ROW,COL,HEIGHT,WIDTH,DY,DX (repeatable)")
    p.add_argument("--channels", type=int, choices=(1, 3), default=3)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    import os

    threads = os.environ.get("BSVD_NUM_THREADS")
    if threads:
        torch.set_num_threads(int(threads))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
