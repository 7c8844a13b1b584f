"""Patch-based training loop: Adam, halving learning-rate schedule, and the
single-video augmentation suite (spatial flips, time reversal, temporal
subsampling).

The training path only ever sees noisy videos. For synthetic fresh-noise
experiments the caller supplies a `video_provider` that yields a new noisy
realization per epoch; clean data never enters this module.
"""

from __future__ import annotations

import csv
from collections.abc import Callable, Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .loss import nll_loss_map, sigma_regularizer
from .network import BlindSpotVideoNet

AUGMENTATIONS = ("flip", "time_reverse", "temporal_subsample")
SUBSAMPLE_STRIDES = (1, 2, 3)

# Losses are evaluated at unit intensity scale. Because every network path is
# positively homogeneous of degree 1 in its input, a net trained on
# intensities/255 produces correctly scaled means and covariances when later
# run on [0, 255] data, so this is purely a conditioning choice.
INTENSITY_SCALE = 255.0


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    kind: str = "unknown"       # or gaussian_known_sigma, gaussian_unknown_sigma
    sigma: float | None = None  # intensity units on [0, 255]

    def __post_init__(self):
        kinds = ("gaussian_known_sigma", "gaussian_unknown_sigma", "unknown")
        if self.kind not in kinds:
            raise ValueError(f"noise kind must be one of {kinds}, got {self.kind!r}")
        if self.kind == "gaussian_known_sigma":
            if self.sigma is None or self.sigma <= 0:
                raise ValueError("gaussian_known_sigma requires sigma > 0")
        elif self.sigma is not None:
            raise ValueError(f"sigma must be absent for kind {self.kind!r}")


@dataclass(frozen=True)
class TrainConfig:
    frame_count: int = 5
    patch_size: int = 128      # paper mode; desk-scale runs override
    epochs: int = 40
    lr0: float = 1e-4
    lr_checkpoints: tuple[int, ...] = (20, 25, 30)
    lr_factor: float = 2.0
    batch_size: int = 4
    seed: int = 0
    augmentations: tuple[str, ...] = ()
    noise: NoiseModel = field(default_factory=NoiseModel)
    early_stop_frames: int = 0  # held-out frames at the end of each video

    def __post_init__(self):
        if list(self.lr_checkpoints) != sorted(set(self.lr_checkpoints)):
            raise ValueError("lr_checkpoints must be strictly increasing")
        if self.lr_checkpoints and self.lr_checkpoints[-1] >= self.epochs:
            raise ValueError("lr_checkpoints must be < epochs")
        for a in self.augmentations:
            if a not in AUGMENTATIONS:
                raise ValueError(f"unknown augmentation {a!r}")
        if self.patch_size % 4 != 0:
            raise ValueError("patch_size must be divisible by 4")

    def to_dict(self) -> dict:
        d = {
            "frame_count": self.frame_count,
            "patch_size": self.patch_size,
            "epochs": self.epochs,
            "lr0": self.lr0,
            "lr_checkpoints": list(self.lr_checkpoints),
            "lr_factor": self.lr_factor,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "augmentations": list(self.augmentations),
            "noise_kind": self.noise.kind,
            "noise_sigma": self.noise.sigma,
            "early_stop_frames": self.early_stop_frames,
        }
        return d

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        noise = NoiseModel(d.pop("noise_kind", "unknown"),
                           d.pop("noise_sigma", None))
        d["lr_checkpoints"] = tuple(d.get("lr_checkpoints", (20, 25, 30)))
        d["augmentations"] = tuple(d.get("augmentations", ()))
        return TrainConfig(noise=noise, **d)


@dataclass
class AugmentedSample:
    window: np.ndarray              # (k, C, p, p)
    target_pixel_frame: int         # index of the central frame in the window
    provenance: list[str]


def lr_at_epoch(epoch: int, cfg: TrainConfig) -> float:
    """Piecewise-constant schedule halving (by lr_factor) at each checkpoint."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    lr = cfg.lr0
    for c in cfg.lr_checkpoints:
        if epoch >= c:
            lr /= cfg.lr_factor
    return lr


def _allowed_strides(cfg: TrainConfig, T: int) -> list[int]:
    strides = list(SUBSAMPLE_STRIDES) if "temporal_subsample" in cfg.augmentations else [1]
    k = cfg.frame_count
    valid = [s for s in strides if (k - 1) * s < T]
    return valid


def validate_video_lengths(videos: Sequence[np.ndarray], cfg: TrainConfig) -> None:
    for v in videos:
        if not _allowed_strides(cfg, v.shape[0]):
            raise ValueError(
                f"video of {v.shape[0]} frames too short for a "
                f"{cfg.frame_count}-frame window"
            )


def extract_window(video: np.ndarray, start: int, stride: int, k: int) -> np.ndarray:
    """Frames start, start+stride, ..., k of them."""
    return video[start : start + (k - 1) * stride + 1 : stride]


def augment(
    video: np.ndarray, cfg: TrainConfig, rng: np.random.Generator
) -> Iterator[AugmentedSample]:
    """Endless stream of augmented patch windows, deterministic in the rng."""
    T, C, H, W = video.shape
    k = cfg.frame_count
    p = cfg.patch_size
    if p > H or p > W:
        raise ValueError(f"patch {p} exceeds video extent {H}x{W}")
    strides = _allowed_strides(cfg, T)
    if not strides:
        raise ValueError("video too short for the configured frame count")
    while True:
        provenance = []
        s = int(rng.choice(strides))
        if s != 1:
            provenance.append(f"temporal_subsample:{s}")
        t0 = int(rng.integers(0, T - (k - 1) * s))
        win = extract_window(video, t0, s, k)
        if "time_reverse" in cfg.augmentations and rng.integers(2):
            win = win[::-1]
            provenance.append("time_reverse")
        r0 = int(rng.integers(0, H - p + 1))
        c0 = int(rng.integers(0, W - p + 1))
        win = win[:, :, r0 : r0 + p, c0 : c0 + p]
        if "flip" in cfg.augmentations:
            if rng.integers(2):
                win = win[:, :, :, ::-1]
                provenance.append("hflip")
            if rng.integers(2):
                win = win[:, :, ::-1, :]
                provenance.append("vflip")
        yield AugmentedSample(np.ascontiguousarray(win), k // 2, provenance)


def batch_loss(
    net: BlindSpotVideoNet,
    batch: torch.Tensor,
    noise: NoiseModel,
    sigma_net: BlindSpotVideoNet | None = None,
) -> torch.Tensor:
    """Mean training loss over a batch of windows (N, k, C, p, p)."""
    batch = batch / INTENSITY_SCALE
    out = net(batch)
    mu, raw_cov = net.split_output(out)
    y = batch[:, net.config.frame_count // 2]
    if noise.kind == "unknown" or raw_cov is None:
        return 0.5 * ((y - mu) ** 2).mean()
    if noise.kind == "gaussian_known_sigma":
        return nll_loss_map(y, mu, raw_cov, noise.sigma / INTENSITY_SCALE).mean()
    # estimated sigma: a second network of identical structure predicts a
    # per-pixel map; the scalar estimate is its spatial mean
    sig_map = sigma_net(batch)
    sigma_est = sig_map.mean().clamp_min(1e-3)
    return nll_loss_map(y, mu, raw_cov, sigma_est).mean() + sigma_regularizer(sigma_est)


def samples_per_epoch(videos: Sequence[np.ndarray], cfg: TrainConfig) -> int:
    """One epoch = one pass over all valid window origins at stride = patch."""
    n = 0
    p = cfg.patch_size
    for v in videos:
        T, _, H, W = v.shape
        n_windows = max(T - cfg.frame_count + 1, 0)
        n += n_windows * (H // p) * (W // p)
    return max(n, 1)


@dataclass
class FitResult:
    net: BlindSpotVideoNet
    trace: list[tuple[int, int, float, float]]   # (epoch, step, loss, lr)
    epoch_means: list[float]
    validation: list[float]
    sigma_net: BlindSpotVideoNet | None = None


def _self_prediction_mse(
    net: BlindSpotVideoNet, videos: Sequence[np.ndarray], frame_range: tuple[int, int]
) -> float:
    """Mean squared error between mu and the noisy center frame over the
    given central-frame range of each video."""
    k = net.config.frame_count
    errs = []
    with torch.no_grad():
        for v in videos:
            T, _, H, W = v.shape
            lo = max(frame_range[0], k // 2)
            hi = min(frame_range[1], T - k // 2)
            for t in range(lo, hi):
                win = torch.as_tensor(
                    v[t - k // 2 : t + k // 2 + 1], dtype=torch.float32
                )[None]
                mu, _ = net.split_output(net(win))
                y = win[:, k // 2]
                errs.append(float(((y - mu) ** 2).mean()))
    return float(np.mean(errs)) if errs else float("nan")


def fit(
    videos: Sequence[np.ndarray],
    net: BlindSpotVideoNet,
    cfg: TrainConfig,
    video_provider: Callable[[int], Sequence[np.ndarray]] | None = None,
    progress: Callable[[int, float], None] | None = None,
) -> FitResult:
    """Train on noisy videos with Adam and the halving schedule.

    `video_provider(epoch)` may swap in a fresh noisy realization each epoch
    for synthetic experiments; omit it to train on a single realization.
    """
    if net.config.frame_count != cfg.frame_count:
        raise ValueError("network frame_count does not match config")
    validate_video_lengths(videos, cfg)
    sigma_net = None
    params = list(net.parameters())
    if cfg.noise.kind == "gaussian_unknown_sigma":
        from .network import NetConfig, build_network

        sigma_net = build_network(
            NetConfig(
                frame_count=net.config.frame_count,
                channels=net.config.channels,
                out_channels=1,
            ),
            seed=cfg.seed + 1,
        )
        params += list(sigma_net.parameters())
    opt = torch.optim.Adam(params, lr=cfg.lr0)
    rng = np.random.default_rng(cfg.seed)
    trace: list[tuple[int, int, float, float]] = []
    epoch_means: list[float] = []
    validation: list[float] = []
    best_val, best_state = float("inf"), None

    n_steps = -(-samples_per_epoch(videos, cfg) // cfg.batch_size)
    for epoch in range(cfg.epochs):
        if video_provider is not None:
            videos = video_provider(epoch)
            validate_video_lengths(videos, cfg)
        train_videos = videos
        if cfg.early_stop_frames:
            train_videos = [v[: -cfg.early_stop_frames] for v in videos]
            validate_video_lengths(train_videos, cfg)
        streams = [augment(v, cfg, rng) for v in train_videos]
        lr = lr_at_epoch(epoch, cfg)
        for g in opt.param_groups:
            g["lr"] = lr
        losses = []
        for step in range(n_steps):
            samples = [
                next(streams[int(rng.integers(len(streams)))])
                for _ in range(cfg.batch_size)
            ]
            batch = torch.as_tensor(
                np.stack([s.window for s in samples]), dtype=torch.float32
            )
            try:
                loss = batch_loss(net, batch, cfg.noise, sigma_net)
            except torch.linalg.LinAlgError as exc:
                raise TrainingDiverged(
                    f"covariance factorization failed at epoch {epoch} "
                    f"step {step}: {exc}"
                ) from exc
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} step {step}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            loss_val = float(loss.detach())
            losses.append(loss_val)
            trace.append((epoch, step, loss_val, lr))
        epoch_means.append(float(np.mean(losses)))
        if cfg.early_stop_frames:
            val = _self_prediction_mse(
                net, videos, (len(videos[0]) - cfg.early_stop_frames, len(videos[0]))
            )
            validation.append(val)
            if val < best_val:
                best_val = val
                best_state = {k: v.detach().clone() for k, v in net.state_dict().items()}
        if progress is not None:
            progress(epoch, epoch_means[-1])
    if best_state is not None:
        net.load_state_dict(best_state)
    return FitResult(net, trace, epoch_means, validation, sigma_net)


def write_loss_trace(path: str | Path, trace: Sequence[tuple[int, int, float, float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "step", "loss", "lr"])
        writer.writerows(trace)


def load_config_file(path: str | Path) -> dict:
    """Flat key = value text config; values parsed as JSON-ish literals."""
    import json

    out = {}
    for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{line_no}: expected key = value")
        key, _, value = line.partition("=")
        value = value.strip()
        try:
            out[key.strip()] = json.loads(value)
        except json.JSONDecodeError:
            out[key.strip()] = value
    return out
