"""Whole-video denoising: sliding window, reflection padding to legal
spatial dims, and optional posterior-mean fusion."""

from __future__ import annotations

import numpy as np
import torch

from .loss import fuse_map
from .network import BlindSpotVideoNet
from .training import NoiseModel


def pad_to_multiple(video: np.ndarray, multiple: int = 4) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflection-pad H and W up to the next multiple; padding happens
    outside the network so its analysis stays exact on the padded canvas."""
    T, C, H, W = video.shape
    ph = (-H) % multiple
    pw = (-W) % multiple
    if ph or pw:
        video = np.pad(video, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="reflect")
    return video, (ph, pw)


def sliding_windows(T: int, k: int) -> list[list[int]]:
    """Frame indices of the k-window centered on each frame; edge frames
    replicate the first/last frame."""
    half = k // 2
    return [[min(max(t + d, 0), T - 1) for d in range(-half, half + 1)] for t in range(T)]


def estimate_sigma(sigma_net: BlindSpotVideoNet, window: torch.Tensor) -> float:
    """Scalar noise-level estimate: spatial mean of the sigma network's
    single output channel, floored for positivity."""
    with torch.no_grad():
        return float(sigma_net(window[None]).mean().clamp_min(1e-3))


def denoise_video(
    net: BlindSpotVideoNet,
    noisy: np.ndarray,
    noise: NoiseModel | None = None,
    sigma_net: BlindSpotVideoNet | None = None,
    fusion: bool = True,
    tile: int | None = None,
) -> np.ndarray:
    """Denoise (T, C, H, W). Fusion is applied iff the noise model is
    Gaussian with a known or estimated sigma, the network emits covariance
    channels, and `fusion` is not disabled.

    `tile` processes the frames in independent spatial tiles of that size.
    Networks trained on small patches calibrate their receptive fields against
    the patch borders, so running them tiled at the training patch size keeps
    inference on the distribution they were trained on."""
    noise = noise or NoiseModel(kind="unknown")
    if tile is not None:
        if tile % 4:
            raise ValueError("tile must be divisible by 4")
        out = np.empty_like(noisy)
        H, W = noisy.shape[-2:]
        for r in range(0, H, tile):
            for c in range(0, W, tile):
                out[:, :, r : r + tile, c : c + tile] = denoise_video(
                    net, noisy[:, :, r : r + tile, c : c + tile],
                    noise=noise, sigma_net=sigma_net, fusion=fusion,
                )
        return out
    if noise.kind == "gaussian_unknown_sigma" and fusion and sigma_net is None:
        raise ValueError("sigma estimation requested but no sigma network given")
    padded, (ph, pw) = pad_to_multiple(noisy)
    T, C, H, W = padded.shape
    k = net.config.frame_count
    out = np.empty_like(padded)
    with torch.no_grad():
        for t, idx in enumerate(sliding_windows(T, k)):
            win = torch.as_tensor(padded[idx], dtype=torch.float32)
            mu, raw_cov = net.split_output(net(win[None]))
            fuse = fusion and raw_cov is not None and noise.kind != "unknown"
            if fuse:
                if noise.kind == "gaussian_known_sigma":
                    sigma = noise.sigma
                else:
                    sigma = estimate_sigma(sigma_net, win)
                y = win[None, k // 2]
                mu = fuse_map(y, mu, raw_cov, sigma)
            out[t] = mu[0].numpy()
    if ph or pw:
        out = out[:, :, : H - ph, : W - pw]
    return out
