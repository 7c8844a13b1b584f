"""Gradient-based analysis of the trained denoiser.

The denoised value at a pixel is differentiated with respect to the whole
input window, yielding one weight map per input frame (the local linear
"equivalent filter"). Because the network is bias-free, the reconstruction
identity d(i) = sum_k <a(k,i), y_k> + b holds with negligible b. Centroid
shifts of the per-frame maps between adjacent frames give an optical-flow
estimate.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .loss import fuse_map

CENTROID_THRESHOLD = 0.8   # centroid averages entries within 20% of the max
SUPPORT_THRESHOLD = 0.2    # validity mask counts entries above 20% of the max
MIN_CENTROID_ENTRIES = 4   # fewer surviving entries -> pixel masked


@dataclass
class EquivalentFilter:
    """Local linear weights for one output pixel.

    weights has shape (k, C, H, W); maps (k, H, W) are the channel-summed
    per-frame filters used for visualization, centroids and sums.
    """

    weights: np.ndarray
    pixel: tuple[int, int]
    bias: float
    value: float

    @property
    def maps(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    @property
    def frame_sums(self) -> np.ndarray:
        return self.weights.sum(axis=(1, 2, 3))

    @property
    def total_sum(self) -> float:
        return float(self.weights.sum())


@dataclass
class FlowField:
    pixels: np.ndarray   # (N, 2) int, (row, col)
    flow: np.ndarray     # (N, 2) float, (dy, dx) in px/frame
    valid: np.ndarray    # (N,) bool


def _denoised_scalar(net, window: torch.Tensor, pixel, channel, post_fusion, sigma):
    out = net(window[None])
    mu, raw_cov = net.split_output(out)
    if post_fusion:
        if raw_cov is None or sigma is None:
            raise ValueError("post-fusion gradients require covariance output and sigma")
        y = window[None, net.config.frame_count // 2]
        mu = fuse_map(y, mu, raw_cov, sigma)
    r, c = pixel
    vals = mu[0, :, r, c]
    return vals.mean() if channel == "mean" else vals[channel]


def equivalent_filters(
    net,
    window: np.ndarray | torch.Tensor,
    pixel: tuple[int, int],
    channel: int | str = "mean",
    post_fusion: bool = False,
    sigma: float | None = None,
) -> EquivalentFilter:
    """Reverse-mode gradient of the denoised value at `pixel` w.r.t. the
    full input window, split per frame, plus the residual bias."""
    dtype = next(net.parameters()).dtype
    x = torch.as_tensor(np.asarray(window), dtype=dtype)
    k, C, H, W = x.shape
    r, c = pixel
    if not (0 <= r < H and 0 <= c < W):
        raise ValueError(f"pixel {pixel} outside {H}x{W} frame")

    def extract(inp):
        inp = inp.clone().requires_grad_(True)
        d = _denoised_scalar(net, inp, pixel, channel, post_fusion, sigma)
        (grad,) = torch.autograd.grad(d, inp)
        return float(d.detach()), grad

    d, grad = extract(x)
    bias = d - float((grad * x).sum())
    if not np.isfinite(bias) or not torch.isfinite(grad).all():
        # landed exactly on a ReLU kink; nudge off it and retry once
        d, grad = extract(x + 1e-9)
        bias = d - float((grad * x).sum())
    return EquivalentFilter(grad.numpy().copy(), (r, c), bias, d)


def filter_centroid(weight_map: np.ndarray) -> tuple[float, float] | None:
    """Thresholded weighted centroid of a single-frame filter map.

    Only entries within 20% of the (signed) maximum contribute. Returns
    (row, col), or None when the map carries no positive mass.
    """
    m = np.asarray(weight_map)
    peak = m.max()
    if not np.any(np.abs(m) > 0) or peak <= 0:
        return None
    sel = m >= CENTROID_THRESHOLD * peak
    w = m[sel]
    rows, cols = np.nonzero(sel)
    total = w.sum()
    return float((w * rows).sum() / total), float((w * cols).sum() / total)


def centroid_support(weight_map: np.ndarray) -> int:
    """Number of entries above 20% of the peak; the flow validity mask
    requires at least MIN_CENTROID_ENTRIES of them in both frames."""
    m = np.asarray(weight_map)
    peak = m.max()
    if peak <= 0:
        return 0
    return int((m >= SUPPORT_THRESHOLD * peak).sum())


def spatial_extent(weight_map: np.ndarray, fraction: float = 0.1) -> int:
    """Count of entries above `fraction` of the absolute maximum."""
    m = np.abs(np.asarray(weight_map))
    return int((m > fraction * m.max()).sum())


@dataclass
class FrameContributions:
    per_frame_mean_sums: np.ndarray   # (k,)
    total_sums: np.ndarray            # (n_pixels,)
    histogram: tuple[np.ndarray, np.ndarray]  # counts, bin edges


def frame_contributions(filters: list[EquivalentFilter], bins: int = 40) -> FrameContributions:
    """Per-frame filter-entry sums averaged over a pixel sample, plus the
    histogram of total sums."""
    if not filters:
        raise ValueError("empty filter sample")
    sums = np.stack([f.frame_sums for f in filters])
    totals = sums.sum(axis=1)
    lo, hi = float(totals.min()), float(totals.max())
    if hi - lo < 1e-9:  # all sums (near) identical; give the bins some width
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(totals, bins=bins, range=(lo, hi))
    return FrameContributions(sums.mean(axis=0), totals, (counts, edges))


def flow_from_filters(
    net,
    window: np.ndarray | torch.Tensor,
    pixels: list[tuple[int, int]] | np.ndarray,
    from_frame: int | None = None,
    to_frame: int | None = None,
    channel: int | str = "mean",
) -> FlowField:
    """Estimate optical flow at each pixel from the displacement between the
    filter centroids of two frames, normalized to px/frame by the frame gap.
    Pixels whose filter mass is too diffuse (or absent) in either frame are
    masked.

    The central frame's map has no entry at the output pixel itself, so its
    mass is spread over a ring and its centroid is unreliable; the default
    therefore measures the displacement across the two flanking frames."""
    k = net.config.frame_count
    if k < 3:
        raise ValueError("flow estimation needs a frame count of at least 3")
    if from_frame is None:
        from_frame = k // 2 - 1
    if to_frame is None:
        to_frame = k // 2 + 1
    if to_frame == from_frame:
        raise ValueError("from_frame and to_frame must differ")
    gap = to_frame - from_frame
    pixels = np.asarray(pixels, dtype=int)
    flow = np.zeros((len(pixels), 2))
    valid = np.zeros(len(pixels), dtype=bool)
    for n, (r, c) in enumerate(pixels):
        filt = equivalent_filters(net, window, (int(r), int(c)), channel=channel)
        maps = filt.maps
        a, b = maps[from_frame], maps[to_frame]
        if centroid_support(a) < MIN_CENTROID_ENTRIES or centroid_support(b) < MIN_CENTROID_ENTRIES:
            continue
        ca = filter_centroid(a)
        cb = filter_centroid(b)
        if ca is None or cb is None:
            continue
        flow[n] = ((cb[0] - ca[0]) / gap, (cb[1] - ca[1]) / gap)
        valid[n] = True
    return FlowField(pixels, flow, valid)


def render_filter_heatmap(weight_map: np.ndarray, path: str | Path) -> None:
    """PNG heatmap with a diverging colormap, blue for negative weights."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    m = np.asarray(weight_map)
    lim = max(np.abs(m).max(), 1e-12)
    fig, ax = plt.subplots(figsize=(4, 4))
    im = ax.imshow(m, cmap="bwr", vmin=-lim, vmax=lim)
    fig.colorbar(im, ax=ax, shrink=0.8)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
