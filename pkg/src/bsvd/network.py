"""Four-branch rotated blind-spot video denoising network.

A shared pair of causal UNets (D1, D2) processes the input window at four
rotations; derotated branch outputs are merged by a cascade of three 1x1
convolutions into per-pixel mean (and, in color mode, raw covariance)
channels. Every layer is bias-free, so the whole map is degree-1
positively homogeneous and f(0) = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blindspot import (
    causal_offset,
    derotate90,
    nearest_upsample,
    offset_maxpool,
    rotate90,
    shift_conv2d,
)


@dataclass(frozen=True)
class NetConfig:
    """Structural configuration of the network."""

    frame_count: int = 5          # temporal window size, 1, 3 or 5
    channels: int = 3             # 1 grayscale, 3 rgb
    d1_out: int = 32
    d2_out: int = 96
    head_hidden: int = 96
    out_channels: int | None = None  # override (e.g. 1 for a sigma net)

    def __post_init__(self):
        if self.frame_count not in (1, 3, 5):
            raise ValueError(f"frame_count must be 1, 3 or 5, got {self.frame_count}")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")

    @property
    def output_channels(self) -> int:
        if self.out_channels is not None:
            return self.out_channels
        # rgb: 3 mean channels + 6 raw covariance entries; grayscale: mean only
        return 9 if self.channels == 3 else 1

    @property
    def fusion_capable(self) -> bool:
        return self.out_channels is None and self.channels == 3

    def to_dict(self) -> dict:
        return {
            "frame_count": self.frame_count,
            "channels": self.channels,
            "d1_out": self.d1_out,
            "d2_out": self.d2_out,
            "head_hidden": self.head_hidden,
            "out_channels": self.out_channels,
        }

    @staticmethod
    def from_dict(d: dict) -> "NetConfig":
        return NetConfig(**d)


class BlindConv2d(nn.Module):
    """3x3 bias-free convolution with upward-only field of view."""

    def __init__(self, in_ch: int, out_ch: int, kernel_size: int = 3):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(out_ch, in_ch, kernel_size, kernel_size))

    def forward(self, x):
        return shift_conv2d(x, self.weight)


class Conv1x1(nn.Module):
    """Bias-free pointwise convolution."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(out_ch, in_ch, 1, 1))

    def forward(self, x):
        return F.conv2d(x, self.weight)


class BlindUNet(nn.Module):
    """Causal UNet: 48-channel encoder with two pooling stages, 96-channel
    decoder, skip concatenations of the first pooled map and the input."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.enc0 = BlindConv2d(in_ch, 48)
        self.enc1 = BlindConv2d(48, 48)
        self.enc2 = BlindConv2d(48, 48)
        self.enc3 = BlindConv2d(48, 48)
        self.enc4 = BlindConv2d(48, 48)
        self.enc5 = BlindConv2d(48, 48)
        self.enc6 = BlindConv2d(48, 96)
        self.enc7 = BlindConv2d(96, 96)
        self.enc8 = BlindConv2d(96, 48)
        self.dec0 = BlindConv2d(96, 96)
        self.dec1 = BlindConv2d(96, 96)
        self.dec2 = BlindConv2d(96, 96)
        self.dec3 = BlindConv2d(96, 96)
        self.dec4 = BlindConv2d(96 + in_ch, 96)
        self.dec5 = BlindConv2d(96, 96)
        self.dec6 = BlindConv2d(96, 96)
        self.dec7 = BlindConv2d(96, out_ch)

    def forward(self, x):
        H, W = x.shape[-2:]
        if H % 4 != 0 or W % 4 != 0:
            raise ValueError(
                f"spatial dims must be divisible by 4 (two pooling stages), got {H}x{W}"
            )
        h = F.relu(self.enc0(x))
        h = F.relu(self.enc1(h))
        h = F.relu(self.enc2(h))
        p1 = offset_maxpool(h)
        h = F.relu(self.enc3(p1))
        h = F.relu(self.enc4(h))
        h = F.relu(self.enc5(h))
        h = offset_maxpool(h)
        h = F.relu(self.enc6(h))
        h = F.relu(self.enc7(h))
        h = F.relu(self.enc8(h))
        h = nearest_upsample(h)
        h = torch.cat([h, p1], dim=-3)
        h = F.relu(self.dec0(h))
        h = F.relu(self.dec1(h))
        h = F.relu(self.dec2(h))
        h = F.relu(self.dec3(h))
        h = nearest_upsample(h)
        h = torch.cat([h, x], dim=-3)
        h = F.relu(self.dec4(h))
        h = F.relu(self.dec5(h))
        h = F.relu(self.dec6(h))
        return self.dec7(h)


class BlindSpotVideoNet(nn.Module):
    """Maps a window of frames (N, k, C, H, W) to per-pixel output channels.

    The D1/D2 UNets are shared across the three frame triples and across the
    four rotation branches. For k=3 a single D1 over all three frames feeds
    D2 directly; for k=1 a single UNet replaces the cascade.
    """

    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        c = config.channels
        k = config.frame_count
        if k == 5:
            self.d1 = BlindUNet(3 * c, config.d1_out)
            self.d2 = BlindUNet(3 * config.d1_out, config.d2_out)
        elif k == 3:
            self.d1 = BlindUNet(3 * c, config.d1_out)
            self.d2 = BlindUNet(config.d1_out, config.d2_out)
        else:
            self.d1 = BlindUNet(c, config.d2_out)
            self.d2 = None
        branch_ch = config.d2_out
        self.head0 = Conv1x1(4 * branch_ch, config.head_hidden)
        self.head1 = Conv1x1(config.head_hidden, config.head_hidden)
        self.head2 = Conv1x1(config.head_hidden, config.output_channels)

    def branch_forward(self, frames: torch.Tensor) -> torch.Tensor:
        """One branch on already-rotated frames (N, k, C, H, W)."""
        N, k, C, H, W = frames.shape
        if k != self.config.frame_count:
            raise ValueError(
                f"expected {self.config.frame_count} frames, got {k}"
            )
        if k == 5:
            feats = [
                self.d1(frames[:, i : i + 3].reshape(N, 3 * C, H, W))
                for i in range(3)
            ]
            h = self.d2(torch.cat(feats, dim=1))
        elif k == 3:
            h = self.d2(self.d1(frames.reshape(N, 3 * C, H, W)))
        else:
            h = self.d1(frames.reshape(N, C, H, W))
        return causal_offset(h)

    def branch_outputs(self, window: torch.Tensor) -> list[torch.Tensor]:
        """Derotated outputs of the four rotation branches."""
        outs = []
        for q in range(4):
            h = self.branch_forward(rotate90(window, q))
            outs.append(derotate90(h, q))
        return outs

    def forward(self, window: torch.Tensor) -> torch.Tensor:
        if window.ndim == 4:
            window = window[None]
        N, k, C, H, W = window.shape
        if C != self.config.channels:
            raise ValueError(f"expected {self.config.channels} channels, got {C}")
        if H % 4 != 0 or W % 4 != 0:
            raise ValueError(
                f"spatial dims must be divisible by 4, got {H}x{W}"
            )
        h = torch.cat(self.branch_outputs(window), dim=1)
        h = F.relu(self.head0(h))
        h = F.relu(self.head1(h))
        return self.head2(h)

    def split_output(self, out: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor | None]:
        """Split raw output into (mu, raw_cov); raw_cov is None in grayscale
        or override modes."""
        if self.config.fusion_capable:
            return out[..., :3, :, :], out[..., 3:9, :, :]
        return out, None


def init_parameters(net: nn.Module, seed: int) -> None:
    """He-style fan-in uniform init, deterministic in the seed."""
    gen = torch.Generator().manual_seed(seed)
    for p in net.parameters():
        fan_in = p.shape[1] * p.shape[2] * p.shape[3]
        bound = math.sqrt(6.0 / fan_in)
        with torch.no_grad():
            p.uniform_(-bound, bound, generator=gen)


def build_network(config: NetConfig, seed: int = 0) -> BlindSpotVideoNet:
    net = BlindSpotVideoNet(config)
    init_parameters(net, seed)
    return net
