"""Restricted field-of-view primitives.

Every op here is vertically causal (or causality-preserving): output row r
never depends on input rows below r. Composing them and applying a final
one-row offset per branch yields receptive fields that end strictly above
the output row, which is what makes the assembled network blind at the
center pixel.

All functions accept tensors shaped (..., H, W); convolution requires
(N, C, H, W) or (C, H, W).
"""

from __future__ import annotations

import torch
import torch.nn.functional as F


def down_shift(x: torch.Tensor, rows: int = 1) -> torch.Tensor:
    """Shift down by `rows`: zero rows inserted at top, bottom rows dropped."""
    if rows == 0:
        return x
    return F.pad(x, (0, 0, rows, 0))[..., : x.shape[-2], :]


def shift_conv2d(x: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    """Bias-free 2d convolution whose field of view extends only upward.

    Same-padding convolution followed by a downward shift of floor(h/2)
    rows, so output row r depends only on input rows <= r.
    """
    if kernel.ndim != 4:
        raise ValueError(f"kernel must be 4d (out, in, h, w), got {kernel.ndim}d")
    h, w = kernel.shape[-2:]
    if h % 2 == 0 or w % 2 == 0:
        raise ValueError(f"kernel dims must be odd, got {h}x{w}")
    H = x.shape[-2]
    if h // 2 >= H:
        # the downward shift would discard every convolved row
        raise ValueError(f"kernel {h}x{w} exceeds input extent {H} rows")
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    y = F.conv2d(x, kernel, padding=(h // 2, w // 2))
    y = down_shift(y, h // 2)
    return y[0] if squeeze else y


def offset_maxpool(x: torch.Tensor) -> torch.Tensor:
    """2x2 max pooling preceded by a one-row downward offset (zero padded).

    Output row r depends only on input rows <= 2r. Requires even dims.
    """
    H, W = x.shape[-2:]
    if H % 2 != 0 or W % 2 != 0:
        raise ValueError(f"offset_maxpool requires even dims, got {H}x{W}")
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    y = F.max_pool2d(down_shift(x, 1), kernel_size=2)
    return y[0] if squeeze else y


def nearest_upsample(x: torch.Tensor) -> torch.Tensor:
    """Replicate each pixel into a 2x2 block."""
    return x.repeat_interleave(2, dim=-2).repeat_interleave(2, dim=-1)


def rotate90(x: torch.Tensor, quarter_turns: int) -> torch.Tensor:
    """Lossless rotation by quarter turns; rotate90(., q) then (4-q)%4 is identity.

    One turn maps [[1,2],[3,4]] to [[3,1],[4,2]]. Any consistent convention
    works since derotation inverts it.
    """
    return torch.rot90(x, -(quarter_turns % 4), dims=(-2, -1))


def derotate90(x: torch.Tensor, quarter_turns: int) -> torch.Tensor:
    """Inverse of rotate90 with the same quarter_turns."""
    return rotate90(x, (4 - quarter_turns) % 4)


def causal_offset(x: torch.Tensor) -> torch.Tensor:
    """One-row downward shift applied once per branch before derotation.

    Moves the end of the field of view from row r to row r-1, excluding the
    output pixel itself.
    """
    return down_shift(x, 1)
