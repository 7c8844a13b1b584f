"""Model checkpoint container.

Layout (all integers little-endian):

    8 bytes   magic b"BSVDCKP1"
    u32       format version (1)
    u32       length of UTF-8 JSON metadata block
    bytes     JSON metadata: network config, optional training-config echo,
              noise model, anything else callers attach
    u32       number of parameter arrays
    per array:
        u16    name length, then UTF-8 name
        u8     ndim, then u32 dims
        raw    float32 little-endian data, C order

Parameters are written in state_dict order; save/load round-trips
bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .network import BlindSpotVideoNet, NetConfig

MAGIC = b"BSVDCKP1"
VERSION = 1


def save_checkpoint(
    path: str | Path, net: BlindSpotVideoNet, metadata: dict | None = None
) -> None:
    meta = dict(metadata or {})
    meta["net_config"] = net.config.to_dict()
    blob = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        state = net.state_dict()
        fh.write(struct.pack("<I", len(state)))
        for name, tensor in state.items():
            arr = tensor.detach().cpu().numpy().astype("<f4")
            encoded = name.encode()
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path: str | Path) -> tuple[BlindSpotVideoNet, dict]:
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(blob_len).decode())
        (n_arrays,) = struct.unpack("<I", fh.read(4))
        state = {}
        for _ in range(n_arrays):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode()
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape)
            state[name] = torch.from_numpy(data.copy())
    net = BlindSpotVideoNet(NetConfig.from_dict(meta["net_config"]))
    net.load_state_dict(state)
    return net, meta
