"""Flat binary array export with a JSON sidecar describing shape and dtype.

Used for flow fields and equivalent-filter maps. Data is written as raw
little-endian values in C order to <name>.bin with <name>.json alongside.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

_DTYPES = {"float32": "<f4", "float64": "<f8", "uint8": "|u1"}


def save_array(path: str | Path, arr: np.ndarray) -> tuple[Path, Path]:
    path = Path(path)
    if path.suffix == ".bin":
        path = path.with_suffix("")
    arr = np.ascontiguousarray(arr)
    name = arr.dtype.name
    if name not in _DTYPES:
        arr = arr.astype(np.float64)
        name = "float64"
    bin_path = path.with_suffix(".bin")
    json_path = path.with_suffix(".json")
    arr.astype(_DTYPES[name]).tofile(bin_path)
    json_path.write_text(
        json.dumps({"shape": list(arr.shape), "dtype": name, "order": "C"})
    )
    return bin_path, json_path


def load_array(path: str | Path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".bin":
        path = path.with_suffix("")
    meta = json.loads(path.with_suffix(".json").read_text())
    data = np.fromfile(path.with_suffix(".bin"), dtype=_DTYPES[meta["dtype"]])
    return data.reshape(meta["shape"]).astype(meta["dtype"])
