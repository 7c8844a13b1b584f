"""Frame-sequence I/O: directories of zero-padded numbered PNG/PGM frames.

8-bit PNG (RGB or grayscale) and 8/16-bit PGM round-trip losslessly.
Pipeline arrays are float in [0, 255]; writing converts by rounding, so
save/load of integer-valued data is bit-exact.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

_FRAME_RE = re.compile(r"^frame_(\d+)\.(png|pgm)$")


def save_frames(video: np.ndarray, path: str | Path, fmt: str = "png", bits: int = 8) -> list[Path]:
    """Write (T, C, H, W) video as frame_00000.<fmt> ... in `path`.

    PNG supports 8-bit gray/RGB; PGM supports 8- and 16-bit grayscale.
    """
    video = np.asarray(video)
    if video.ndim != 4:
        raise ValueError(f"expected (T, C, H, W), got shape {video.shape}")
    T, C, H, W = video.shape
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    out = []
    for t in range(T):
        fname = path / f"frame_{t:05d}.{fmt}"
        if fmt == "pgm":
            if C != 1:
                raise ValueError("pgm supports grayscale only")
            _write_pgm(fname, video[t, 0], bits)
        elif fmt == "png":
            if bits != 8:
                raise ValueError("png export is 8-bit")
            arr = np.clip(np.rint(video[t]), 0, 255).astype(np.uint8)
            img = Image.fromarray(arr[0] if C == 1 else arr.transpose(1, 2, 0))
            img.save(fname)
        else:
            raise ValueError(f"unknown format {fmt!r}")
        out.append(fname)
    return out


def load_frames(path: str | Path) -> np.ndarray:
    """Load a frame directory into a (T, C, H, W) float array."""
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"frame directory not found: {path}")
    entries = {}
    for f in path.iterdir():
        m = _FRAME_RE.match(f.name)
        if m:
            entries[int(m.group(1))] = f
    if not entries:
        raise FileNotFoundError(f"no frame_NNNNN.png/.pgm files in {path}")
    indices = sorted(entries)
    lo = indices[0]
    for want, got in enumerate(indices):
        if got != want + lo:
            raise ValueError(f"missing frame index {want + lo} in {path}")
    frames = []
    shape = None
    for i in indices:
        f = entries[i]
        if f.suffix == ".pgm":
            arr = _read_pgm(f)[None]
        else:
            img = np.asarray(Image.open(f))
            arr = img[None] if img.ndim == 2 else img.transpose(2, 0, 1)
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise ValueError(
                f"inconsistent frame dims in {f.name}: {arr.shape[1:]} vs {shape[1:]}"
            )
        frames.append(arr.astype(np.float64))
    return np.stack(frames)


def _write_pgm(fname: Path, frame: np.ndarray, bits: int) -> None:
    if bits == 8:
        maxval, dtype = 255, np.uint8
    elif bits == 16:
        maxval, dtype = 65535, ">u2"  # PGM 16-bit is big-endian
    else:
        raise ValueError("pgm bits must be 8 or 16")
    H, W = frame.shape
    data = np.clip(np.rint(frame), 0, maxval).astype(dtype)
    with open(fname, "wb") as fh:
        fh.write(f"P5\n{W} {H}\n{maxval}\n".encode())
        fh.write(data.tobytes())


def _read_pgm(fname: Path) -> np.ndarray:
    with open(fname, "rb") as fh:
        raw = fh.read()
    # header: magic, width, height, maxval, single whitespace, then data
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    pos += 1
    if tokens[0] != b"P5":
        raise ValueError(f"not a binary PGM: {fname}")
    W, H, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    data = np.frombuffer(raw, dtype=dtype, count=H * W, offset=pos)
    return data.reshape(H, W).astype(np.float64)
