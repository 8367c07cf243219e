"""Binary file formats and image reading.

Histogram/embedding files (``CSCH``)::

    b"CSCH" | u32 version=1 | u32 count | u32 dim | count*dim float32

Checkpoints (``CSCM``)::

    b"CSCM" | u32 version=1 | u32 len | config JSON (UTF-8) | u32 n_tensors
    then per tensor: u32 len | name (UTF-8) | u32 rank | rank*u32 dims | float32 data

All integers and floats are little-endian.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

HIST_MAGIC = b"CSCH"
CKPT_MAGIC = b"CSCM"
VERSION = 1


class FormatError(ValueError):
    pass


def write_csch(path, records) -> None:
    arr = np.asarray(records, dtype="<f4")
    if arr.ndim == 1:
        arr = arr[None]
    if arr.ndim != 2:
        raise ValueError("records must be a 2-D array (count, dim)")
    count, dim = arr.shape
    with open(path, "wb") as f:
        f.write(HIST_MAGIC)
        f.write(struct.pack("<III", VERSION, count, dim))
        f.write(np.ascontiguousarray(arr).tobytes())


def read_csch(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != HIST_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    version, count, dim = struct.unpack_from("<III", data, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    body = data[16:]
    if len(body) != 4 * count * dim:
        raise FormatError(f"{path}: expected {count}x{dim} values, file has {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(count, dim).copy()


def save_checkpoint(path, config: dict, tensors: dict) -> None:
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<II", VERSION, len(cfg)))
        f.write(cfg)
        f.write(struct.pack("<I", len(tensors)))
        for name, value in tensors.items():
            arr = np.asarray(value, dtype="<f4")
            key = name.encode("utf-8")
            f.write(struct.pack("<I", len(key)))
            f.write(key)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    try:
        return _parse_checkpoint(data, path)
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, ValueError) as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(f"{path}: truncated or corrupt checkpoint ({e})") from None


def _parse_checkpoint(data: bytes, path) -> tuple[dict, dict[str, np.ndarray]]:
    if data[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    version, n = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    pos = 12
    config = json.loads(data[pos:pos + n].decode("utf-8"))
    pos += n
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (klen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + klen].decode("utf-8")
        pos += klen
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        size = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape).copy()
        pos += 4 * size
    return config, tensors


def read_image(path) -> np.ndarray:
    """PNG or PPM (anything Pillow decodes) as a uint8 ``(H, W, 3)`` array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_image(path, image) -> None:
    arr = np.asarray(image, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {arr.shape}")
    Image.fromarray(arr).save(path)
