"""Named-parameter checkpoint files.

Binary layout, all integers little-endian::

    magic      8 bytes   b"CNESUECK"
    version    u32       1
    meta_len   u32       length of the metadata block
    meta       bytes     UTF-8 JSON object (model config, ablation, ...)
    count      u32       number of arrays
    count x:
        name_len  u16
        name      bytes   UTF-8
        dtype     u8      0 = float32, 1 = float64
        ndim      u8
        dims      ndim x u32
        payload   prod(dims) little-endian floats, row-major
"""
from __future__ import annotations

import io
import json
import os
import struct
from pathlib import Path

import numpy as np

from ..errors import ConfigError

MAGIC = b"CNESUECK"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write ``arrays`` atomically (temp file, then rename)."""
    buf = io.BytesIO()
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise ConfigError(f"cannot checkpoint {name}: unsupported dtype {arr.dtype}")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<BB", code, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ConfigError(f"{path}: not a checkpoint file")
    pos = 8
    version, meta_len = struct.unpack_from("<II", raw, pos)
    pos += 8
    if version != VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(raw[pos : pos + meta_len].decode("utf-8"))
    pos += meta_len
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos : pos + nlen].decode("utf-8")
        pos += nlen
        code, ndim = struct.unpack_from("<BB", raw, pos)
        pos += 2
        dims = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        dt = _DTYPES[code]
        n = int(np.prod(dims, dtype=np.int64))
        arrays[name] = np.frombuffer(raw, dtype=dt, count=n, offset=pos).reshape(dims).astype(dt.newbyteorder("="))
        pos += n * dt.itemsize
    if pos != len(raw):
        raise ConfigError(f"{path}: {len(raw) - pos} trailing bytes")
    return arrays, meta
