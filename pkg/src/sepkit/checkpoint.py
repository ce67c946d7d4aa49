"""Binary checkpoint container: named little-endian float tensors.

Layout (all integers little-endian):

    magic   4 bytes  b"SEPK"
    version u16      currently 1
    meta    u32 length + UTF-8 JSON blob (free-form metadata)
    count   u32      number of tensors
    entry*  u16 name length, name UTF-8,
            u8 dtype code (0 = float32, 1 = float64),
            u8 ndim, u32 * ndim dims,
            raw tensor bytes (row-major)

float64 is the native payload so reloading reproduces forward passes
bit-identically; float32 is available for compact interchange.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import InputError

MAGIC = b"SEPK"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {"f32": 0, "f64": 1}


def save_tensors(path, tensors: dict, meta: dict | None = None, dtype: str = "f64"):
    """Write named arrays to ``path``; ``dtype`` selects the payload width."""
    if dtype not in _CODES:
        raise InputError(f"dtype must be 'f32' or 'f64', got {dtype!r}")
    code = _CODES[dtype]
    np_dtype = _DTYPES[code]
    meta_blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<I", len(meta_blob)))
        fh.write(meta_blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype=np_dtype)  # tobytes() serializes C-order
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<BB", code, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_tensors(path):
    """Read a container; returns (tensors dict, metadata dict)."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise InputError(f"{path} is not a sepkit checkpoint (bad magic)")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != VERSION:
            raise InputError(f"unsupported checkpoint version {version}")
        (meta_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(meta_len).decode("utf-8")) if meta_len else {}
        (count,) = struct.unpack("<I", fh.read(4))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            code, ndim = struct.unpack("<BB", fh.read(2))
            if code not in _DTYPES:
                raise InputError(f"unknown dtype code {code} for tensor {name!r}")
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            np_dtype = _DTYPES[code]
            n_bytes = int(np.prod(shape, dtype=np.int64)) * np_dtype.itemsize
            raw = fh.read(n_bytes)
            if len(raw) != n_bytes:
                raise InputError(f"truncated tensor payload for {name!r}")
            tensors[name] = np.frombuffer(raw, dtype=np_dtype).reshape(shape).copy()
    return tensors, meta
