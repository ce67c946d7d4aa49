"""WAV (RIFF float PCM) reading and writing.

Channel-major [C x T] float arrays in memory; files are standard
interleaved WAVE_FORMAT_IEEE_FLOAT, 32-bit by default (64-bit for
lossless intermediate files).
"""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile

from .errors import InputError


def write_wav(path, fs: int, data: np.ndarray, bits: int = 32):
    if bits == 32:
        dtype = np.float32
    elif bits == 64:
        dtype = np.float64
    else:
        raise InputError(f"unsupported float WAV width {bits}")
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        payload = arr.astype(dtype)
    elif arr.ndim == 2:
        payload = np.ascontiguousarray(arr.T.astype(dtype))  # [T x C] on disk
    else:
        raise InputError(f"audio must be [T] or [C x T], got shape {arr.shape}")
    wavfile.write(str(path), fs, payload)


def read_wav(path):
    """Returns (fs, [C x T] float64 array); mono files come back as [1 x T]."""
    fs, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    else:
        data = data.astype(np.float64)
    if data.ndim == 1:
        data = data[None, :]
    else:
        data = np.ascontiguousarray(data.T)
    return fs, data
