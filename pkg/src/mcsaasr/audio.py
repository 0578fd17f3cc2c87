"""Multichannel WAV reading and writing.

Waveforms are ``[C, N]`` float64 arrays in ``[-1, 1]``. PCM 16-bit files are
scaled by ``1 / 32768`` on read and clipped/rounded on write.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    rate, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype.kind == "f":
        x = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample type {data.dtype}")
    x = x.T if x.ndim == 2 else x[None, :]
    return np.ascontiguousarray(x), int(rate)


def write_wav(path: str | Path, signal: np.ndarray, sample_rate: int, fmt: str = "float32") -> None:
    x = np.atleast_2d(np.asarray(signal, dtype=np.float64))
    if fmt == "float32":
        data = x.T.astype(np.float32)
    elif fmt == "pcm16":
        data = np.clip(np.round(x.T * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}; use 'float32' or 'pcm16'")
    wavfile.write(str(path), int(sample_rate), data if data.shape[1] > 1 else data[:, 0])
