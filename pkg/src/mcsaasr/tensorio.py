"""Named-tensor container file.

Layout (all integers little-endian)::

    bytes 0..7    magic b"MCSATNS1"
    bytes 8..11   uint32 header length H
    bytes 12..    H bytes of UTF-8 JSON:
                  {"tensors": [{"name": str, "dtype": str, "shape": [int, ...]}, ...]}
    remainder     raw tensor payloads, concatenated in header order,
                  each stored row-major (C order) in little-endian byte order

Supported dtypes are ``float64``, ``float32``, ``complex128``, ``complex64``
and ``int64``. Complex values are stored as interleaved (real, imag) pairs,
which is numpy's native layout. Tensor names are unique, non-empty strings.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"MCSATNS1"

_DTYPES = {
    "float64": np.dtype("<f8"),
    "float32": np.dtype("<f4"),
    "complex128": np.dtype("<c16"),
    "complex64": np.dtype("<c8"),
    "int64": np.dtype("<i8"),
}


class TensorFileError(ValueError):
    """Raised for malformed tensor files or unsupported tensors."""


def _canonical_dtype(arr: np.ndarray) -> str:
    for name, dt in _DTYPES.items():
        if arr.dtype == dt.newbyteorder("="):
            return name
    raise TensorFileError(f"unsupported dtype {arr.dtype}")


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    header = []
    payload = []
    for name, value in tensors.items():
        if not isinstance(name, str) or not name:
            raise TensorFileError("tensor names must be non-empty strings")
        arr = np.asarray(value)
        if arr.dtype == np.float16 or arr.dtype.kind in "iub":
            arr = arr.astype(np.int64) if arr.dtype.kind in "iub" else arr.astype(np.float64)
        dtype = _canonical_dtype(arr)
        header.append({"name": name, "dtype": dtype, "shape": list(arr.shape)})
        payload.append(np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes(order="C"))
    head = json.dumps({"tensors": header}, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(head)) + head + b"".join(payload)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[: len(MAGIC)] != MAGIC:
        raise TensorFileError("bad magic; not a tensor file")
    offset = len(MAGIC)
    if len(blob) < offset + 4:
        raise TensorFileError("truncated header length")
    (hlen,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    try:
        header = json.loads(blob[offset : offset + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TensorFileError(f"unreadable header: {exc}") from exc
    offset += hlen
    out: dict[str, np.ndarray] = {}
    for entry in header.get("tensors", []):
        name, dtype, shape = entry["name"], entry["dtype"], tuple(entry["shape"])
        if dtype not in _DTYPES:
            raise TensorFileError(f"unsupported dtype {dtype!r} for {name!r}")
        if name in out:
            raise TensorFileError(f"duplicate tensor name {name!r}")
        dt = _DTYPES[dtype]
        nbytes = dt.itemsize * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(blob):
            raise TensorFileError(f"truncated payload for {name!r}")
        arr = np.frombuffer(blob, dtype=dt, count=nbytes // dt.itemsize, offset=offset)
        out[name] = arr.reshape(shape).astype(dt.newbyteorder("="))
        offset += nbytes
    if offset != len(blob):
        raise TensorFileError(f"{len(blob) - offset} trailing bytes after last tensor")
    return out


def save(path: str | Path, tensors: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(tensors))


def load(path: str | Path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
