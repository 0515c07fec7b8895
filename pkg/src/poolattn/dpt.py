"""DPT binary tensor files plus the hand-editable JSON tensor form.

Layout, all little-endian:
    magic   8 bytes  b"DPTENSOR"
    version 1 byte   0x01
    dtype   1 byte   0 = float32, 1 = float64
    rank    1 byte   1..4
    dims    rank x uint32
    payload row-major values

A JSON file {"shape": [...], "data": [...], "dtype": "f64"} is accepted
anywhere a DPT file is, for small hand-written fixtures.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DptFormatError

MAGIC = b"DPTENSOR"
VERSION = 1
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES_BY_KIND = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def write_dpt(path: str | Path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _CODES_BY_KIND:
        raise DptFormatError(f"DPT stores float32/float64 only, got {arr.dtype}")
    if not 1 <= arr.ndim <= 4:
        raise DptFormatError(f"DPT stores rank 1..4, got rank {arr.ndim}")
    code = _CODES_BY_KIND[arr.dtype]
    header = MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = arr.astype(_DTYPE_CODES[code], copy=False).tobytes(order="C")
    Path(path).write_bytes(header + payload)


def read_dpt(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 11:
        raise DptFormatError(f"{path}: file too short for a DPT header")
    if raw[:8] != MAGIC:
        raise DptFormatError(f"{path}: bad magic {raw[:8]!r}")
    version, code, rank = struct.unpack("<BBB", raw[8:11])
    if version != VERSION:
        raise DptFormatError(f"{path}: unsupported version {version}")
    if code not in _DTYPE_CODES:
        raise DptFormatError(f"{path}: unknown dtype code {code}")
    if not 1 <= rank <= 4:
        raise DptFormatError(f"{path}: rank {rank} outside 1..4")
    dims_end = 11 + 4 * rank
    if len(raw) < dims_end:
        raise DptFormatError(f"{path}: truncated dims block")
    dims = struct.unpack(f"<{rank}I", raw[11:dims_end])
    if any(d < 1 for d in dims):
        raise DptFormatError(f"{path}: dims must be >= 1, got {dims}")
    dtype = _DTYPE_CODES[code]
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - dims_end != expected:
        raise DptFormatError(f"{path}: payload length mismatch, expected {expected} bytes, "
                             f"got {len(raw) - dims_end}")
    values = np.frombuffer(raw[dims_end:], dtype=dtype)
    native = np.dtype(np.float32) if code == 0 else np.dtype(np.float64)
    return values.astype(native, copy=True).reshape(dims)


def read_tensor(path: str | Path) -> np.ndarray:
    """Read a tensor from either a DPT file or the JSON form."""
    raw = Path(path).read_bytes()
    if raw[:8] == MAGIC:
        return read_dpt(path)
    try:
        obj = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DptFormatError(f"{path}: neither DPT nor JSON tensor ({exc})") from exc
    if not isinstance(obj, dict) or "shape" not in obj or "data" not in obj:
        raise DptFormatError(f"{path}: JSON tensor needs 'shape' and 'data' fields")
    dtype = {"f32": np.float32, "f64": np.float64}.get(obj.get("dtype", "f64"))
    if dtype is None:
        raise DptFormatError(f"{path}: JSON tensor dtype must be 'f32' or 'f64'")
    shape = tuple(int(d) for d in obj["shape"])
    data = np.asarray(obj["data"], dtype=dtype).reshape(-1)
    if data.size != int(np.prod(shape)):
        raise DptFormatError(f"{path}: JSON tensor data length {data.size} "
                             f"does not match shape {shape}")
    return data.reshape(shape)
