"""KVT1 binary tensor files and checkpoint directories.

Layout of a KVT1 file: 4-byte magic ``KVT1``, one dtype byte (0 = float32,
1 = float64), one rank byte, ``rank`` little-endian uint64 dims, then the
row-major little-endian payload.

A checkpoint is a directory of ``.kvt`` files plus ``index.json`` mapping
parameter name to file, shape and frozen flag.
"""

from __future__ import annotations

import json
import os
from typing import Dict, Iterable

import numpy as np

from .autodiff import Parameter
from .errors import UsageError

MAGIC = b"KVT1"
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def write_kvt(path: str, array: np.ndarray) -> None:
    arr = np.asarray(array)
    shape = arr.shape  # before ascontiguousarray, which promotes 0-d to 1-d
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _DTYPE_CODES:
        arr = arr.astype(np.float32)
    code = _DTYPE_CODES[arr.dtype]
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(bytes([code, len(shape)]))
        for dim in shape:
            f.write(int(dim).to_bytes(8, "little", signed=False))
        f.write(arr.astype(_CODE_DTYPES[code], copy=False).tobytes(order="C"))


def read_kvt(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise UsageError(f"{path}: not a KVT1 file (magic {magic!r})")
        code, rank = f.read(1)[0], f.read(1)[0]
        if code not in _CODE_DTYPES:
            raise UsageError(f"{path}: unknown dtype code {code}")
        dims = [int.from_bytes(f.read(8), "little") for _ in range(rank)]
        dtype = _CODE_DTYPES[code]
        n = int(np.prod(dims)) if dims else 1
        payload = f.read(n * dtype.itemsize)
        arr = np.frombuffer(payload, dtype=dtype, count=n).reshape(dims)
    # native byte order, writable copy
    return np.array(arr, dtype=np.float32 if code == 0 else np.float64)


def save_parameters(directory: str, params: Iterable[Parameter]) -> None:
    """Write each parameter to ``<directory>/<name>.kvt`` plus index.json."""
    os.makedirs(directory, exist_ok=True)
    index = {}
    for p in params:
        fname = p.name.replace("/", "__") + ".kvt"
        write_kvt(os.path.join(directory, fname), p.data)
        index[p.name] = {
            "file": fname,
            "shape": list(p.shape),
            "frozen": p.frozen,
        }
    with open(os.path.join(directory, "index.json"), "w") as f:
        json.dump(index, f, indent=2, sort_keys=True)


def load_parameter_arrays(directory: str) -> Dict[str, np.ndarray]:
    """Read every tensor listed in a checkpoint index, keyed by name."""
    with open(os.path.join(directory, "index.json")) as f:
        index = json.load(f)
    out = {}
    for name, entry in index.items():
        arr = read_kvt(os.path.join(directory, entry["file"]))
        if list(arr.shape) != entry["shape"]:
            raise UsageError(
                f"{name}: index shape {entry['shape']} != file shape {list(arr.shape)}"
            )
        out[name] = arr
    return out


def restore_parameters(directory: str, params: Iterable[Parameter]) -> None:
    """Overwrite parameter values in place from a checkpoint directory."""
    arrays = load_parameter_arrays(directory)
    for p in params:
        if p.name not in arrays:
            raise UsageError(f"checkpoint is missing parameter {p.name!r}")
        arr = arrays[p.name]
        if arr.shape != p.shape:
            raise UsageError(
                f"{p.name}: checkpoint shape {arr.shape} != model shape {p.shape}"
            )
        p.data = arr.astype(p.dtype, copy=False)
