"""Versioned single-file checkpoint container.

Layout (little endian):
    bytes 0..7    magic "SQFZCKPT"
    bytes 8..11   u32 version = 1
    bytes 12..19  u64 header length in bytes
    header        UTF-8 JSON: {"config": {...}, "meta": {...},
                   "tensors": [{"name", "shape", "dtype"}, ...]}
    payloads      tensor buffers, contiguous, in header order

Tensor dtype codes are "f4" and "f8"; default runs store f4, deterministic
runs store f8 so that resume is bit-exact in 64-bit mode.
"""

from __future__ import annotations

import json
import os
import struct
from typing import Dict, Tuple

import numpy as np

from .errors import CheckpointError

MAGIC = b"SQFZCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")

_DTYPES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8")}


def save_checkpoint(path: str, config: Dict, meta: Dict, tensors: Dict[str, np.ndarray]) -> None:
    entries = []
    payloads = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype == np.float32:
            code = "f4"
        elif arr.dtype == np.float64:
            code = "f8"
        else:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": code})
        payloads.append(arr.astype(_DTYPES[code]).tobytes())
    header = json.dumps({"config": config, "meta": meta, "tensors": entries}).encode("utf-8")
    tmp = path + ".tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
            fh.write(header)
            for buf in payloads:
                fh.write(buf)
        os.replace(tmp, path)
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: str) -> Tuple[Dict, Dict, Dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < _PREFIX.size or raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    _, version, header_len = _PREFIX.unpack_from(raw)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[_PREFIX.size : _PREFIX.size + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc

    tensors: Dict[str, np.ndarray] = {}
    offset = _PREFIX.size + header_len
    for entry in header["tensors"]:
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise CheckpointError(f"{path}: unknown tensor dtype {entry['dtype']!r}")
        shape = tuple(int(x) for x in entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dtype.itemsize
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated payload for tensor {entry['name']!r}")
        tensors[entry["name"]] = np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)), offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return header["config"], header["meta"], tensors
