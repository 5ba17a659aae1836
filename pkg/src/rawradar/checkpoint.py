"""Versioned checkpoint files.

Layout: an ASCII header, one record per line, terminated by ``end``; then the
raw little-endian tensor bytes.  Header lines::

    rawradar-checkpoint 1
    meta <json>
    tensor <name> <dtype> <dim,dim,...> <offset> <nbytes>
    end

Offsets are relative to the first byte after the header.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import ContractError

MAGIC = "rawradar-checkpoint"
VERSION = 1
_DTYPES = {"f8": "<f8", "c16": "<c16", "f4": "<f4", "c8": "<c8", "i8": "<i8"}


def _dtype_code(a: np.ndarray) -> str:
    code = {np.dtype("float64"): "f8", np.dtype("complex128"): "c16", np.dtype("float32"): "f4",
            np.dtype("complex64"): "c8", np.dtype("int64"): "i8"}.get(a.dtype)
    if code is None:
        raise ContractError(f"cannot serialize dtype {a.dtype}")
    return code


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    """Write atomically (temp file, then rename)."""
    path = Path(path)
    lines = [f"{MAGIC} {VERSION}", "meta " + json.dumps(meta, sort_keys=True)]
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        if any(c.isspace() for c in name):
            raise ContractError(f"tensor name {name!r} contains whitespace")
        arr = np.asarray(arr)
        code = _dtype_code(arr)
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        shape = ",".join(str(d) for d in arr.shape) or "-"
        lines.append(f"tensor {name} {code} {shape} {offset} {len(raw)}")
        blobs.append(raw)
        offset += len(raw)
    lines.append("end")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for b in blobs:
            fh.write(b)
    os.replace(tmp, path)


def read_header(fh) -> tuple[dict, list[tuple]]:
    first = fh.readline().decode("ascii").split()
    if len(first) != 2 or first[0] != MAGIC:
        raise ContractError("not a rawradar checkpoint")
    if int(first[1]) != VERSION:
        raise ContractError(f"unsupported checkpoint version {first[1]}")
    meta: dict = {}
    entries = []
    for raw in fh:
        line = raw.decode("ascii").rstrip("\n")
        if line == "end":
            return meta, entries
        kind, _, rest = line.partition(" ")
        if kind == "meta":
            meta = json.loads(rest)
        elif kind == "tensor":
            name, code, shape, off, nbytes = rest.split()
            dims = () if shape == "-" else tuple(int(d) for d in shape.split(","))
            entries.append((name, code, dims, int(off), int(nbytes)))
        else:
            raise ContractError(f"unknown header record {kind!r}")
    raise ContractError("checkpoint header not terminated")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        meta, entries = read_header(fh)
        body = fh.read()
    tensors = {}
    for name, code, dims, off, nbytes in entries:
        arr = np.frombuffer(body[off:off + nbytes], dtype=_DTYPES[code]).reshape(dims)
        tensors[name] = arr.astype(arr.dtype.newbyteorder("="))
    return tensors, meta
