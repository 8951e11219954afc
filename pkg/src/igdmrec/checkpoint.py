"""Versioned binary checkpoints.

Layout::

    b"IGDMCKPT" | u32 version | u64 header length | JSON header
    | raw little-endian arrays | sha256 of everything before it

The header lists every array with its dtype, shape and byte offset, plus
free-form metadata (resolved config, dataset fingerprint, ...).
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ArtifactMismatch

MAGIC = b"IGDMCKPT"
VERSION = 1
_DTYPES = {"f8": "<f8", "i8": "<i8"}


def save(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    entries, blobs, offset = [], [], 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        code = "i8" if np.issubdtype(arr.dtype, np.integer) else "f8"
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        entries.append({"name": name, "dtype": code, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<IQ", VERSION, len(header)) + header + b"".join(blobs)
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ArtifactMismatch(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < len(MAGIC) + 12 + 32 or not data.startswith(MAGIC):
        raise ArtifactMismatch(f"{path}: not a checkpoint file")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ArtifactMismatch(f"{path}: checksum mismatch, file is corrupt")
    version, hlen = struct.unpack_from("<IQ", body, len(MAGIC))
    if version != VERSION:
        raise ArtifactMismatch(f"{path}: unsupported checkpoint version {version}")
    start = len(MAGIC) + 12
    header = json.loads(body[start:start + hlen].decode("utf-8"))
    base = start + hlen
    arrays = {}
    for e in header["arrays"]:
        lo = base + e["offset"]
        arrays[e["name"]] = np.frombuffer(body[lo:lo + e["nbytes"]], dtype=_DTYPES[e["dtype"]]) \
            .reshape(e["shape"]).copy()
    return arrays, header["meta"]
