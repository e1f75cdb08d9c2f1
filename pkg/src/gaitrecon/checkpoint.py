"""Versioned single-file binary checkpoints.

Layout: 8-byte magic, little-endian uint32 format version, uint32 header
length, a JSON header (sorted keys), then raw little-endian array buffers in
header order. Writing the same arrays and metadata always yields the same
bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError, MissingPath

MAGIC = b"GAITCKPT"
FORMAT_VERSION = 1


def save_checkpoint(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        data = arr.tobytes()
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = json.dumps({"kind": kind, "meta": meta, "arrays": entries},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        fh.write(header)
        for data in blobs:
            fh.write(data)
    return path


def load_checkpoint(path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise MissingPath(f"checkpoint not found: {path}", module="checkpoint")
    raw = path.read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    version, header_len = struct.unpack_from("<II", raw, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path} has format version {version}, this build reads version {FORMAT_VERSION}")
    start = len(MAGIC) + 8
    header = json.loads(raw[start:start + header_len].decode("utf-8"))
    if kind is not None and header["kind"] != kind:
        raise CheckpointError(f"{path} holds a {header['kind']!r} checkpoint, expected {kind!r}")
    body = start + header_len
    arrays = {}
    for entry in header["arrays"]:
        lo = body + entry["offset"]
        buf = raw[lo:lo + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(buf, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
    return header["meta"], arrays
