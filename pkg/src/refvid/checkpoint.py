"""Named-tensor binary container used for every checkpoint and embedding file.

Layout: magic "VGCK" | u64 little-endian header length | UTF-8 JSON header
| raw tensor payload. The header is a list of entries
{"name", "dtype": "f32", "shape", "offset"} with offsets into the payload.
Round trips are bit-exact.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"VGCK"


def save_checkpoint(tensors: dict[str, np.ndarray], path) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, value in tensors.items():
        if not isinstance(name, str) or not name:
            raise CheckpointError(f"tensor name must be a non-empty string, got {name!r}")
        arr = np.ascontiguousarray(np.asarray(value, dtype="<f4"))
        entries.append({"name": name, "dtype": "f32", "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps(entries).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < 12:
        raise CheckpointError(f"{path}: truncated before header length")
    (header_len,) = struct.unpack("<Q", data[4:12])
    if 12 + header_len > len(data):
        raise CheckpointError(f"{path}: header length {header_len} overruns the file")
    try:
        entries = json.loads(data[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: header is not valid JSON: {exc}") from exc
    if not isinstance(entries, list):
        raise CheckpointError(f"{path}: header must be a JSON list")

    payload = data[12 + header_len:]
    tensors: dict[str, np.ndarray] = {}
    spans = []
    for entry in entries:
        try:
            name, dtype, shape, offset = entry["name"], entry["dtype"], entry["shape"], entry["offset"]
        except (TypeError, KeyError) as exc:
            raise CheckpointError(f"{path}: malformed header entry {entry!r}") from exc
        if name in tensors:
            raise CheckpointError(f"{path}: duplicate tensor name '{name}'")
        if dtype != "f32":
            raise CheckpointError(f"{path}: tensor '{name}' has unsupported dtype '{dtype}'")
        nbytes = 4 * int(np.prod(shape)) if shape else 4
        if offset < 0 or offset + nbytes > len(payload):
            raise CheckpointError(
                f"{path}: tensor '{name}' spans [{offset}, {offset + nbytes}) "
                f"outside the {len(payload)}-byte payload")
        spans.append((offset, offset + nbytes, name))
        arr = np.frombuffer(payload, dtype="<f4", count=nbytes // 4, offset=offset)
        tensors[name] = arr.reshape(shape).astype(np.float32)

    spans.sort()
    for (s0, e0, n0), (s1, _e1, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise CheckpointError(f"{path}: tensors '{n0}' and '{n1}' overlap in the payload")
    return tensors
