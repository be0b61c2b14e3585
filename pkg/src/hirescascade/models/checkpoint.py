"""Binary tensor container.

Layout: 8-byte magic ``CSKT0001``, an unsigned 64-bit little-endian header
length, a UTF-8 JSON header, then raw little-endian float64 tensor data.
The header lists every tensor's name, shape and byte offset (relative to
the start of the data section) plus a free-form ``meta`` object.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

MAGIC = b"CSKT0001"


class CheckpointError(ValueError):
    pass


def dumps(tensors: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        raw = arr.tobytes()
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True, separators=(",", ":"))
    hb = header.encode("utf-8")
    return MAGIC + struct.pack("<Q", len(hb)) + hb + b"".join(chunks)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if blob[:8] != MAGIC:
        raise CheckpointError("bad magic: not a tensor checkpoint")
    if len(blob) < 16:
        raise CheckpointError("truncated header")
    (n,) = struct.unpack("<Q", blob[8:16])
    try:
        header = json.loads(blob[16 : 16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header: {exc}") from exc
    data = memoryview(blob)[16 + n :]
    tensors = {}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        start, stop = e["offset"], e["offset"] + 8 * count
        if stop > len(data):
            raise CheckpointError(f"tensor {e['name']!r} runs past end of file")
        tensors[e["name"]] = np.frombuffer(data[start:stop], dtype="<f8").reshape(e["shape"]).astype(np.float64)
    return tensors, header.get("meta", {})


def save(path: str | os.PathLike, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(tensors, meta))


def load(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        return loads(fh.read())
