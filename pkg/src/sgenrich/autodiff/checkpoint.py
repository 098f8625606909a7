"""Named-tensor checkpoint container.

Layout::

    b"SGCKPT01" | uint64 LE manifest length | manifest JSON | tensor bytes

The manifest maps each tensor name to its shape and byte offset into the
tensor section; values are stored as little-endian float32.  Arbitrary
JSON-serialisable metadata rides along under ``"meta"``.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

MAGIC = b"SGCKPT01"
_STORE = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def save(path, tensors, meta=None):
    entries = {}
    blobs = []
    offset = 0
    for name in tensors:
        arr = np.asarray(tensors[name], dtype=_STORE, order="C")
        entries[name] = {"shape": list(arr.shape), "offset": offset}
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    manifest = json.dumps({"format": 1, "dtype": "<f4", "tensors": entries, "meta": meta or {}},
                          sort_keys=True).encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(manifest)))
            fh.write(manifest)
            for blob in blobs:
                fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_manifest(path):
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (length,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(length).decode("utf-8")), len(MAGIC) + 8 + length


def load(path):
    """Return ``(tensors, meta)``; tensors are float32 arrays keyed by name."""
    manifest, start = read_manifest(path)
    with open(path, "rb") as fh:
        fh.seek(start)
        payload = fh.read()
    tensors = {}
    for name, entry in manifest["tensors"].items():
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = entry["offset"] + count * _STORE.itemsize
        if end > len(payload):
            raise CheckpointError(f"{path}: tensor {name!r} runs past end of file")
        tensors[name] = np.frombuffer(payload, dtype=_STORE, count=count, offset=entry["offset"]).reshape(shape).copy()
    return tensors, manifest.get("meta", {})
