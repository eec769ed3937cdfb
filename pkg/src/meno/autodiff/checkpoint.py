"""Parameter checkpoint file: magic ``MENOCKv1``, JSON header with the layer
names/shapes plus free-form metadata, then one little-endian f32 payload per
parameter in header order."""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"MENOCKv1"


class CheckpointFormatError(ValueError):
    pass


def save_checkpoint(path, named_params: dict[str, np.ndarray], meta: dict) -> None:
    entries = [{"name": k, "shape": list(v.shape)} for k, v in named_params.items()]
    header = {"params": entries, "meta": meta}
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for v in named_params.values():
            fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointFormatError(f"{path}: bad checkpoint magic")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        params = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(n * 4)
            if len(buf) != n * 4:
                raise CheckpointFormatError(f"{path}: truncated payload at {entry['name']}")
            params[entry["name"]] = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
    return params, header["meta"]
