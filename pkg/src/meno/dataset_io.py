"""On-disk trajectory dataset format.

Layout: 8-byte magic ``MENODSv1``, a uint32 little-endian length prefix, a
UTF-8 JSON header ``{B,T,H,W,dt,domain_size,quantity,split,provenance,
dtype:"f32",endianness:"little"}``, then exactly B*T*H*W little-endian float32
values in (b, t, y, x) order. Round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .field import Quantity, Split, TrajectorySet

MAGIC = b"MENODSv1"


class DatasetFormatError(ValueError):
    """Raised on magic/version, header or payload-length mismatches."""


def write_dataset(ts: TrajectorySet, path) -> None:
    b, t, h, w = ts.shape
    header = {
        "B": b, "T": t, "H": h, "W": w,
        "dt": ts.dt,
        "domain_size": ts.domain_size,
        "quantity": ts.quantity.value,
        "split": ts.split.value,
        "provenance": ts.provenance,
        "dtype": "f32",
        "endianness": "little",
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(ts.trajectories, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(payload)


def read_dataset(path) -> TrajectorySet:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise DatasetFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        size_raw = fh.read(4)
        if len(size_raw) != 4:
            raise DatasetFormatError(f"{path}: truncated header length prefix")
        (hlen,) = struct.unpack("<I", size_raw)
        raw = fh.read(hlen)
        if len(raw) != hlen:
            raise DatasetFormatError(f"{path}: truncated header")
        try:
            header = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DatasetFormatError(f"{path}: unreadable header: {exc}") from exc
        for key in ("B", "T", "H", "W", "dt", "domain_size", "quantity", "split", "dtype"):
            if key not in header:
                raise DatasetFormatError(f"{path}: header missing {key!r}")
        if header["dtype"] != "f32":
            raise DatasetFormatError(f"{path}: unsupported dtype {header['dtype']!r}")
        b, t, h, w = (int(header[k]) for k in ("B", "T", "H", "W"))
        n_expected = b * t * h * w
        payload = fh.read(n_expected * 4)
        if len(payload) != n_expected * 4:
            raise DatasetFormatError(
                f"{path}: payload has {len(payload)} bytes, expected {n_expected * 4}"
            )
        if fh.read(1):
            raise DatasetFormatError(f"{path}: trailing bytes after payload")
    arr = np.frombuffer(payload, dtype="<f4").reshape(b, t, h, w)
    return TrajectorySet(
        arr,
        dt=float(header["dt"]),
        domain_size=float(header["domain_size"]),
        quantity=Quantity(header["quantity"]),
        split=Split(header["split"]),
        provenance=str(header.get("provenance", "")),
    )
