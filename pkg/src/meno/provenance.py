"""Provenance digests tying datasets, checkpoints and reports together."""

from __future__ import annotations

import dataclasses
import hashlib
import json


def config_digest(obj) -> str:
    """Stable 12-hex digest of a config dataclass or plain dict."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        payload = dataclasses.asdict(obj)
    else:
        payload = obj
    raw = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(raw).hexdigest()[:12]


def make_provenance(kind: str, obj) -> str:
    return f"{kind}:{config_digest(obj)}"


def provenance_base(provenance: str) -> str:
    """The solver digest part, stable under derived-view suffixes."""
    return provenance.split("|", 1)[0]
