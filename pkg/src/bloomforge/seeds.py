"""Deterministic seed derivation.

One global seed fans out into independent per-stage, per-item streams. The
child seed is the first 8 bytes, big-endian, of
sha256("<global>/<label>/<label>/...") with every label rendered via str().
Stable across platforms and Python versions, unlike hash().
"""
from __future__ import annotations

import hashlib


def derive_seed(global_seed: int, *labels: object) -> int:
    """Derive a 64-bit child seed from the global seed and a label path."""
    joined = "/".join([str(global_seed), *(str(part) for part in labels)])
    digest = hashlib.sha256(joined.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
