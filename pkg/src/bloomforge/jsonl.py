"""JSON-lines I/O with stable key order, plus file digests.

Every stage output is flat JSONL. Keys are sorted and floats use repr so the
same records always serialize to the same bytes.
"""
from __future__ import annotations

import hashlib
import json
import os
from typing import Any, Iterable, Iterator


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def canonical_hash(obj: Any) -> str:
    """sha256 hex of the canonical JSON rendering of obj."""
    return hashlib.sha256(dumps(obj).encode("utf-8")).hexdigest()


def write_jsonl(path: str, records: Iterable[Any]) -> int:
    """Write records to path, one JSON object per line. Returns the count."""
    count = 0
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(dumps(record))
            fh.write("\n")
            count += 1
    return count


def read_jsonl(path: str) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()
