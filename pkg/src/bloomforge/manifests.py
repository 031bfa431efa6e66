"""Stage run manifests: config hash, input/output digests, counts, timestamp.

Each pipeline stage writes one manifest next to its outputs. Downstream
stages refuse to consume artifacts whose manifest was produced under a
different config hash. Timestamps honor SOURCE_DATE_EPOCH so a pinned
environment reproduces manifests byte for byte.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone

from .errors import StaleManifestError
from .jsonl import file_sha256

MANIFEST_DIR = "manifests"


def now_iso() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        moment = datetime.fromtimestamp(int(epoch), tz=timezone.utc)
    else:
        moment = datetime.now(tz=timezone.utc)
    return moment.strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class RunManifest:
    run_id: str
    stage: str
    config_hash: str
    seed: int
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    created_at: str = ""

    def to_record(self) -> dict:
        return {
            "run_id": self.run_id,
            "stage": self.stage,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
            "counts": dict(sorted(self.counts.items())),
            "created_at": self.created_at,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "RunManifest":
        return cls(
            run_id=rec["run_id"],
            stage=rec["stage"],
            config_hash=rec["config_hash"],
            seed=rec.get("seed", 0),
            inputs=rec.get("inputs", {}),
            outputs=rec.get("outputs", {}),
            counts=rec.get("counts", {}),
            created_at=rec.get("created_at", ""),
        )


def make_run_id(config_hash: str, stage: str, seed: int) -> str:
    digest = hashlib.sha256(f"{config_hash}|{stage}|{seed}".encode("utf-8"))
    return digest.hexdigest()[:12]


def build_manifest(
    stage: str,
    config_hash: str,
    seed: int,
    inputs: dict[str, str],
    outputs: dict[str, str],
    counts: dict[str, int],
) -> RunManifest:
    return RunManifest(
        run_id=make_run_id(config_hash, stage, seed),
        stage=stage,
        config_hash=config_hash,
        seed=seed,
        inputs=inputs,
        outputs=outputs,
        counts=counts,
        created_at=now_iso(),
    )


def manifest_path(out_dir: str, stage: str) -> str:
    return os.path.join(out_dir, MANIFEST_DIR, f"{stage}.json")


def write_manifest(out_dir: str, manifest: RunManifest) -> str:
    path = manifest_path(out_dir, manifest.stage)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest.to_record(), fh, sort_keys=True, ensure_ascii=False, indent=2)
        fh.write("\n")
    return path


def load_manifest(out_dir: str, stage: str) -> RunManifest | None:
    path = manifest_path(out_dir, stage)
    if not os.path.exists(path):
        return None
    with open(path, "r", encoding="utf-8") as fh:
        return RunManifest.from_record(json.load(fh))


def require_upstream(out_dir: str, stage: str, config_hash: str) -> RunManifest:
    """Load an upstream stage manifest, refusing stale or missing ones."""
    manifest = load_manifest(out_dir, stage)
    if manifest is None:
        raise StaleManifestError(
            f"stage '{stage}' has not run in {out_dir}; run it first"
        )
    if manifest.config_hash != config_hash:
        raise StaleManifestError(
            f"stage '{stage}' artifacts are stale: built with config "
            f"{manifest.config_hash}, current config is {config_hash}; rerun it"
        )
    return manifest


def digest_files(out_dir: str, rel_paths: list[str]) -> dict[str, str]:
    """sha256 per out-dir-relative path; keys stay relative for portability."""
    return {rel: file_sha256(os.path.join(out_dir, rel)) for rel in rel_paths}


def up_to_date(
    manifest: RunManifest | None, config_hash: str, out_dir: str, input_digests: dict[str, str]
) -> bool:
    """True when a previous run matches config, inputs, and outputs on disk."""
    if manifest is None or manifest.config_hash != config_hash:
        return False
    if manifest.inputs != input_digests:
        return False
    for rel, digest in manifest.outputs.items():
        path = os.path.join(out_dir, rel)
        if not os.path.exists(path) or file_sha256(path) != digest:
            return False
    return True
