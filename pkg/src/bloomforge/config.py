"""Pipeline configuration: one YAML file, sectioned per stage.

Secrets never live in the file; gateway sections name environment variables
instead. Relative paths resolve against the config file's directory. The
config hash is the sha256 of the fully resolved, canonicalized settings, and
stage manifests embed it, so any edit invalidates resume.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any

import yaml

from .ablation import AblationGrid
from .corpus import ChunkPolicy
from .errors import BloomforgeError, ConfigError
from .gateway import GatewayConfig
from .generation import DistillConfig
from .indexing import RetrievalConfig
from .qtypes import DEFAULT_QTYPE_MIX

KNOWN_SECTIONS = (
    "seed",
    "corpus",
    "chunking",
    "retrieval",
    "teacher",
    "judge",
    "embedder",
    "generation",
    "distill",
    "quality",
    "dedup",
    "eval",
    "arena",
    "ablation",
)

_GATEWAY_KEYS = (
    "backend",
    "endpoint",
    "model_name",
    "api_key_env",
    "max_parallel",
    "max_retries",
    "backoff_base",
    "timeout",
    "embed_batch_size",
    "embed_dimension",
    "transcript_path",
    "mock_salt",
)


def _check_keys(section: str, data: dict, allowed: tuple[str, ...]) -> None:
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {sorted(unknown)}")


def _build(section: str, factory):
    """Constructor validation failures are config errors, whatever their type."""
    try:
        return factory()
    except ConfigError:
        raise
    except (BloomforgeError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad '{section}' section: {exc}") from exc


def _gateway(section: str, data: dict) -> GatewayConfig:
    if "api_key" in data:
        raise ConfigError(
            f"'{section}.api_key': secrets belong in environment variables; "
            "set api_key_env to the variable name instead"
        )
    _check_keys(section, data, _GATEWAY_KEYS)
    return _build(section, lambda: GatewayConfig(**data))


@dataclass
class GenerationSettings:
    qtype_mix: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_QTYPE_MIX))
    prefilter: bool = True
    prefilter_threshold: float = 7.0
    max_anchors: int | None = None
    tree_path_prefix: str = ""


@dataclass
class QualitySettings:
    keep_threshold: float = 7.0


@dataclass
class DedupSettings:
    tau: float = 0.90
    test_questions: str = ""
    train_questions: str = ""  # empty: the pipeline's own kept questions


@dataclass
class EvalSettings:
    references: str = ""
    predictions: str = ""


@dataclass
class ArenaSettings:
    questions: str = ""
    predictions_a: str = ""
    predictions_b: str = ""
    judgments_per_question: int = 1
    n_resamples: int = 10000
    ci_level: float = 0.95


@dataclass
class PipelineConfig:
    seed: int
    corpus_manifest: str
    chunking: ChunkPolicy
    retrieval: RetrievalConfig
    retrieval_k1: float
    retrieval_b: float
    embed_dimension: int
    teacher: GatewayConfig
    judge: GatewayConfig
    embedder: GatewayConfig
    generation: GenerationSettings
    distill: DistillConfig
    quality: QualitySettings
    dedup: DedupSettings
    eval: EvalSettings
    arena: ArenaSettings
    ablation: AblationGrid
    config_hash: str
    base_dir: str

    def resolve(self, path: str) -> str:
        if not path:
            return path
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)


def _config_hash(resolved: dict[str, Any]) -> str:
    canonical = json.dumps(resolved, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def load_pipeline_config(path: str) -> PipelineConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"bad YAML in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a mapping, got {type(data).__name__}")
    _check_keys("config", data, KNOWN_SECTIONS)
    base_dir = os.path.dirname(os.path.abspath(path))

    def section(name: str) -> dict:
        value = data.get(name) or {}
        if not isinstance(value, dict):
            raise ConfigError(f"'{name}' must be a mapping")
        return dict(value)

    seed = data.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}")

    corpus = section("corpus")
    _check_keys("corpus", corpus, ("manifest",))

    chunking = section("chunking")
    _check_keys("chunking", chunking, ("target_tokens", "max_tokens", "overlap_tokens"))
    policy = _build("chunking", lambda: ChunkPolicy(**chunking))

    retrieval = section("retrieval")
    _check_keys(
        "retrieval", retrieval, ("alpha", "k_cand", "top_k", "k1", "b", "dimension")
    )
    k1 = retrieval.pop("k1", 1.2)
    b = retrieval.pop("b", 0.75)
    dimension = retrieval.pop("dimension", 1024)
    retrieval_cfg = _build("retrieval", lambda: RetrievalConfig(**retrieval))

    teacher = _gateway("teacher", section("teacher"))
    judge = _gateway("judge", section("judge"))
    embedder_data = section("embedder")
    embedder_data.setdefault("embed_dimension", dimension)
    embedder = _gateway("embedder", embedder_data)
    if embedder.embed_dimension != dimension:
        raise ConfigError(
            f"embedder.embed_dimension={embedder.embed_dimension} disagrees with "
            f"retrieval.dimension={dimension}"
        )

    generation_data = section("generation")
    _check_keys(
        "generation",
        generation_data,
        ("qtype_mix", "prefilter", "prefilter_threshold", "max_anchors", "tree_path_prefix"),
    )
    generation = _build("generation", lambda: GenerationSettings(**generation_data))

    distill_data = section("distill")
    _check_keys("distill", distill_data, ("fan_out", "temperature_schedule"))
    if "temperature_schedule" in distill_data:
        distill_data["temperature_schedule"] = tuple(distill_data["temperature_schedule"])
    distill = _build("distill", lambda: DistillConfig(qtype_mix=generation.qtype_mix, **distill_data))

    quality_data = section("quality")
    _check_keys("quality", quality_data, ("keep_threshold",))
    quality = _build("quality", lambda: QualitySettings(**quality_data))

    dedup_data = section("dedup")
    _check_keys("dedup", dedup_data, ("tau", "test_questions", "train_questions"))
    dedup = _build("dedup", lambda: DedupSettings(**dedup_data))

    eval_data = section("eval")
    _check_keys("eval", eval_data, ("references", "predictions"))
    eval_settings = _build("eval", lambda: EvalSettings(**eval_data))

    arena_data = section("arena")
    _check_keys(
        "arena",
        arena_data,
        (
            "questions",
            "predictions_a",
            "predictions_b",
            "judgments_per_question",
            "n_resamples",
            "ci_level",
        ),
    )
    arena = _build("arena", lambda: ArenaSettings(**arena_data))

    ablation_data = section("ablation")
    _check_keys("ablation", ablation_data, ("alphas", "ks", "samples_per_cell"))
    if "alphas" in ablation_data:
        ablation_data["alphas"] = tuple(float(a) for a in ablation_data["alphas"])
    if "ks" in ablation_data:
        ablation_data["ks"] = tuple(int(k) for k in ablation_data["ks"])
    grid = _build("ablation", lambda: AblationGrid(**ablation_data))

    resolved = {
        "seed": seed,
        "corpus": {"manifest": corpus.get("manifest", "")},
        "chunking": {
            "target_tokens": policy.target_tokens,
            "max_tokens": policy.max_tokens,
            "overlap_tokens": policy.overlap_tokens,
        },
        "retrieval": {
            "alpha": retrieval_cfg.alpha,
            "k_cand": retrieval_cfg.k_cand,
            "top_k": retrieval_cfg.top_k,
            "k1": k1,
            "b": b,
            "dimension": dimension,
        },
        "teacher": _gateway_record(teacher),
        "judge": _gateway_record(judge),
        "embedder": _gateway_record(embedder),
        "generation": {
            "qtype_mix": dict(sorted(generation.qtype_mix.items())),
            "prefilter": generation.prefilter,
            "prefilter_threshold": generation.prefilter_threshold,
            "max_anchors": generation.max_anchors,
            "tree_path_prefix": generation.tree_path_prefix,
        },
        "distill": {
            "fan_out": distill.fan_out,
            "temperature_schedule": list(distill.temperature_schedule),
        },
        "quality": {"keep_threshold": quality.keep_threshold},
        "dedup": {
            "tau": dedup.tau,
            "test_questions": dedup.test_questions,
            "train_questions": dedup.train_questions,
        },
        "eval": {
            "references": eval_settings.references,
            "predictions": eval_settings.predictions,
        },
        "arena": {
            "questions": arena.questions,
            "predictions_a": arena.predictions_a,
            "predictions_b": arena.predictions_b,
            "judgments_per_question": arena.judgments_per_question,
            "n_resamples": arena.n_resamples,
            "ci_level": arena.ci_level,
        },
        "ablation": {
            "alphas": list(grid.alphas),
            "ks": list(grid.ks),
            "samples_per_cell": grid.samples_per_cell,
        },
    }

    cfg = PipelineConfig(
        seed=seed,
        corpus_manifest=corpus.get("manifest", ""),
        chunking=policy,
        retrieval=retrieval_cfg,
        retrieval_k1=k1,
        retrieval_b=b,
        embed_dimension=dimension,
        teacher=teacher,
        judge=judge,
        embedder=embedder,
        generation=generation,
        distill=distill,
        quality=quality,
        dedup=dedup,
        eval=eval_settings,
        arena=arena,
        ablation=grid,
        config_hash=_config_hash(resolved),
        base_dir=base_dir,
    )
    _validate_paths(cfg)
    return cfg


def _gateway_record(gw: GatewayConfig) -> dict:
    return {
        "backend": gw.backend,
        "endpoint": gw.endpoint,
        "model_name": gw.model_name,
        "api_key_env": gw.api_key_env,
        "max_parallel": gw.max_parallel,
        "max_retries": gw.max_retries,
        "backoff_base": gw.backoff_base,
        "timeout": gw.timeout,
        "embed_batch_size": gw.embed_batch_size,
        "embed_dimension": gw.embed_dimension,
        "transcript_path": gw.transcript_path,
        "mock_salt": gw.mock_salt,
    }


def _validate_paths(cfg: PipelineConfig) -> None:
    """Every referenced input path must exist when the config is loaded."""
    referenced = [
        ("corpus.manifest", cfg.corpus_manifest),
        ("dedup.test_questions", cfg.dedup.test_questions),
        ("dedup.train_questions", cfg.dedup.train_questions),
        ("eval.references", cfg.eval.references),
        ("eval.predictions", cfg.eval.predictions),
        ("arena.questions", cfg.arena.questions),
        ("arena.predictions_a", cfg.arena.predictions_a),
        ("arena.predictions_b", cfg.arena.predictions_b),
    ]
    for label, path in referenced:
        if path and not os.path.exists(cfg.resolve(path)):
            raise ConfigError(f"{label} points at a missing file: {cfg.resolve(path)}")
