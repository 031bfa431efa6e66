"""Command-line pipeline: ingest through arena, one subcommand per stage.

Every stage reads the shared YAML config, writes flat JSONL plus a run
manifest into --out, and refuses to consume upstream artifacts built under
a different config hash. --resume makes an up-to-date stage a no-op. Exit
codes: 0 success, 1 validation, 2 upstream or external failure, 3 internal
invariant violation.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace

from . import ablation as ab
from . import evaluation as ev
from . import generation as gen
from . import quality as qa
from .config import PipelineConfig, load_pipeline_config
from .corpus import (
    Chunk,
    assign_to_tree,
    coverage_report,
    ingest_document,
    load_corpus_manifest,
    normalize_terminology,
    segment,
)
from .errors import (
    BloomforgeError,
    ConfigError,
    CorpusError,
    GatewayError,
    QualityError,
    StaleManifestError,
)
from .gateway import Gateway
from .indexing import Retriever, build_dense_index, build_sparse_index, load_index, save_index
from .jsonl import dumps, file_sha256, read_jsonl, write_jsonl
from .manifests import (
    build_manifest,
    digest_files,
    load_manifest,
    require_upstream,
    up_to_date,
    write_manifest,
)
from .seeds import derive_seed

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_UPSTREAM = 2
EXIT_INTERNAL = 3

CHUNKS_FILE = "chunks.jsonl"
COVERAGE_FILE = "coverage.json"
INDEX_DIR = "index"
QUESTIONS_FILE = "questions.jsonl"
GENERATE_FAILURES_FILE = "generate_failures.jsonl"
PREFILTER_REPORTS_FILE = "prefilter_reports.jsonl"
SAMPLES_FILE = "samples.jsonl"
DISTILL_FAILURES_FILE = "distill_failures.jsonl"
QUALITY_REPORTS_FILE = "quality_reports.jsonl"
QUARANTINE_FILE = "quarantine.jsonl"
KEPT_FILE = "kept_samples.jsonl"
REJECTED_FILE = "rejected_samples.jsonl"
FILTER_STATS_FILE = "filter_stats.json"
SFT_FILE = "sft.jsonl"
DEDUP_RETAINED_FILE = "dedup_retained.jsonl"
DEDUP_REMOVED_FILE = "dedup_removed.jsonl"
METRICS_JSON_FILE = "metrics.json"
METRICS_TABLE_FILE = "metrics.txt"
ARENA_REPORT_FILE = "arena_report.json"
ARENA_JUDGMENTS_FILE = "arena_judgments.jsonl"


def _write_json(path: str, obj) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, ensure_ascii=False, indent=2)
        fh.write("\n")


def _field(rec: dict, key: str, path: str) -> str:
    value = rec.get(key)
    if value is None:
        raise ConfigError(f"{path}: record is missing '{key}'")
    return str(value)


def _finish_stage(
    stage: str,
    cfg: PipelineConfig,
    out_dir: str,
    inputs: dict[str, str],
    output_files: list[str],
    counts: dict[str, int],
) -> None:
    manifest = build_manifest(
        stage=stage,
        config_hash=cfg.config_hash,
        seed=cfg.seed,
        inputs=inputs,
        outputs=digest_files(out_dir, output_files),
        counts=counts,
    )
    write_manifest(out_dir, manifest)


def _maybe_resume(
    stage: str, cfg: PipelineConfig, out_dir: str, inputs: dict[str, str], resume: bool
) -> bool:
    if not resume:
        return False
    if up_to_date(load_manifest(out_dir, stage), cfg.config_hash, out_dir, inputs):
        print(f"{stage}: up to date in {out_dir}, skipping")
        return True
    return False


def _load_chunks(out_dir: str) -> list[Chunk]:
    return [Chunk.from_record(rec) for rec in read_jsonl(os.path.join(out_dir, CHUNKS_FILE))]


def _build_retriever(cfg: PipelineConfig, out_dir: str) -> Retriever:
    chunks = _load_chunks(out_dir)
    sparse, dense = load_index(os.path.join(out_dir, INDEX_DIR))
    return Retriever(chunks, sparse, dense, Gateway(cfg.embedder))


def _index_inputs(out_dir: str) -> dict[str, str]:
    return {CHUNKS_FILE: file_sha256(os.path.join(out_dir, CHUNKS_FILE))}


def _retriever_inputs(out_dir: str) -> dict[str, str]:
    inputs = _index_inputs(out_dir)
    for name in ("meta.json", "postings.jsonl", "vectors.jsonl"):
        rel = os.path.join(INDEX_DIR, name)
        inputs[rel] = file_sha256(os.path.join(out_dir, rel))
    return inputs


# --- stages ------------------------------------------------------------------


def cmd_ingest(args, cfg: PipelineConfig) -> int:
    if not cfg.corpus_manifest:
        raise ConfigError("config has no corpus.manifest")
    manifest_path = cfg.resolve(cfg.corpus_manifest)
    corpus = load_corpus_manifest(manifest_path)
    inputs = {cfg.corpus_manifest: file_sha256(manifest_path)}
    for spec in corpus.documents:
        inputs[spec.path] = file_sha256(corpus.resolve(spec.path))
    if _maybe_resume("ingest", cfg, args.out, inputs, args.resume):
        return EXIT_OK
    chunks: list[Chunk] = []
    for spec in corpus.documents:
        with open(corpus.resolve(spec.path), "r", encoding="utf-8") as fh:
            raw = fh.read()
        if corpus.glossary:
            raw = normalize_terminology(raw, corpus.glossary)
        doc = ingest_document(
            raw, title=spec.title, source_path=spec.path, tree_path=spec.tree_path
        )
        chunks.extend(segment(doc, cfg.chunking))
    assign_to_tree(corpus.tree, chunks)
    coverage = coverage_report(corpus.tree)
    write_jsonl(os.path.join(args.out, CHUNKS_FILE), (c.to_record() for c in chunks))
    _write_json(os.path.join(args.out, COVERAGE_FILE), coverage.to_record())
    _finish_stage(
        "ingest",
        cfg,
        args.out,
        inputs,
        [CHUNKS_FILE, COVERAGE_FILE],
        {
            "documents": len(corpus.documents),
            "chunks": len(chunks),
            "coverage_gaps": len(coverage.gaps),
        },
    )
    print(
        f"ingest: {len(chunks)} chunks from {len(corpus.documents)} documents, "
        f"{len(coverage.gaps)} tree gaps"
    )
    return EXIT_OK


def cmd_index(args, cfg: PipelineConfig) -> int:
    require_upstream(args.out, "ingest", cfg.config_hash)
    inputs = _index_inputs(args.out)
    if _maybe_resume("index", cfg, args.out, inputs, args.resume):
        return EXIT_OK
    chunks = _load_chunks(args.out)
    sparse = build_sparse_index(chunks, k1=cfg.retrieval_k1, b=cfg.retrieval_b)
    vectors = Gateway(cfg.embedder).embed([c.text for c in chunks])
    dense = build_dense_index([c.id for c in chunks], vectors, dimension=cfg.embed_dimension)
    save_index(os.path.join(args.out, INDEX_DIR), sparse, dense)
    index_files = [os.path.join(INDEX_DIR, n) for n in ("meta.json", "postings.jsonl", "vectors.jsonl")]
    _finish_stage(
        "index",
        cfg,
        args.out,
        inputs,
        index_files,
        {"chunks": len(chunks), "vocabulary": sparse.vocab_size},
    )
    print(f"index: {len(chunks)} chunks, {sparse.vocab_size} vocabulary terms")
    return EXIT_OK


def cmd_generate(args, cfg: PipelineConfig) -> int:
    require_upstream(args.out, "ingest", cfg.config_hash)
    require_upstream(args.out, "index", cfg.config_hash)
    inputs = _retriever_inputs(args.out)
    if _maybe_resume("generate", cfg, args.out, inputs, args.resume):
        return EXIT_OK
    retriever = _build_retriever(cfg, args.out)
    teacher = Gateway(cfg.teacher)
    judge = Gateway(cfg.judge) if cfg.generation.prefilter else None
    anchors = [
        c
        for c in _load_chunks(args.out)
        if c.tree_path.startswith(cfg.generation.tree_path_prefix)
    ]
    if cfg.generation.max_anchors is not None:
        anchors = anchors[: cfg.generation.max_anchors]
    if not anchors:
        raise ConfigError("no anchor chunks match generation.tree_path_prefix")
    drafts: list[gen.QuestionDraft] = []
    failures: list[dict] = []
    reports: list[dict] = []
    for anchor in anchors:
        qtype = gen.sample_qtype(
            cfg.generation.qtype_mix, derive_seed(cfg.seed, "qtype", anchor.id)
        )
        ctx = gen.assemble_context(anchor, retriever, cfg.retrieval)
        try:
            draft = gen.generate_question(
                qtype, ctx, teacher, seed=derive_seed(cfg.seed, "question", anchor.id)
            )
        except gen.GenerationError as exc:
            failures.append(
                {
                    "anchor_chunk_id": anchor.id,
                    "qtype": qtype,
                    "kind": "generation",
                    "reason": str(exc),
                }
            )
            continue
        if judge is not None:
            try:
                report = qa.score_answer(
                    draft.question_id,
                    draft.question,
                    draft.answer,
                    judge,
                    seed=derive_seed(cfg.seed, "prefilter", draft.question_id),
                )
            except qa.ScoringError as exc:
                failures.append(
                    {
                        "anchor_chunk_id": anchor.id,
                        "question_id": draft.question_id,
                        "qtype": draft.qtype,
                        "kind": "prefilter_error",
                        "reason": str(exc),
                    }
                )
                continue
            reports.append(report.to_record())
            if report.composite < cfg.generation.prefilter_threshold:
                failures.append(
                    {
                        "anchor_chunk_id": anchor.id,
                        "question_id": draft.question_id,
                        "qtype": draft.qtype,
                        "kind": "prefilter_reject",
                        "reason": f"composite {report.composite:g} below "
                        f"{cfg.generation.prefilter_threshold:g}",
                    }
                )
                continue
        drafts.append(draft)
    write_jsonl(os.path.join(args.out, QUESTIONS_FILE), (d.to_record() for d in drafts))
    write_jsonl(os.path.join(args.out, GENERATE_FAILURES_FILE), failures)
    outputs = [QUESTIONS_FILE, GENERATE_FAILURES_FILE]
    if judge is not None:
        write_jsonl(os.path.join(args.out, PREFILTER_REPORTS_FILE), reports)
        outputs.append(PREFILTER_REPORTS_FILE)
    _finish_stage(
        "generate",
        cfg,
        args.out,
        inputs,
        outputs,
        {"anchors": len(anchors), "questions": len(drafts), "discarded": len(failures)},
    )
    print(
        f"generate: {len(drafts)} questions from {len(anchors)} anchors "
        f"({len(failures)} discarded)"
    )
    return EXIT_OK


def cmd_distill(args, cfg: PipelineConfig) -> int:
    require_upstream(args.out, "generate", cfg.config_hash)
    inputs = {QUESTIONS_FILE: file_sha256(os.path.join(args.out, QUESTIONS_FILE))}
    if _maybe_resume("distill", cfg, args.out, inputs, args.resume):
        return EXIT_OK
    drafts = [
        gen.QuestionDraft.from_record(rec)
        for rec in read_jsonl(os.path.join(args.out, QUESTIONS_FILE))
    ]
    teacher = Gateway(cfg.teacher)
    samples: list[dict] = []
    failures: list[dict] = []
    for draft in drafts:
        result = gen.distill(draft, cfg.distill, teacher, seed=cfg.seed)
        samples.extend(s.to_record() for s in result.samples)
        failures.extend(f.to_record() for f in result.failures)
    write_jsonl(os.path.join(args.out, SAMPLES_FILE), samples)
    write_jsonl(os.path.join(args.out, DISTILL_FAILURES_FILE), failures)
    _finish_stage(
        "distill",
        cfg,
        args.out,
        inputs,
        [SAMPLES_FILE, DISTILL_FAILURES_FILE],
        {
            "questions": len(drafts),
            "samples": len(samples),
            "failures": len(failures),
            "fan_out": cfg.distill.fan_out,
        },
    )
    print(
        f"distill: {len(samples)} samples from {len(drafts)} questions x "
        f"{cfg.distill.fan_out} ({len(failures)} failures)"
    )
    return EXIT_OK


def cmd_score(args, cfg: PipelineConfig) -> int:
    require_upstream(args.out, "distill", cfg.config_hash)
    inputs = {SAMPLES_FILE: file_sha256(os.path.join(args.out, SAMPLES_FILE))}
    if _maybe_resume("score", cfg, args.out, inputs, args.resume):
        return EXIT_OK
    samples = [
        gen.CandidateSample.from_record(rec)
        for rec in read_jsonl(os.path.join(args.out, SAMPLES_FILE))
    ]
    judge = Gateway(cfg.judge)
    reports, quarantined = qa.score_samples(samples, judge, seed=cfg.seed)
    write_jsonl(
        os.path.join(args.out, QUALITY_REPORTS_FILE), (r.to_record() for r in reports)
    )
    write_jsonl(
        os.path.join(args.out, QUARANTINE_FILE), (q.to_record() for q in quarantined)
    )
    _finish_stage(
        "score",
        cfg,
        args.out,
        inputs,
        [QUALITY_REPORTS_FILE, QUARANTINE_FILE],
        {"samples": len(samples), "scored": len(reports), "quarantined": len(quarantined)},
    )
    print(f"score: {len(reports)} scored, {len(quarantined)} quarantined")
    return EXIT_OK


def cmd_filter(args, cfg: PipelineConfig) -> int:
    require_upstream(args.out, "score", cfg.config_hash)
    inputs = {
        SAMPLES_FILE: file_sha256(os.path.join(args.out, SAMPLES_FILE)),
        QUALITY_REPORTS_FILE: file_sha256(os.path.join(args.out, QUALITY_REPORTS_FILE)),
    }
    if _maybe_resume("filter", cfg, args.out, inputs, args.resume):
        return EXIT_OK
    samples = [
        gen.CandidateSample.from_record(rec)
        for rec in read_jsonl(os.path.join(args.out, SAMPLES_FILE))
    ]
    reports = [
        qa.QualityReport.from_record(rec)
        for rec in read_jsonl(os.path.join(args.out, QUALITY_REPORTS_FILE))
    ]
    scored_ids = {r.sample_id for r in reports}
    scorable = [s for s in samples if s.sample_id in scored_ids]
    result = qa.filter_samples(scorable, reports, cfg.quality.keep_threshold)
    write_jsonl(
        os.path.join(args.out, KEPT_FILE), (s.to_record() for s in result.kept)
    )
    write_jsonl(
        os.path.join(args.out, REJECTED_FILE), (s.to_record() for s in result.rejected)
    )
    _write_json(os.path.join(args.out, FILTER_STATS_FILE), result.stats.to_record())
    write_jsonl(
        os.path.join(args.out, SFT_FILE), (gen.to_sft_record(s) for s in result.kept)
    )
    _finish_stage(
        "filter",
        cfg,
        args.out,
        inputs,
        [KEPT_FILE, REJECTED_FILE, FILTER_STATS_FILE, SFT_FILE],
        {
            "kept": len(result.kept),
            "rejected": len(result.rejected),
            "unscored": len(samples) - len(scorable),
        },
    )
    print(
        f"filter: kept {len(result.kept)} of {len(scorable)} scored samples "
        f"at threshold {cfg.quality.keep_threshold:g}"
    )
    return EXIT_OK


def _question_items(path: str) -> list[tuple[str, str]]:
    items: list[tuple[str, str]] = []
    for rec in read_jsonl(path):
        qid = rec.get("question_id") or rec.get("id")
        text = rec.get("question") or rec.get("text")
        if not qid or not text:
            raise ConfigError(f"{path}: records need question_id/id and question/text")
        items.append((str(qid), str(text)))
    if not items:
        raise ConfigError(f"{path}: no records")
    return items


def cmd_dedup(args, cfg: PipelineConfig) -> int:
    if not cfg.dedup.test_questions:
        raise ConfigError("config has no dedup.test_questions")
    test_path = cfg.resolve(cfg.dedup.test_questions)
    if cfg.dedup.train_questions:
        train_path = cfg.resolve(cfg.dedup.train_questions)
        train_key = cfg.dedup.train_questions
    else:
        require_upstream(args.out, "generate", cfg.config_hash)
        train_path = os.path.join(args.out, QUESTIONS_FILE)
        train_key = QUESTIONS_FILE
    inputs = {
        cfg.dedup.test_questions: file_sha256(test_path),
        train_key: file_sha256(train_path),
    }
    if _maybe_resume("dedup", cfg, args.out, inputs, args.resume):
        return EXIT_OK
    test_items = _question_items(test_path)
    train_items = _question_items(train_path)
    dedup_cfg = qa.DedupConfig(tau=cfg.dedup.tau, embedder=Gateway(cfg.embedder))
    result = qa.dedup_test_against_train(test_items, train_items, dedup_cfg)
    write_jsonl(
        os.path.join(args.out, DEDUP_RETAINED_FILE),
        ({"question_id": qid, "question": text} for qid, text in result.retained),
    )
    write_jsonl(
        os.path.join(args.out, DEDUP_REMOVED_FILE),
        (r.to_record() for r in result.removed),
    )
    _finish_stage(
        "dedup",
        cfg,
        args.out,
        inputs,
        [DEDUP_RETAINED_FILE, DEDUP_REMOVED_FILE],
        {
            "test": len(test_items),
            "train": len(train_items),
            "retained": len(result.retained),
            "removed": len(result.removed),
        },
    )
    print(
        f"dedup: removed {len(result.removed)} of {len(test_items)} test questions "
        f"at tau {cfg.dedup.tau:g}"
    )
    return EXIT_OK


def cmd_eval(args, cfg: PipelineConfig) -> int:
    if not cfg.eval.references or not cfg.eval.predictions:
        raise ConfigError("config needs eval.references and eval.predictions")
    ref_path = cfg.resolve(cfg.eval.references)
    pred_path = cfg.resolve(cfg.eval.predictions)
    inputs = {
        cfg.eval.references: file_sha256(ref_path),
        cfg.eval.predictions: file_sha256(pred_path),
    }
    if _maybe_resume("eval", cfg, args.out, inputs, args.resume):
        return EXIT_OK
    references = {
        _field(rec, "question_id", ref_path): _field(rec, "reference", ref_path)
        for rec in read_jsonl(ref_path)
    }
    pairs: list[tuple[str, str, str]] = []
    seen: set[str] = set()
    for rec in read_jsonl(pred_path):
        qid = _field(rec, "question_id", pred_path)
        if qid not in references:
            raise ConfigError(f"prediction {qid} has no reference")
        if qid in seen:
            raise ConfigError(f"{pred_path}: duplicate prediction for {qid}")
        seen.add(qid)
        pairs.append((qid, references[qid], _field(rec, "prediction", pred_path)))
    if not pairs:
        raise ConfigError("no prediction records to evaluate")
    report = ev.evaluate_pairs(pairs)
    _write_json(os.path.join(args.out, METRICS_JSON_FILE), report.to_record())
    table = ev.format_report_table(report)
    with open(os.path.join(args.out, METRICS_TABLE_FILE), "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    _finish_stage(
        "eval",
        cfg,
        args.out,
        inputs,
        [METRICS_JSON_FILE, METRICS_TABLE_FILE],
        {"samples": len(pairs), "extraction_errors": report.extraction_errors},
    )
    print(table)
    return EXIT_OK


def cmd_arena(args, cfg: PipelineConfig) -> int:
    for label, value in (
        ("arena.questions", cfg.arena.questions),
        ("arena.predictions_a", cfg.arena.predictions_a),
        ("arena.predictions_b", cfg.arena.predictions_b),
    ):
        if not value:
            raise ConfigError(f"config needs {label}")
    q_path = cfg.resolve(cfg.arena.questions)
    a_path = cfg.resolve(cfg.arena.predictions_a)
    b_path = cfg.resolve(cfg.arena.predictions_b)
    inputs = {
        cfg.arena.questions: file_sha256(q_path),
        cfg.arena.predictions_a: file_sha256(a_path),
        cfg.arena.predictions_b: file_sha256(b_path),
    }
    if _maybe_resume("arena", cfg, args.out, inputs, args.resume):
        return EXIT_OK
    questions = {}
    for r in read_jsonl(q_path):
        text = r.get("question") or r.get("text")
        if text is None:
            raise ConfigError(f"{q_path}: record is missing 'question'")
        questions[_field(r, "question_id", q_path)] = str(text)
    preds_a = {
        _field(r, "question_id", a_path): _field(r, "prediction", a_path)
        for r in read_jsonl(a_path)
    }
    preds_b = {
        _field(r, "question_id", b_path): _field(r, "prediction", b_path)
        for r in read_jsonl(b_path)
    }
    pairs = []
    for qid, question in questions.items():
        if qid not in preds_a or qid not in preds_b:
            raise ConfigError(f"question {qid} lacks a prediction on one side")
        pairs.append((qid, question, preds_a[qid], preds_b[qid]))
    if not pairs:
        raise ConfigError("no arena questions")
    arena_cfg = ev.ArenaConfig(
        seed=cfg.seed,
        judgments_per_question=cfg.arena.judgments_per_question,
        n_resamples=cfg.arena.n_resamples,
        ci_level=cfg.arena.ci_level,
    )
    report, judgments = ev.arena_run(pairs, Gateway(cfg.judge), arena_cfg)
    _write_json(os.path.join(args.out, ARENA_REPORT_FILE), report.to_record())
    write_jsonl(
        os.path.join(args.out, ARENA_JUDGMENTS_FILE), (j.to_record() for j in judgments)
    )
    _finish_stage(
        "arena",
        cfg,
        args.out,
        inputs,
        [ARENA_REPORT_FILE, ARENA_JUDGMENTS_FILE],
        {
            "comparisons": report.n_comparisons,
            "invalid": report.n_invalid,
        },
    )
    print(
        f"arena: win rate {report.win_rate:.4f} "
        f"[{report.ci_lower:.4f}, {report.ci_upper:.4f}] over {report.n_comparisons}"
    )
    return EXIT_OK


def _parse_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"bad numeric list: {text!r}") from exc


def _parse_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"bad integer list: {text!r}") from exc


def cmd_ablate(args, cfg: PipelineConfig) -> int:
    require_upstream(args.out, "ingest", cfg.config_hash)
    require_upstream(args.out, "index", cfg.config_hash)
    grid = cfg.ablation
    if args.alphas:
        grid = replace(grid, alphas=_parse_floats(args.alphas))
    if args.ks:
        grid = replace(grid, ks=_parse_ints(args.ks))
    if args.samples_per_cell:
        grid = replace(grid, samples_per_cell=args.samples_per_cell)
    inputs = _retriever_inputs(args.out)
    if _maybe_resume("ablate", cfg, args.out, inputs, args.resume):
        return EXIT_OK
    retriever = _build_retriever(cfg, args.out)
    result = ab.run_ablation(
        grid,
        retriever,
        Gateway(cfg.teacher),
        Gateway(cfg.judge),
        seed=cfg.seed,
        base_cfg=cfg.retrieval,
        qtype_mix=cfg.generation.qtype_mix,
    )
    ab.emit_artifacts(result, grid, args.out)
    _finish_stage(
        "ablate",
        cfg,
        args.out,
        inputs,
        ["ablation.csv", "ablation.svg", "ablation_summary.json"],
        {
            "cells": len(grid.cells()),
            "scored": sum(result.cell_counts.values()),
            "failures": result.failures,
        },
    )
    alpha, k = result.argmax_cell
    print(
        f"ablate: best cell alpha={alpha:.2f}, K={k} "
        f"(mean {result.cell_means[result.argmax_cell]:.2f})"
    )
    return EXIT_OK


def cmd_verify(args, cfg: PipelineConfig) -> int:
    """Cross-artifact referential integrity over whatever stages have run."""
    out = args.out
    problems: list[str] = []
    checked = 0

    def exists(name: str) -> bool:
        return os.path.exists(os.path.join(out, name))

    chunk_ids: set[str] = set()
    if exists(CHUNKS_FILE):
        checked += 1
        for rec in read_jsonl(os.path.join(out, CHUNKS_FILE)):
            if rec["id"] in chunk_ids:
                problems.append(f"duplicate chunk id {rec['id']}")
            chunk_ids.add(rec["id"])
    question_ids: set[str] = set()
    if exists(QUESTIONS_FILE):
        checked += 1
        for rec in read_jsonl(os.path.join(out, QUESTIONS_FILE)):
            question_ids.add(rec["question_id"])
            if chunk_ids:
                for cid in [rec["anchor_chunk_id"], *rec["support_chunk_ids"]]:
                    if cid not in chunk_ids:
                        problems.append(
                            f"question {rec['question_id']} references unknown chunk {cid}"
                        )
    sample_ids: set[str] = set()
    if exists(SAMPLES_FILE):
        checked += 1
        for rec in read_jsonl(os.path.join(out, SAMPLES_FILE)):
            if rec["sample_id"] in sample_ids:
                problems.append(f"duplicate sample id {rec['sample_id']}")
            sample_ids.add(rec["sample_id"])
            if question_ids and rec["question_id"] not in question_ids:
                problems.append(
                    f"sample {rec['sample_id']} references unknown question "
                    f"{rec['question_id']}"
                )
    if exists(QUALITY_REPORTS_FILE):
        checked += 1
        for rec in read_jsonl(os.path.join(out, QUALITY_REPORTS_FILE)):
            if sample_ids and rec["sample_id"] not in sample_ids:
                problems.append(f"report for unknown sample {rec['sample_id']}")
    if exists(SFT_FILE):
        checked += 1
        for rec in read_jsonl(os.path.join(out, SFT_FILE)):
            meta = rec.get("meta", {})
            if sample_ids and meta.get("sample_id") not in sample_ids:
                problems.append(f"sft record for unknown sample {meta.get('sample_id')}")
            messages = rec.get("messages", [])
            if [m.get("role") for m in messages] != ["user", "assistant"]:
                problems.append(
                    f"sft record {meta.get('sample_id')} has bad message roles"
                )
            else:
                try:
                    ev.extract_answer(messages[1]["content"])
                except ev.ExtractionError as exc:
                    problems.append(
                        f"sft record {meta.get('sample_id')} assistant turn: {exc}"
                    )
    stages = [
        s
        for s in ("ingest", "index", "generate", "distill", "score", "filter")
        if load_manifest(out, s) is not None
    ]
    for stage in stages:
        manifest = load_manifest(out, stage)
        if manifest.config_hash != cfg.config_hash:
            problems.append(
                f"manifest {stage} built under config {manifest.config_hash}, "
                f"current is {cfg.config_hash}"
            )
        for rel, digest in manifest.outputs.items():
            path = os.path.join(out, rel)
            if not os.path.exists(path):
                problems.append(f"manifest {stage} output missing: {rel}")
            elif file_sha256(path) != digest:
                problems.append(f"manifest {stage} output digest drifted: {rel}")
    if checked == 0 and not stages:
        raise ConfigError(f"nothing to verify in {out}")
    if problems:
        for problem in problems:
            print(f"verify: {problem}", file=sys.stderr)
        raise BloomforgeError(f"verify found {len(problems)} integrity violations")
    print(f"verify: OK ({checked} artifact files, {len(stages)} manifests)")
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "index": cmd_index,
    "generate": cmd_generate,
    "distill": cmd_distill,
    "score": cmd_score,
    "filter": cmd_filter,
    "dedup": cmd_dedup,
    "eval": cmd_eval,
    "arena": cmd_arena,
    "ablate": cmd_ablate,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bloomforge",
        description="Corpus to cognitively layered SFT data, with evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", required=True, help="pipeline YAML config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument(
            "--resume",
            action="store_true",
            help="skip when outputs are already up to date",
        )
        if name == "ablate":
            p.add_argument("--alphas", default="", help="comma-separated fusion weights")
            p.add_argument("--ks", default="", help="comma-separated support counts")
            p.add_argument(
                "--samples-per-cell", type=int, default=0, help="questions per grid cell"
            )
    return parser


def replace_seed(cfg: PipelineConfig, seed: int) -> PipelineConfig:
    """Seed overrides participate in the config hash, so resume stays honest."""
    new_hash = hashlib.sha256(
        f"{cfg.config_hash}|seed={seed}".encode("utf-8")
    ).hexdigest()[:16]
    return replace(cfg, seed=seed, config_hash=new_hash)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_pipeline_config(args.config)
        if args.seed is not None and args.seed != cfg.seed:
            cfg = replace_seed(cfg, args.seed)
        os.makedirs(args.out, exist_ok=True)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, CorpusError, QualityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: missing upstream artifact: {exc}", file=sys.stderr)
        return EXIT_UPSTREAM
    except (StaleManifestError, GatewayError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UPSTREAM
    except BloomforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    raise SystemExit(main())
