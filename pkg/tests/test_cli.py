from __future__ import annotations

import json
import os

import pytest
import yaml

from bloomforge import cli
from bloomforge.jsonl import read_jsonl, write_jsonl

DOC_A = """# Radar Tracking

Radar tracking estimates orbital state from range and doppler measurements.
The filter propagates covariance between passes and fuses fresh detections
into the running track before the next station handoff.

## Bias Handling

Sensor bias states absorb systematic range errors over long arcs. Calibration
passes over surveyed targets keep the bias estimates bounded and observable
even when the geometry is poor.
"""

DOC_B = """# Optical Correlation

Optical telescopes report angles only, so correlation leans on propagated
catalog states. An uncorrelated track spawns a new candidate object after
three consistent follow-up observations.

Admission control matters: a burst of false detections from moonlight glare
can flood the correlator queue and starve the scheduler of real work.
"""


def make_workspace(root, seed: int = 11, extra: dict | None = None) -> str:
    (root / "a.md").write_text(DOC_A, encoding="utf-8")
    (root / "b.md").write_text(DOC_B, encoding="utf-8")
    (root / "corpus.yaml").write_text(
        "\n".join(
            [
                "tree:",
                "  - name: ops",
                "    children:",
                "      - name: tracking",
                "        children:",
                "          - name: radar",
                "          - name: optical",
                "documents:",
                "  - path: a.md",
                "    title: Radar Tracking",
                "    tree_path: ops/tracking/radar",
                "  - path: b.md",
                "    title: Optical Correlation",
                "    tree_path: ops/tracking/optical",
            ]
        )
        + "\n",
        encoding="utf-8",
    )
    data = {
        "seed": seed,
        "corpus": {"manifest": "corpus.yaml"},
        "chunking": {"target_tokens": 40, "max_tokens": 64, "overlap_tokens": 8},
        "retrieval": {"alpha": 0.5, "k_cand": 8, "top_k": 2, "dimension": 64},
        "generation": {"prefilter": True, "prefilter_threshold": 0.0},
        "distill": {"fan_out": 4},
        "quality": {"keep_threshold": 5.0},
    }
    if extra:
        data.update(extra)
    path = root / "config.yaml"
    path.write_text(yaml.safe_dump(data, sort_keys=True), encoding="utf-8")
    return str(path)


def run(*argv) -> int:
    return cli.main([str(a) for a in argv])


def run_pipeline(config: str, out: str) -> None:
    for stage in ("ingest", "index", "generate", "distill", "score", "filter"):
        code = run(stage, "--config", config, "--out", out)
        assert code == 0, f"stage {stage} exited {code}"


def lines(path: str) -> list[dict]:
    return list(read_jsonl(path))


# --- full pipeline -------------------------------------------------------------


def test_pipeline_end_to_end(tmp_path, capsys):
    config = make_workspace(tmp_path)
    out = str(tmp_path / "out")
    run_pipeline(config, out)

    chunks = lines(os.path.join(out, "chunks.jsonl"))
    assert len(chunks) >= 4
    assert len({c["id"] for c in chunks}) == len(chunks)

    questions = lines(os.path.join(out, "questions.jsonl"))
    assert questions, "generation produced no questions"
    chunk_ids = {c["id"] for c in chunks}
    for q in questions:
        assert q["anchor_chunk_id"] in chunk_ids
        assert set(q["support_chunk_ids"]) <= chunk_ids
        assert len(q["support_chunk_ids"]) <= 2

    samples = lines(os.path.join(out, "samples.jsonl"))
    failures = lines(os.path.join(out, "distill_failures.jsonl"))
    assert len(samples) + len(failures) == 4 * len(questions)
    assert len({s["sample_id"] for s in samples}) == len(samples)

    reports = lines(os.path.join(out, "quality_reports.jsonl"))
    quarantine = lines(os.path.join(out, "quarantine.jsonl"))
    assert len(reports) + len(quarantine) == len(samples)

    kept = lines(os.path.join(out, "kept_samples.jsonl"))
    rejected = lines(os.path.join(out, "rejected_samples.jsonl"))
    assert len(kept) + len(rejected) == len(reports)
    sft = lines(os.path.join(out, "sft.jsonl"))
    assert len(sft) == len(kept)
    for rec in sft:
        assert [m["role"] for m in rec["messages"]] == ["user", "assistant"]

    stats = json.load(open(os.path.join(out, "filter_stats.json")))
    assert stats["kept"] == len(kept)
    assert stats["threshold"] == 5.0

    code = run("verify", "--config", config, "--out", out)
    assert code == 0
    assert "verify: OK" in capsys.readouterr().out


def artifact_bytes(out: str) -> dict[str, bytes]:
    blobs = {}
    for base, _dirs, files in os.walk(out):
        for name in files:
            path = os.path.join(base, name)
            blobs[os.path.relpath(path, out)] = open(path, "rb").read()
    return blobs


def test_pipeline_reruns_byte_identical(tmp_path):
    config = make_workspace(tmp_path)
    out1, out2 = str(tmp_path / "run1"), str(tmp_path / "run2")
    run_pipeline(config, out1)
    run_pipeline(config, out2)
    blobs1, blobs2 = artifact_bytes(out1), artifact_bytes(out2)
    assert blobs1.keys() == blobs2.keys()
    for rel in blobs1:
        assert blobs1[rel] == blobs2[rel], f"{rel} differs between identical runs"


def test_resume_skips_fresh_stages(tmp_path, capsys):
    config = make_workspace(tmp_path)
    out = str(tmp_path / "out")
    assert run("ingest", "--config", config, "--out", out) == 0
    assert run("index", "--config", config, "--out", out) == 0
    before = artifact_bytes(out)
    capsys.readouterr()
    assert run("index", "--config", config, "--out", out, "--resume") == 0
    assert "up to date" in capsys.readouterr().out
    assert artifact_bytes(out) == before


def test_resume_reruns_when_inputs_change(tmp_path, capsys):
    config = make_workspace(tmp_path)
    out = str(tmp_path / "out")
    assert run("ingest", "--config", config, "--out", out) == 0
    assert run("index", "--config", config, "--out", out) == 0
    # new chunk content invalidates the index resume check
    chunks_path = os.path.join(out, "chunks.jsonl")
    records = lines(chunks_path)
    records[0]["text"] = records[0]["text"] + " amended"
    write_jsonl(chunks_path, records)
    capsys.readouterr()
    assert run("index", "--config", config, "--out", out, "--resume") == 0
    assert "up to date" not in capsys.readouterr().out


# --- failure modes ---------------------------------------------------------------


def test_missing_upstream_is_exit_2(tmp_path, capsys):
    config = make_workspace(tmp_path)
    out = str(tmp_path / "fresh")
    assert run("index", "--config", config, "--out", out) == 2
    assert "has not run" in capsys.readouterr().err


def test_stale_config_hash_is_exit_2(tmp_path, capsys):
    config = make_workspace(tmp_path)
    out = str(tmp_path / "out")
    assert run("ingest", "--config", config, "--out", out) == 0
    assert run("index", "--config", config, "--out", out, "--seed", "99") == 2
    assert "stale" in capsys.readouterr().err


def test_validation_failures_are_exit_1(tmp_path, capsys):
    config = make_workspace(tmp_path)
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: 1\nunknown_section: {}\n")
    assert run("ingest", "--config", bad, "--out", tmp_path / "o") == 1
    assert run("ingest", "--config", tmp_path / "absent.yaml", "--out", tmp_path / "o") == 1
    out = str(tmp_path / "out")
    assert run("verify", "--config", config, "--out", out) == 1
    assert "nothing to verify" in capsys.readouterr().err


def test_verify_flags_corruption_exit_3(tmp_path, capsys):
    config = make_workspace(tmp_path)
    out = str(tmp_path / "out")
    run_pipeline(config, out)
    samples_path = os.path.join(out, "samples.jsonl")
    records = lines(samples_path)
    forged = dict(records[0])
    forged["sample_id"] = "zzz-d99"
    forged["question_id"] = "qDoesNotExist"
    write_jsonl(samples_path, records + [forged])
    assert run("verify", "--config", config, "--out", out) == 3
    err = capsys.readouterr().err
    assert "unknown question" in err
    assert "digest drifted" in err


# --- standalone evaluation commands -------------------------------------------------


def test_eval_perfect_match(tmp_path, capsys):
    root = tmp_path
    refs = [
        {"question_id": f"q{i}", "reference": f"stable answer text {i} with detail"}
        for i in range(3)
    ]
    preds = [
        {
            "question_id": r["question_id"],
            "prediction": f"<think>worked example</think>{r['reference']}",
        }
        for r in refs
    ]
    write_jsonl(str(root / "refs.jsonl"), refs)
    write_jsonl(str(root / "preds.jsonl"), preds)
    config = make_workspace(
        root, extra={"eval": {"references": "refs.jsonl", "predictions": "preds.jsonl"}}
    )
    out = str(root / "out")
    assert run("eval", "--config", config, "--out", out) == 0
    metrics = json.load(open(os.path.join(out, "metrics.json")))
    assert all(v == 1.0 for v in metrics["micro_averages"].values())
    assert all(v == "100.00" for v in metrics["micro_averages_pct"].values())
    assert metrics["extraction_errors"] == 0
    table = open(os.path.join(out, "metrics.txt")).read()
    assert "BLEU-1" in table and "100.00" in table
    assert "100.00" in capsys.readouterr().out


def test_eval_unknown_question_is_exit_1(tmp_path, capsys):
    write_jsonl(str(tmp_path / "refs.jsonl"), [{"question_id": "q1", "reference": "a"}])
    write_jsonl(str(tmp_path / "preds.jsonl"), [{"question_id": "q9", "prediction": "a"}])
    config = make_workspace(
        tmp_path,
        extra={"eval": {"references": "refs.jsonl", "predictions": "preds.jsonl"}},
    )
    assert run("eval", "--config", config, "--out", tmp_path / "out") == 1
    assert "no reference" in capsys.readouterr().err


def test_eval_duplicate_prediction_is_exit_1(tmp_path, capsys):
    write_jsonl(str(tmp_path / "refs.jsonl"), [{"question_id": "q1", "reference": "a"}])
    write_jsonl(
        str(tmp_path / "preds.jsonl"),
        [{"question_id": "q1", "prediction": "a"}, {"question_id": "q1", "prediction": "b"}],
    )
    config = make_workspace(
        tmp_path,
        extra={"eval": {"references": "refs.jsonl", "predictions": "preds.jsonl"}},
    )
    assert run("eval", "--config", config, "--out", tmp_path / "out") == 1
    assert "duplicate prediction" in capsys.readouterr().err


def test_arena_identical_answers_near_half(tmp_path):
    n = 24
    questions = [
        {"question_id": f"q{i:02d}", "question": f"Describe subsystem {i}."}
        for i in range(n)
    ]
    preds = [
        {"question_id": q["question_id"], "prediction": f"shared answer {q['question_id']}"}
        for q in questions
    ]
    write_jsonl(str(tmp_path / "questions.jsonl"), questions)
    write_jsonl(str(tmp_path / "preds_a.jsonl"), preds)
    write_jsonl(str(tmp_path / "preds_b.jsonl"), preds)
    config = make_workspace(
        tmp_path,
        extra={
            "arena": {
                "questions": "questions.jsonl",
                "predictions_a": "preds_a.jsonl",
                "predictions_b": "preds_b.jsonl",
                "n_resamples": 500,
            }
        },
    )
    out = str(tmp_path / "out")
    assert run("arena", "--config", config, "--out", out) == 0
    report = json.load(open(os.path.join(out, "arena_report.json")))
    assert report["n_comparisons"] == n
    assert 0.2 <= report["win_rate"] <= 0.8
    assert report["ci_lower"] <= report["win_rate"] <= report["ci_upper"]
    judgments = lines(os.path.join(out, "arena_judgments.jsonl"))
    assert len(judgments) == n
    assert {j["presented_order"] for j in judgments} <= {"AB", "BA"}
    assert {j["verdict"] for j in judgments} <= {"A", "B", "tie"}


def test_dedup_cli_with_explicit_train(tmp_path):
    train = [
        {"question_id": f"tr{i}", "question": f"training question {i} on calibration"}
        for i in range(6)
    ]
    test = [
        {"question_id": "te0", "question": train[2]["question"]},
        {"question_id": "te1", "question": "an unrelated novel question about scheduling"},
    ]
    write_jsonl(str(tmp_path / "train_q.jsonl"), train)
    write_jsonl(str(tmp_path / "test_q.jsonl"), test)
    config = make_workspace(
        tmp_path,
        extra={
            "dedup": {
                "tau": 0.9,
                "test_questions": "test_q.jsonl",
                "train_questions": "train_q.jsonl",
            }
        },
    )
    out = str(tmp_path / "out")
    assert run("dedup", "--config", config, "--out", out) == 0
    removed = lines(os.path.join(out, "dedup_removed.jsonl"))
    retained = lines(os.path.join(out, "dedup_retained.jsonl"))
    assert [r["test_id"] for r in removed] == ["te0"]
    assert removed[0]["nearest_train_id"] == "tr2"
    assert removed[0]["similarity"] == pytest.approx(1.0, abs=1e-12)
    assert [r["question_id"] for r in retained] == ["te1"]


def test_dedup_requires_test_questions(tmp_path, capsys):
    config = make_workspace(tmp_path)
    assert run("dedup", "--config", config, "--out", tmp_path / "out") == 1
    assert "dedup.test_questions" in capsys.readouterr().err


def test_ablate_cli_small_grid(tmp_path, capsys):
    config = make_workspace(tmp_path)
    out = str(tmp_path / "out")
    assert run("ingest", "--config", config, "--out", out) == 0
    assert run("index", "--config", config, "--out", out) == 0
    code = run(
        "ablate", "--config", config, "--out", out,
        "--alphas", "0.0,1.0", "--ks", "1,2", "--samples-per-cell", "1",
    )
    assert code == 0
    assert "best cell" in capsys.readouterr().out
    csv_lines = open(os.path.join(out, "ablation.csv")).read().splitlines()
    assert csv_lines[0] == "alpha,k,mean,count"
    assert len(csv_lines) <= 5
    summary = json.load(open(os.path.join(out, "ablation_summary.json")))
    assert (summary["argmax"]["alpha"], summary["argmax"]["k"]) in [
        (a, k) for a in (0.0, 1.0) for k in (1, 2)
    ]
    svg = open(os.path.join(out, "ablation.svg")).read()
    assert svg.count('data-max="true"') == 1


def test_seed_override_keeps_resume_honest(tmp_path, capsys):
    config = make_workspace(tmp_path)
    out = str(tmp_path / "out")
    assert run("ingest", "--config", config, "--out", out) == 0
    capsys.readouterr()
    # a different seed is a different config hash: resume must not skip
    assert run("ingest", "--config", config, "--out", out, "--seed", "99", "--resume") == 0
    assert "up to date" not in capsys.readouterr().out
