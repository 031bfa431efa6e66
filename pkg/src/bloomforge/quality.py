"""Quality gating: rubric judging, threshold filtering, semantic dedup.

A judge model returns four sub-scores per sample; the composite is computed
locally as clamp(sum, 0, 10), never trusted from the judge. Unparseable
judge output gets one retry with a fresh seed, then the sample is
quarantined. Filtering keeps composites >= threshold (default 7.0). Dedup
is asymmetric: test questions whose nearest training question exceeds the
cosine threshold are removed with evidence.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import formats
from .errors import QualityError, ScoringError
from .gateway import ChatRequest, Gateway, chat_request
from .seeds import derive_seed

JUDGE_SYSTEM_PROMPT = (
    "You are a strict grader of question-answer training samples. Score only "
    "what the text supports."
)

# (name, lo, hi, what the judge is asked to weigh)
RUBRIC_FIELDS: tuple[tuple[str, float, float, str], ...] = (
    (
        "domain_specific",
        0.0,
        4.0,
        "technical soundness and fit to the domain's terminology, workflows, and constraints",
    ),
    (
        "self_containment",
        0.0,
        2.0,
        "the answer stands alone and is interpretable without unstated context",
    ),
    (
        "structured_criteria",
        0.0,
        4.0,
        "completeness, logical coherence, and internal consistency against the standard template",
    ),
    (
        "deduction_bonus",
        -2.0,
        1.0,
        "deductions for factual errors, contradictions, or format violations; a small bonus for rigor",
    ),
)
RUBRIC_FIELD_NAMES = tuple(name for name, _, _, _ in RUBRIC_FIELDS)

COMPOSITE_MIN = 0.0
COMPOSITE_MAX = 10.0
DEFAULT_KEEP_THRESHOLD = 7.0


def compute_composite(scores: dict[str, float]) -> float:
    """clamp(sum of sub-scores, 0, 10); computed here, never by the judge."""
    total = sum(scores[name] for name in RUBRIC_FIELD_NAMES)
    return min(max(total, COMPOSITE_MIN), COMPOSITE_MAX)


@dataclass(frozen=True)
class QualityReport:
    sample_id: str
    scores: dict[str, float]
    composite: float
    judge_id: str
    rationale: str

    def to_record(self) -> dict:
        return {
            "sample_id": self.sample_id,
            **{name: self.scores[name] for name in RUBRIC_FIELD_NAMES},
            "composite": self.composite,
            "judge_id": self.judge_id,
            "rationale": self.rationale,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "QualityReport":
        return cls(
            sample_id=rec["sample_id"],
            scores={name: rec[name] for name in RUBRIC_FIELD_NAMES},
            composite=rec["composite"],
            judge_id=rec.get("judge_id", ""),
            rationale=rec.get("rationale", ""),
        )


def build_rubric_request(
    sample_id: str, question: str, answer: str, *, seed: int | None = None
) -> ChatRequest:
    user = (
        "Score this question-answer training sample.\n\n"
        "Scores to assign:\n"
        f"{formats.score_range_lines(RUBRIC_FIELDS)}\n\n"
        f"Question:\n{question}\n\n"
        f"Answer:\n{answer}\n\n"
        f"{formats.SCORES_FORMAT_INSTRUCTION}"
    )
    return chat_request(user, JUDGE_SYSTEM_PROMPT, seed=seed)


def judged_scores(
    fields: Sequence[tuple[str, float, float, str]],
    build_request,
    gw: Gateway,
    *,
    seed: int,
    label: str,
) -> tuple[dict[str, float], str, str]:
    """Run a rubric request with the retry-once-then-quarantine discipline.

    build_request(seed) must return a ChatRequest. Returns (scores,
    rationale, judge_id); raises ScoringError after the second failure.
    """
    names = [name for name, _, _, _ in fields]
    last_error = ""
    last_raw = ""
    for attempt in range(2):
        attempt_seed = derive_seed(seed, "judge", label, attempt)
        completion = gw.chat(build_request(attempt_seed))
        try:
            scores, rationale = formats.parse_labeled_scores(completion.content, names)
            for name, lo, hi, _ in fields:
                if not (lo <= scores[name] <= hi):
                    raise ValueError(
                        f"{name}={scores[name]:g} outside [{lo:g}, {hi:g}]"
                    )
            return scores, rationale, completion.backend_id
        except ValueError as exc:
            last_error = str(exc)
            last_raw = completion.content
    raise ScoringError(
        f"judge output unusable for {label} after retry: {last_error}", raw=last_raw
    )


def score_answer(
    sample_id: str, question: str, answer: str, gw: Gateway, *, seed: int = 0
) -> QualityReport:
    """Judge one question/answer pair against the four-part rubric."""
    scores, rationale, judge_id = judged_scores(
        RUBRIC_FIELDS,
        lambda s: build_rubric_request(sample_id, question, answer, seed=s),
        gw,
        seed=seed,
        label=sample_id,
    )
    return QualityReport(
        sample_id=sample_id,
        scores=scores,
        composite=compute_composite(scores),
        judge_id=judge_id,
        rationale=rationale,
    )


def score_sample(sample, gw: Gateway, *, seed: int = 0) -> QualityReport:
    return score_answer(sample.sample_id, sample.question, sample.answer, gw, seed=seed)


@dataclass
class Quarantine:
    sample_id: str
    reason: str

    def to_record(self) -> dict:
        return {"sample_id": self.sample_id, "reason": self.reason}


def score_samples(
    samples, gw: Gateway, *, seed: int = 0
) -> tuple[list[QualityReport], list[Quarantine]]:
    """Score a batch; judge failures quarantine the sample instead of aborting."""
    reports: list[QualityReport] = []
    quarantined: list[Quarantine] = []
    for sample in samples:
        try:
            reports.append(score_sample(sample, gw, seed=seed))
        except ScoringError as exc:
            quarantined.append(Quarantine(sample.sample_id, str(exc)))
    return reports, quarantined


# --- filtering ---------------------------------------------------------------


@dataclass
class FilterStats:
    total: int
    kept: int
    rejected: int
    threshold: float
    per_qtype: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "total": self.total,
            "kept": self.kept,
            "rejected": self.rejected,
            "threshold": self.threshold,
            "per_qtype": self.per_qtype,
        }


@dataclass
class FilterResult:
    kept: list
    rejected: list
    stats: FilterStats


def filter_samples(
    samples, reports: Sequence[QualityReport], threshold: float = DEFAULT_KEEP_THRESHOLD
) -> FilterResult:
    """Partition samples by composite >= threshold; order is preserved.

    Every sample must have a report; a missing one is an upstream bug, not a
    rejection.
    """
    by_id = {r.sample_id: r for r in reports}
    kept, rejected = [], []
    per_qtype: dict[str, dict[str, float]] = {}
    for sample in samples:
        report = by_id.get(sample.sample_id)
        if report is None:
            raise QualityError(f"no quality report for sample {sample.sample_id}")
        bucket = per_qtype.setdefault(sample.qtype, {"total": 0, "kept": 0})
        bucket["total"] += 1
        if report.composite >= threshold:
            kept.append(sample)
            bucket["kept"] += 1
        else:
            rejected.append(sample)
    for bucket in per_qtype.values():
        bucket["keep_rate"] = bucket["kept"] / bucket["total"]
    stats = FilterStats(
        total=len(kept) + len(rejected),
        kept=len(kept),
        rejected=len(rejected),
        threshold=threshold,
        per_qtype=dict(sorted(per_qtype.items())),
    )
    return FilterResult(kept=kept, rejected=rejected, stats=stats)


# --- semantic dedup ----------------------------------------------------------


@dataclass
class DedupConfig:
    tau: float = 0.90
    embedder: object = None  # anything with embed(list[str]) -> (n, d) array

    def __post_init__(self):
        if not (0.0 < self.tau <= 1.0):
            raise QualityError(f"tau must be in (0, 1], got {self.tau}")


@dataclass(frozen=True)
class DedupRemoval:
    test_id: str
    nearest_train_id: str
    similarity: float

    def to_record(self) -> dict:
        return {
            "test_id": self.test_id,
            "nearest_train_id": self.nearest_train_id,
            "similarity": self.similarity,
        }


@dataclass
class DedupResult:
    retained: list[tuple[str, str]]
    removed: list[DedupRemoval]


def dedup_test_against_train(
    test: Sequence[tuple[str, str]],
    train: Sequence[tuple[str, str]],
    cfg: DedupConfig,
) -> DedupResult:
    """Drop test items whose max cosine against train strictly exceeds tau.

    Only the test side shrinks. Each removal records the nearest training
    item and the similarity as evidence; nearest ties go to the earliest
    training item.
    """
    if not test or not train:
        raise QualityError("dedup needs non-empty test and train sets")
    if cfg.embedder is None:
        raise QualityError("dedup config carries no embedder")

    def _unit_rows(vecs: np.ndarray) -> np.ndarray:
        norms = np.linalg.norm(vecs, axis=1)
        if np.any(norms == 0.0) or not np.all(np.isfinite(norms)):
            raise QualityError("degenerate embedding in dedup input")
        return vecs / norms[:, None]

    test_vecs = _unit_rows(np.asarray(cfg.embedder.embed([t for _, t in test]), dtype=np.float64))
    train_vecs = _unit_rows(np.asarray(cfg.embedder.embed([t for _, t in train]), dtype=np.float64))
    retained: list[tuple[str, str]] = []
    removed: list[DedupRemoval] = []
    for i, (test_id, text) in enumerate(test):
        # pairwise dots instead of one big matmul: blocked kernels can round
        # identical training rows apart and break the earliest-tie rule
        sims = np.array([np.dot(test_vecs[i], row) for row in train_vecs])
        nearest = int(np.argmax(sims))
        # roundoff on unit rows can push a self-match past 1.0; cosine is
        # bounded, so tau=1.0 must keep everything
        similarity = min(max(float(sims[nearest]), -1.0), 1.0)
        if similarity > cfg.tau:
            removed.append(DedupRemoval(test_id, train[nearest][0], similarity))
        else:
            retained.append((test_id, text))
    return DedupResult(retained=retained, removed=removed)
