"""Output scoring: overlap metrics, report tables, and arena judging.

BLEU-1/2/3/4 use the add-one floor on zero n-gram matches and skip n-gram
orders the candidate is too short to form (effective order), with the
standard brevity penalty. ROUGE-1/2 are clipped-overlap F1; ROUGE-L is
LCS-based F1. Candidates may lead with a think block, which is stripped
before scoring. Micro-averages are unweighted per-sample means, reported as
percentages with two decimals.

Arena comparisons randomize presentation order per question (seeded),
de-randomize the verdict, and count ties as half a win. The confidence
interval is a seeded bootstrap over per-comparison outcomes, implemented by
multinomial draws over the outcome values, which is distributionally the
same as resampling indices.
"""
from __future__ import annotations

import math
import random
import warnings
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import formats
from .errors import ExtractionError, JudgingError
from .gateway import ChatRequest, Gateway, chat_request
from .indexing import tokenize
from .seeds import derive_seed

METRIC_NAMES = (
    "bleu1",
    "bleu2",
    "bleu3",
    "bleu4",
    "rouge1_f",
    "rouge2_f",
    "rougeL_f",
)

METRIC_LABELS = {
    "bleu1": "BLEU-1",
    "bleu2": "BLEU-2",
    "bleu3": "BLEU-3",
    "bleu4": "BLEU-4",
    "rouge1_f": "ROUGE-1-F",
    "rouge2_f": "ROUGE-2-F",
    "rougeL_f": "ROUGE-L-F",
}


def extract_answer(raw: str) -> str:
    """Strip a leading think block; reject unbalanced or stray delimiters."""
    try:
        _think, content = formats.split_think(raw)
    except ValueError as exc:
        raise ExtractionError(str(exc)) from exc
    content = content.strip()
    if formats.THINK_OPEN in content or formats.THINK_CLOSE in content:
        raise ExtractionError("stray think delimiter in answer segment")
    return content


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: str, reference: str, max_n: int = 4) -> float:
    """Sentence BLEU with add-one smoothing and effective order.

    Precision at order n is m/l for m clipped matches out of l candidate
    n-grams, or 1/(l+1) when m is zero; orders with no candidate n-grams are
    skipped. Brevity penalty exp(1 - |ref|/|cand|) applies when the
    candidate is shorter.
    """
    if not (1 <= max_n <= 4):
        raise ValueError(f"max_n must be in [1, 4], got {max_n}")
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand:
        warnings.warn("empty candidate scores 0", stacklevel=2)
        return 0.0
    if not ref:
        warnings.warn("empty reference scores 0", stacklevel=2)
        return 0.0
    log_sum = 0.0
    orders = 0
    for n in range(1, max_n + 1):
        cand_ngrams = _ngrams(cand, n)
        total = sum(cand_ngrams.values())
        if total == 0:
            continue
        ref_ngrams = _ngrams(ref, n)
        matched = sum(
            min(count, ref_ngrams[gram]) for gram, count in cand_ngrams.items()
        )
        p = matched / total if matched > 0 else 1.0 / (total + 1)
        log_sum += math.log(p)
        orders += 1
    if orders == 0:
        return 0.0
    bp = 1.0 if len(cand) >= len(ref) else math.exp(1.0 - len(ref) / len(cand))
    return bp * math.exp(log_sum / orders)


def rouge_n_f(candidate: str, reference: str, n: int) -> float:
    """Clipped n-gram overlap F1; n is 1 or 2."""
    if n not in (1, 2):
        raise ValueError(f"n must be 1 or 2, got {n}")
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        warnings.warn("empty input scores 0", stacklevel=2)
        return 0.0
    cand_ngrams = _ngrams(cand, n)
    ref_ngrams = _ngrams(ref, n)
    cand_total = sum(cand_ngrams.values())
    ref_total = sum(ref_ngrams.values())
    if cand_total == 0 or ref_total == 0:
        return 0.0
    overlap = sum(min(count, ref_ngrams[gram]) for gram, count in cand_ngrams.items())
    precision = overlap / cand_total
    recall = overlap / ref_total
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l_f(candidate: str, reference: str) -> float:
    """Longest-common-subsequence F1."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        warnings.warn("empty input scores 0", stacklevel=2)
        return 0.0
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return 2.0 * precision * recall / (precision + recall)


def score_pair(reference: str, candidate_answer: str) -> dict[str, float]:
    """All seven metrics for one already-extracted candidate answer."""
    return {
        "bleu1": bleu(candidate_answer, reference, 1),
        "bleu2": bleu(candidate_answer, reference, 2),
        "bleu3": bleu(candidate_answer, reference, 3),
        "bleu4": bleu(candidate_answer, reference, 4),
        "rouge1_f": rouge_n_f(candidate_answer, reference, 1),
        "rouge2_f": rouge_n_f(candidate_answer, reference, 2),
        "rougeL_f": rouge_l_f(candidate_answer, reference),
    }


@dataclass
class MetricReport:
    per_sample: dict[str, dict[str, float]]
    micro_averages: dict[str, float]
    extraction_errors: int = 0

    def to_record(self) -> dict:
        return {
            "micro_averages": self.micro_averages,
            "micro_averages_pct": {
                name: format_percent(value)
                for name, value in self.micro_averages.items()
            },
            "sample_count": len(self.per_sample),
            "extraction_errors": self.extraction_errors,
            "per_sample": self.per_sample,
        }


def micro_average(
    per_sample: dict[str, dict[str, float]], extraction_errors: int = 0
) -> MetricReport:
    """Unweighted mean of each metric over samples."""
    if not per_sample:
        raise ValueError("no samples to average")
    averages = {
        name: sum(scores[name] for scores in per_sample.values()) / len(per_sample)
        for name in METRIC_NAMES
    }
    return MetricReport(
        per_sample=per_sample,
        micro_averages=averages,
        extraction_errors=extraction_errors,
    )


def evaluate_pairs(pairs: Iterable[tuple[str, str, str]]) -> MetricReport:
    """Score (question_id, reference, raw_candidate) triples end to end.

    Raw candidates run through think extraction; extraction failures score
    zero on every metric and are counted in the report.
    """
    per_sample: dict[str, dict[str, float]] = {}
    errors = 0
    for question_id, reference, raw in pairs:
        if question_id in per_sample:
            raise ValueError(f"duplicate question id: {question_id}")
        try:
            answer = extract_answer(raw)
            per_sample[question_id] = score_pair(reference, answer)
        except ExtractionError:
            errors += 1
            per_sample[question_id] = {name: 0.0 for name in METRIC_NAMES}
    return micro_average(per_sample, extraction_errors=errors)


def format_percent(value: float) -> str:
    return f"{value * 100:.2f}"


def format_report_table(report: MetricReport) -> str:
    """Plain-text table, metric per row, percentages with two decimals."""
    lines = ["metric      value"]
    for name in METRIC_NAMES:
        label = METRIC_LABELS[name]
        lines.append(f"{label:<11} {format_percent(report.micro_averages[name])}")
    if report.extraction_errors:
        lines.append(f"extraction errors: {report.extraction_errors}")
    return "\n".join(lines)


# --- arena -------------------------------------------------------------------

ARENA_SYSTEM_PROMPT = (
    "You compare two answers to the same question and pick the better one."
)
ARENA_CRITERIA = "professionalism, completeness, and usability"

WIN, TIE, LOSS = 1.0, 0.5, 0.0


@dataclass(frozen=True)
class ArenaJudgment:
    question_id: str
    presented_order: str  # "AB" = answer_x shown first, "BA" = swapped
    verdict: str  # "A" | "B" | "tie", after de-randomization (A = answer_x)
    justification: str
    judge_id: str

    def to_record(self) -> dict:
        return {
            "question_id": self.question_id,
            "presented_order": self.presented_order,
            "verdict": self.verdict,
            "justification": self.justification,
            "judge_id": self.judge_id,
        }

    @property
    def outcome(self) -> float:
        return {"A": WIN, "tie": TIE, "B": LOSS}[self.verdict]


def build_arena_request(
    question: str, first: str, second: str, *, seed: int | None = None
) -> ChatRequest:
    user = (
        f"Judge the two answers on {ARENA_CRITERIA}.\n\n"
        f"Question:\n{question}\n\n"
        f"Answer A:\n{first}\n\n"
        f"Answer B:\n{second}\n\n"
        f"{formats.VERDICT_FORMAT_INSTRUCTION}"
    )
    return chat_request(user, ARENA_SYSTEM_PROMPT, seed=seed)


def arena_judge(
    question: str,
    answer_x: str,
    answer_y: str,
    gw: Gateway,
    *,
    rng_seed: int,
    question_id: str = "",
) -> ArenaJudgment:
    """One pairwise comparison with seeded presentation-order randomization.

    The verdict is mapped back so "A" always means answer_x won, whatever
    order the judge saw. Unparseable verdicts get one retry, then raise.
    """
    x_first = random.Random(rng_seed).random() < 0.5
    first, second = (answer_x, answer_y) if x_first else (answer_y, answer_x)
    last_error = ""
    for attempt in range(2):
        seed = derive_seed(rng_seed, "arena-judge", attempt)
        completion = gw.chat(build_arena_request(question, first, second, seed=seed))
        try:
            verdict, justification = formats.parse_verdict(completion.content)
        except ValueError as exc:
            last_error = str(exc)
            continue
        if not x_first and verdict in ("A", "B"):
            verdict = "B" if verdict == "A" else "A"
        return ArenaJudgment(
            question_id=question_id,
            presented_order="AB" if x_first else "BA",
            verdict=verdict,
            justification=justification,
            judge_id=completion.backend_id,
        )
    raise JudgingError(f"verdict unusable after retry: {last_error}")


def bootstrap_ci(
    values: Sequence[float],
    *,
    n_resamples: int = 10000,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, float]:
    """Seeded percentile bootstrap of the mean.

    Resampling n outcomes with replacement is a multinomial over the distinct
    outcome values, so the resample means come from multinomial counts
    directly; identical distribution, far fewer random draws.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("no outcomes to bootstrap")
    if not (0.0 < level < 1.0):
        raise ValueError(f"level must be in (0, 1), got {level}")
    if n_resamples < 1:
        raise ValueError(f"n_resamples must be >= 1, got {n_resamples}")
    uniq, counts = np.unique(arr, return_counts=True)
    probs = counts / arr.size
    rng = np.random.default_rng(seed)
    draws = rng.multinomial(arr.size, probs, size=n_resamples)
    means = draws @ uniq / arr.size
    tail = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(means, [tail, 100.0 - tail])
    return float(lo), float(hi)


@dataclass(frozen=True)
class WinRateReport:
    n_comparisons: int
    wins: int
    losses: int
    ties: int
    win_rate: float
    ci_lower: float
    ci_upper: float
    ci_level: float = 0.95
    ci_method: str = "bootstrap_percentile"
    tie_weight: float = 0.5
    n_invalid: int = 0

    def to_record(self) -> dict:
        return {
            "n_comparisons": self.n_comparisons,
            "wins": self.wins,
            "losses": self.losses,
            "ties": self.ties,
            "win_rate": self.win_rate,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
            "ci_level": self.ci_level,
            "ci_method": self.ci_method,
            "tie_weight": self.tie_weight,
            "n_invalid": self.n_invalid,
        }


def win_rate_report(
    outcomes: Sequence[float],
    *,
    n_invalid: int = 0,
    n_resamples: int = 10000,
    level: float = 0.95,
    seed: int = 0,
) -> WinRateReport:
    """Assemble win rate and CI from per-comparison outcomes (1, 0.5, 0)."""
    if not outcomes:
        raise JudgingError("no valid comparisons")
    wins = sum(1 for o in outcomes if o == WIN)
    ties = sum(1 for o in outcomes if o == TIE)
    losses = sum(1 for o in outcomes if o == LOSS)
    if wins + ties + losses != len(outcomes):
        raise JudgingError("outcomes must be 1, 0.5, or 0")
    rate = (wins + 0.5 * ties) / len(outcomes)
    lo, hi = bootstrap_ci(outcomes, n_resamples=n_resamples, level=level, seed=seed)
    return WinRateReport(
        n_comparisons=len(outcomes),
        wins=wins,
        losses=losses,
        ties=ties,
        win_rate=rate,
        ci_lower=lo,
        ci_upper=hi,
        ci_level=level,
        n_invalid=n_invalid,
    )


@dataclass(frozen=True)
class ArenaConfig:
    seed: int = 0
    judgments_per_question: int = 1
    n_resamples: int = 10000
    ci_level: float = 0.95

    def __post_init__(self):
        if self.judgments_per_question < 1:
            raise JudgingError("judgments_per_question must be >= 1")


def arena_run(
    pairs: Sequence[tuple[str, str, str, str]],
    gw: Gateway,
    cfg: ArenaConfig = ArenaConfig(),
) -> tuple[WinRateReport, list[ArenaJudgment]]:
    """Judge (question_id, question, answer_x, answer_y) tuples.

    Failed comparisons (after their retry) are dropped and counted invalid;
    everything failing raises.
    """
    judgments: list[ArenaJudgment] = []
    invalid = 0
    for question_id, question, answer_x, answer_y in pairs:
        for j in range(cfg.judgments_per_question):
            rng_seed = derive_seed(cfg.seed, "arena", question_id, j)
            try:
                judgments.append(
                    arena_judge(
                        question,
                        answer_x,
                        answer_y,
                        gw,
                        rng_seed=rng_seed,
                        question_id=question_id,
                    )
                )
            except JudgingError:
                invalid += 1
    report = win_rate_report(
        [j.outcome for j in judgments],
        n_invalid=invalid,
        n_resamples=cfg.n_resamples,
        level=cfg.ci_level,
        seed=derive_seed(cfg.seed, "arena-bootstrap"),
    )
    return report, judgments
