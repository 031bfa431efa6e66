"""Question synthesis and teacher distillation.

Every question grows from an anchor chunk plus retrieved support chunks
rendered into one multi-source context. A sampled question type steers the
prompt; the teacher answers each surviving question fan_out times (default
16) across a cycling temperature schedule, every call carrying its own
derived seed so retries and reruns reproduce exactly.
"""
from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from . import formats
from .errors import GenerationError
from .gateway import ChatRequest, Gateway, chat_request
from .indexing import RetrievalConfig, Retriever
from .qtypes import DEFAULT_QTYPE_MIX, QuestionType, get_question_type
from .seeds import derive_seed

GENERATOR_SYSTEM_PROMPT = (
    "You write assessment questions strictly grounded in the supplied source material."
)
TEACHER_SYSTEM_PROMPT = (
    "You are a domain expert. Answer using the supplied source material; think "
    "through the problem before the final answer."
)

DEFAULT_TEMPERATURE_CYCLE = (0.7, 0.9, 1.1, 1.3)
QUESTION_TEMPERATURE = 0.7


@dataclass(frozen=True)
class MultiSourceContext:
    anchor_chunk_id: str
    support_chunk_ids: tuple[str, ...]
    rendered_text: str
    alpha: float
    top_k: int

    @property
    def context_chunk_ids(self) -> tuple[str, ...]:
        return (self.anchor_chunk_id, *self.support_chunk_ids)


def render_context(anchor, supports) -> str:
    """Anchor first, then numbered supports, separated by source headers."""
    parts = [f"[Anchor] {anchor.text}"]
    parts.extend(f"[Source {i}] {c.text}" for i, c in enumerate(supports, 1))
    return "\n\n".join(parts)


def assemble_context(
    anchor, retriever: Retriever, cfg: RetrievalConfig
) -> MultiSourceContext:
    """Retrieve supports for the anchor, excluding the anchor itself.

    Fetches one extra candidate so that when the anchor ranks inside the
    window (it usually ranks first against its own text) the next candidate
    is promoted and the support count stays at top_k when enough chunks exist.
    """
    fetch_k = min(cfg.top_k + 1, 2 * cfg.k_cand)
    hits = retriever.retrieve(anchor.text, replace(cfg, top_k=fetch_k))
    support_ids = [h.chunk_id for h in hits if h.chunk_id != anchor.id][: cfg.top_k]
    supports = [retriever.chunk(cid) for cid in support_ids]
    return MultiSourceContext(
        anchor_chunk_id=anchor.id,
        support_chunk_ids=tuple(support_ids),
        rendered_text=render_context(anchor, supports),
        alpha=cfg.alpha,
        top_k=cfg.top_k,
    )


@dataclass(frozen=True)
class QuestionDraft:
    question_id: str
    qtype: str
    question: str
    think: str
    answer: str
    context: MultiSourceContext

    def to_record(self) -> dict:
        return {
            "question_id": self.question_id,
            "qtype": self.qtype,
            "question": self.question,
            "think": self.think,
            "answer": self.answer,
            "anchor_chunk_id": self.context.anchor_chunk_id,
            "support_chunk_ids": list(self.context.support_chunk_ids),
            "alpha": self.context.alpha,
            "top_k": self.context.top_k,
            "rendered_context": self.context.rendered_text,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "QuestionDraft":
        ctx = MultiSourceContext(
            anchor_chunk_id=rec["anchor_chunk_id"],
            support_chunk_ids=tuple(rec["support_chunk_ids"]),
            rendered_text=rec["rendered_context"],
            alpha=rec["alpha"],
            top_k=rec["top_k"],
        )
        return cls(
            question_id=rec["question_id"],
            qtype=rec["qtype"],
            question=rec["question"],
            think=rec.get("think", ""),
            answer=rec["answer"],
            context=ctx,
        )


def render_question_prompt(
    qtype: QuestionType | str, ctx: MultiSourceContext
) -> ChatRequest:
    """Deterministic prompt for one (question type, context) pair."""
    qt = get_question_type(qtype) if isinstance(qtype, str) else qtype
    user = (
        f"Question type: {qt.code} ({qt.name})\n"
        f"Cognitive levels: {', '.join(qt.cognitive_levels)}\n"
        f"Assessment objective: {qt.objective}\n"
        f"Design hint: {qt.design_hint}\n"
        f"Example prefix: {qt.example_prefix}\n"
        f"Answer guideline: {qt.answer_guideline}\n\n"
        "Write one question of this type that weaves together the sources "
        "below, then give the reference answer following the guideline.\n\n"
        f"Source material:\n{ctx.rendered_text}\n\n"
        f"{formats.QUESTION_FORMAT_INSTRUCTION}"
    )
    return chat_request(
        user,
        GENERATOR_SYSTEM_PROMPT,
        temperature=QUESTION_TEMPERATURE,
        think_mode=False,
    )


def _question_id(anchor_id: str, qtype: str, question: str) -> str:
    digest = hashlib.sha256(
        f"{anchor_id}|{qtype}|{question}".encode("utf-8")
    ).hexdigest()
    return "q" + digest[:12]


def _reject_delimiters(text: str, what: str, raw: str) -> None:
    if formats.THINK_OPEN in text or formats.THINK_CLOSE in text:
        raise GenerationError(f"think delimiter inside {what}", raw=raw)


def generate_question(
    qtype: QuestionType | str,
    ctx: MultiSourceContext,
    gw: Gateway,
    *,
    seed: int | None = None,
) -> QuestionDraft:
    """Ask the generator for one question/reasoning/answer triple and parse it."""
    qt = get_question_type(qtype) if isinstance(qtype, str) else qtype
    req = replace(render_question_prompt(qt, ctx), seed=seed)
    completion = gw.chat(req)
    try:
        sections = formats.parse_sections(
            completion.content,
            required=(formats.QUESTION_SECTION, formats.ANSWER_SECTION),
            optional=(formats.REASONING_SECTION,),
        )
    except ValueError as exc:
        raise GenerationError(str(exc), raw=completion.content) from exc
    question = sections[formats.QUESTION_SECTION]
    answer = sections[formats.ANSWER_SECTION]
    think = sections.get(formats.REASONING_SECTION, "")
    if not question or not answer:
        raise GenerationError("empty question or answer", raw=completion.content)
    for text, what in ((question, "question"), (think, "reasoning"), (answer, "answer")):
        _reject_delimiters(text, what, completion.content)
    return QuestionDraft(
        question_id=_question_id(ctx.anchor_chunk_id, qt.code, question),
        qtype=qt.code,
        question=question,
        think=think,
        answer=answer,
        context=ctx,
    )


# --- distillation ------------------------------------------------------------


@dataclass(frozen=True)
class DistillConfig:
    fan_out: int = 16
    temperature_schedule: tuple[float, ...] = ()
    qtype_mix: Mapping[str, float] = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.fan_out < 1:
            raise GenerationError(f"fan_out must be >= 1, got {self.fan_out}")
        if not self.temperature_schedule:
            object.__setattr__(
                self,
                "temperature_schedule",
                tuple(
                    DEFAULT_TEMPERATURE_CYCLE[i % len(DEFAULT_TEMPERATURE_CYCLE)]
                    for i in range(self.fan_out)
                ),
            )
        if len(self.temperature_schedule) != self.fan_out:
            raise GenerationError(
                f"temperature schedule has {len(self.temperature_schedule)} entries "
                f"for fan_out={self.fan_out}"
            )
        if any(t < 0 for t in self.temperature_schedule):
            raise GenerationError("temperatures must be >= 0")
        if self.qtype_mix is None:
            object.__setattr__(self, "qtype_mix", dict(DEFAULT_QTYPE_MIX))
        _check_mix(self.qtype_mix)


def _check_mix(mix: Mapping[str, float]) -> None:
    if not mix:
        raise GenerationError("question type mix is empty")
    for code, weight in mix.items():
        get_question_type(code)
        if weight < 0:
            raise GenerationError(f"negative weight for {code}: {weight}")
    if sum(mix.values()) <= 0:
        raise GenerationError("question type mix sums to zero")


def sample_qtype(mix: Mapping[str, float], rng_seed: int) -> str:
    """Draw one question-type code; same seed, same draw."""
    _check_mix(mix)
    codes = sorted(mix)
    total = sum(mix[c] for c in codes)
    point = random.Random(rng_seed).random() * total
    acc = 0.0
    for code in codes:
        acc += mix[code]
        if point < acc:
            return code
    return codes[-1]


@dataclass(frozen=True)
class CandidateSample:
    sample_id: str
    question_id: str
    question: str
    think: str
    answer: str
    qtype: str
    context_chunk_ids: tuple[str, ...]
    teacher_id: str
    distill_index: int
    temperature: float
    seed: int

    def to_record(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "question_id": self.question_id,
            "question": self.question,
            "think": self.think,
            "answer": self.answer,
            "qtype": self.qtype,
            "context_chunk_ids": list(self.context_chunk_ids),
            "teacher_id": self.teacher_id,
            "distill_index": self.distill_index,
            "temperature": self.temperature,
            "seed": self.seed,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "CandidateSample":
        return cls(
            sample_id=rec["sample_id"],
            question_id=rec["question_id"],
            question=rec["question"],
            think=rec.get("think", ""),
            answer=rec["answer"],
            qtype=rec["qtype"],
            context_chunk_ids=tuple(rec["context_chunk_ids"]),
            teacher_id=rec["teacher_id"],
            distill_index=rec["distill_index"],
            temperature=rec["temperature"],
            seed=rec["seed"],
        )


@dataclass(frozen=True)
class DistillFailure:
    question_id: str
    distill_index: int
    error: str

    def to_record(self) -> dict:
        return {
            "question_id": self.question_id,
            "distill_index": self.distill_index,
            "error": self.error,
        }


@dataclass
class DistillResult:
    samples: list[CandidateSample]
    failures: list[DistillFailure]


def build_distill_request(
    draft: QuestionDraft, index: int, cfg: DistillConfig, seed: int
) -> ChatRequest:
    call_seed = derive_seed(seed, "distill", draft.question_id, index)
    user = (
        "Answer the question below using only the source material.\n\n"
        f"Question:\n{draft.question}\n\n"
        f"Source material:\n{draft.context.rendered_text}"
    )
    return chat_request(
        user,
        TEACHER_SYSTEM_PROMPT,
        temperature=cfg.temperature_schedule[index],
        seed=call_seed,
        think_mode=True,
    )


def distill(
    draft: QuestionDraft, cfg: DistillConfig, gw: Gateway, *, seed: int = 0
) -> DistillResult:
    """Fan one question out to fan_out teacher calls.

    Per-call failures become failure records rather than aborting the batch;
    an all-failed fan-out simply returns zero samples alongside the records.
    """
    reqs = [build_distill_request(draft, i, cfg, seed) for i in range(cfg.fan_out)]
    outcomes = gw.chat_many(reqs)
    samples: list[CandidateSample] = []
    failures: list[DistillFailure] = []
    for i, outcome in enumerate(outcomes):
        if isinstance(outcome, Exception):
            failures.append(DistillFailure(draft.question_id, i, str(outcome)))
            continue
        answer = outcome.content.strip()
        think = (outcome.think or "").strip()
        if not answer:
            failures.append(DistillFailure(draft.question_id, i, "empty answer"))
            continue
        try:
            _reject_delimiters(answer, "answer", answer)
            _reject_delimiters(think, "think", think)
        except GenerationError as exc:
            failures.append(DistillFailure(draft.question_id, i, str(exc)))
            continue
        samples.append(
            CandidateSample(
                sample_id=f"{draft.question_id}-d{i:02d}",
                question_id=draft.question_id,
                question=draft.question,
                think=think,
                answer=answer,
                qtype=draft.qtype,
                context_chunk_ids=draft.context.context_chunk_ids,
                teacher_id=outcome.backend_id,
                distill_index=i,
                temperature=cfg.temperature_schedule[i],
                seed=reqs[i].seed or 0,
            )
        )
    return DistillResult(samples=samples, failures=failures)


def to_sft_record(sample: CandidateSample) -> dict:
    """Chat-format training record; think folds into the assistant turn."""
    if sample.think:
        assistant = (
            f"{formats.THINK_OPEN}{sample.think}{formats.THINK_CLOSE}{sample.answer}"
        )
    else:
        assistant = sample.answer
    return {
        "messages": [
            {"role": "user", "content": sample.question},
            {"role": "assistant", "content": assistant},
        ],
        "meta": {
            "sample_id": sample.sample_id,
            "question_id": sample.question_id,
            "qtype": sample.qtype,
            "context_chunk_ids": list(sample.context_chunk_ids),
            "teacher_id": sample.teacher_id,
            "distill_index": sample.distill_index,
        },
    }
