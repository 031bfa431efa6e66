"""Delimited output layouts shared by prompt builders, parsers, and mocks.

Model-facing formats live in one place so the code that asks for a layout,
the code that parses it, and the deterministic mock that fakes it can never
drift apart. Parsers raise ValueError; callers wrap into their own error
types so failures carry stage context.
"""
from __future__ import annotations

import re
from typing import Mapping, Sequence

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"

QUESTION_SECTION = "[QUESTION]"
REASONING_SECTION = "[REASONING]"
ANSWER_SECTION = "[ANSWER]"
SCORES_SECTION = "[SCORES]"
RATIONALE_SECTION = "[RATIONALE]"
VERDICT_SECTION = "[VERDICT]"
JUSTIFICATION_SECTION = "[JUSTIFICATION]"

QUESTION_FORMAT_INSTRUCTION = (
    "Respond in exactly this layout:\n"
    f"{QUESTION_SECTION}\n<the question>\n"
    f"{REASONING_SECTION}\n<how a strong answer is reached>\n"
    f"{ANSWER_SECTION}\n<the reference answer>"
)

SCORES_FORMAT_INSTRUCTION = (
    "Respond in exactly this layout:\n"
    f"{SCORES_SECTION}\n<one 'name: value' line per listed score>\n"
    f"{RATIONALE_SECTION}\n<brief justification>"
)

VERDICT_FORMAT_INSTRUCTION = (
    "Respond in exactly this layout:\n"
    f"{JUSTIFICATION_SECTION}\n<brief comparison>\n"
    f"{VERDICT_SECTION}\nA, B, or tie"
)

# "- name: range lo to hi -- description"; mocks read these back from prompts.
SCORE_RANGE_LINE = "- {name}: range {lo:g} to {hi:g} -- {description}"
SCORE_RANGE_RE = re.compile(
    r"^- (?P<name>\w+): range (?P<lo>-?\d+(?:\.\d+)?) to (?P<hi>-?\d+(?:\.\d+)?) --",
    re.MULTILINE,
)


def split_think(text: str) -> tuple[str | None, str]:
    """Split a leading think block off text.

    Returns (think, content); think is None when no block leads the text.
    Raises ValueError when an opening delimiter is never closed.
    """
    stripped = text.lstrip()
    if not stripped.startswith(THINK_OPEN):
        return None, text
    end = stripped.find(THINK_CLOSE)
    if end < 0:
        raise ValueError("unbalanced think delimiter: opening tag never closed")
    think = stripped[len(THINK_OPEN):end]
    content = stripped[end + len(THINK_CLOSE):]
    return think.strip(), content.lstrip()


def parse_sections(
    text: str,
    required: Sequence[str],
    optional: Sequence[str] = (),
) -> dict[str, str]:
    """Cut text into marker-delimited sections.

    Each section runs from its marker to the next marker or the end. Only the
    first occurrence of a marker counts. Missing required markers raise
    ValueError naming the marker.
    """
    found: list[tuple[int, str]] = []
    for marker in [*required, *optional]:
        idx = text.find(marker)
        if idx < 0:
            if marker in required:
                raise ValueError(f"missing {marker} section")
            continue
        found.append((idx, marker))
    found.sort()
    sections: dict[str, str] = {}
    for pos, (idx, marker) in enumerate(found):
        start = idx + len(marker)
        end = found[pos + 1][0] if pos + 1 < len(found) else len(text)
        sections[marker] = text[start:end].strip()
    return sections


_SCORE_LINE_TEMPLATE = r"^\s*{name}\s*:\s*(-?\d+(?:\.\d+)?)\s*$"


def parse_labeled_scores(
    text: str, fields: Sequence[str]
) -> tuple[dict[str, float], str]:
    """Parse a [SCORES]/[RATIONALE] response into (scores, rationale).

    Every field must appear as its own "name: value" line inside the scores
    section; the rationale must be non-empty.
    """
    sections = parse_sections(text, required=(SCORES_SECTION, RATIONALE_SECTION))
    body = sections[SCORES_SECTION]
    scores: dict[str, float] = {}
    for field in fields:
        pattern = _SCORE_LINE_TEMPLATE.format(name=re.escape(field))
        match = re.search(pattern, body, re.MULTILINE)
        if match is None:
            raise ValueError(f"missing score line for '{field}'")
        scores[field] = float(match.group(1))
    rationale = sections[RATIONALE_SECTION]
    if not rationale:
        raise ValueError("empty rationale")
    return scores, rationale


def parse_verdict(text: str) -> tuple[str, str]:
    """Parse a [JUSTIFICATION]/[VERDICT] response into (verdict, justification).

    The verdict is normalized to "A", "B", or "tie".
    """
    sections = parse_sections(
        text, required=(VERDICT_SECTION,), optional=(JUSTIFICATION_SECTION,)
    )
    raw = sections[VERDICT_SECTION].strip()
    token = raw.split()[0].strip(".,") if raw else ""
    normalized = {"a": "A", "b": "B", "tie": "tie"}.get(token.lower())
    if normalized is None:
        raise ValueError(f"verdict must be A, B, or tie, got {raw!r}")
    return normalized, sections.get(JUSTIFICATION_SECTION, "")


def score_range_lines(
    fields: Sequence[tuple[str, float, float, str]]
) -> str:
    """Render '- name: range lo to hi -- description' lines for a rubric prompt."""
    return "\n".join(
        SCORE_RANGE_LINE.format(name=name, lo=lo, hi=hi, description=desc)
        for name, lo, hi, desc in fields
    )


def extract_score_ranges(prompt: str) -> list[tuple[str, float, float]]:
    """Read (name, lo, hi) score declarations back out of a rubric prompt."""
    return [
        (m.group("name"), float(m.group("lo")), float(m.group("hi")))
        for m in SCORE_RANGE_RE.finditer(prompt)
    ]
