from __future__ import annotations

import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))  # make `import oracles` work

from bloomforge.corpus import Chunk, count_tokens
from bloomforge.gateway import mock_gateway


def make_chunk(cid: str, text: str, tree_path: str = "ops/tracking/radar") -> Chunk:
    return Chunk(
        id=cid,
        doc_id="d0",
        text=text,
        kind="paragraph",
        tree_path=tree_path,
        token_count=count_tokens(text),
    )


def scores_response(values: dict[str, float], rationale: str = "Scored as directed.") -> str:
    lines = ["[SCORES]"]
    lines.extend(f"{name}: {value:g}" for name, value in values.items())
    lines.append("[RATIONALE]")
    lines.append(rationale)
    return "\n".join(lines)


def verdict_response(verdict: str, justification: str = "Compared as directed.") -> str:
    return f"[JUSTIFICATION]\n{justification}\n[VERDICT]\n{verdict}"


def question_response(question: str, reasoning: str, answer: str) -> str:
    return (
        f"[QUESTION]\n{question}\n[REASONING]\n{reasoning}\n[ANSWER]\n{answer}"
    )


@pytest.fixture
def gw():
    return mock_gateway()


@pytest.fixture(autouse=True)
def _pinned_epoch(monkeypatch):
    # manifests timestamp from this; pinning it keeps reruns byte-comparable
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")


def pytest_terminal_summary(terminalreporter):
    # capture never reaches the terminal reporter, so the per-criterion
    # verdicts land in plain pytest output (and anything tee'd from it)
    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for line in verdicts:
        terminalreporter.write_line(line)
