from __future__ import annotations

import json

import numpy as np
import pytest

from bloomforge import formats
from bloomforge.errors import (
    GatewayError,
    NonRetriableError,
    ProtocolError,
    RetriableError,
    RetryExhaustedError,
)
from bloomforge.gateway import (
    ChatRequest,
    Gateway,
    GatewayConfig,
    Message,
    MockChatBackend,
    MockEmbeddingBackend,
    RawCompletion,
    _classify_status,
    chat_request,
    default_mock_response,
    mock_gateway,
    request_fingerprint,
)


# --- request plumbing ---------------------------------------------------------


def test_message_role_validated():
    with pytest.raises(GatewayError, match="role"):
        Message("narrator", "hi")


def test_chat_request_validation():
    with pytest.raises(GatewayError):
        ChatRequest(messages=())
    with pytest.raises(GatewayError):
        chat_request("hi", temperature=-0.1)
    with pytest.raises(GatewayError):
        chat_request("hi", max_tokens=0)


def test_chat_request_helper_builds_roles():
    req = chat_request("ask", system="rules", temperature=0.7, seed=3)
    assert [m.role for m in req.messages] == ["system", "user"]
    assert req.last_user_content() == "ask"
    assert chat_request("only").messages[0].role == "user"


def test_fingerprint_shape_and_sensitivity():
    base = chat_request("hello", temperature=0.7, seed=1)
    fp = request_fingerprint(base)
    assert len(fp) == 16 and int(fp, 16) >= 0
    assert request_fingerprint(chat_request("hello", temperature=0.7, seed=2)) != fp
    assert request_fingerprint(chat_request("hello", temperature=0.9, seed=1)) != fp
    assert request_fingerprint(chat_request("hello!", temperature=0.7, seed=1)) != fp
    # settings that do not change the sampled distribution do not change the key
    same = ChatRequest(base.messages, temperature=0.7, seed=1, max_tokens=9, think_mode=True)
    assert request_fingerprint(same) == fp


# --- templated mock responses ---------------------------------------------------


RUBRIC = [
    ("clarity", 0.0, 4.0, "how clear"),
    ("depth", 0.0, 2.0, "how deep"),
    ("bonus", -2.0, 1.0, "adjustment"),
]


def test_default_response_scores_prompt_in_range():
    prompt = (
        "Rate the answer.\n"
        + formats.score_range_lines(RUBRIC)
        + f"\nReply with {formats.SCORES_SECTION} then {formats.RATIONALE_SECTION}."
    )
    text = default_mock_response(chat_request(prompt, seed=5))
    scores, rationale = formats.parse_labeled_scores(
        text, [name for name, _, _, _ in RUBRIC]
    )
    assert rationale
    for name, lo, hi, _ in RUBRIC:
        assert lo <= scores[name] <= hi
        assert scores[name] == round(scores[name], 1)


def test_default_response_verdict_prompt_parses():
    prompt = f"Pick the better answer. End with {formats.VERDICT_SECTION} and A, B, or tie."
    text = default_mock_response(chat_request(prompt, seed=1))
    verdict, justification = formats.parse_verdict(text)
    assert verdict in ("A", "B", "tie")
    assert justification


def test_default_response_question_prompt_echoes_code():
    prompt = (
        f"Write one (Q3) question.\nUse {formats.QUESTION_SECTION}, "
        f"{formats.REASONING_SECTION}, {formats.ANSWER_SECTION}."
    )
    text = default_mock_response(chat_request(prompt, seed=2))
    sections = formats.parse_sections(
        text,
        [formats.QUESTION_SECTION, formats.REASONING_SECTION, formats.ANSWER_SECTION],
    )
    assert "(Q3)" in sections[formats.QUESTION_SECTION]


def test_default_response_think_mode_and_plain():
    plain = default_mock_response(chat_request("say something"))
    assert formats.THINK_OPEN not in plain
    thought = default_mock_response(chat_request("say something", think_mode=True))
    think, content = formats.split_think(thought)
    assert think and content


def test_default_response_varies_with_seed_and_salt():
    a = default_mock_response(chat_request("say something", seed=1))
    b = default_mock_response(chat_request("say something", seed=2))
    c = default_mock_response(chat_request("say something", seed=1), salt=9)
    assert a != b
    assert a != c
    assert a == default_mock_response(chat_request("say something", seed=1))


# --- mock backends ---------------------------------------------------------------


def test_scripted_response_and_fallback():
    req = chat_request("scripted call", seed=0)
    backend = MockChatBackend(script={request_fingerprint(req): "canned"})
    assert backend.complete(req).text == "canned"
    other = backend.complete(chat_request("unscripted", seed=0))
    assert other.text.startswith("Templated response")
    assert backend.calls == 2


def test_scripted_exception_is_raised():
    req = chat_request("fail me", seed=0)
    backend = MockChatBackend(script={request_fingerprint(req): RetriableError("boom")})
    with pytest.raises(RetriableError, match="boom"):
        backend.complete(req)


def test_custom_fallback_wins_over_template():
    backend = MockChatBackend(fallback=lambda req, salt: f"fb:{salt}", salt=3)
    assert backend.complete(chat_request("x")).text == "fb:3"


def test_mock_embeddings_unit_and_content_addressed():
    backend = MockEmbeddingBackend(dimension=16)
    mat = backend.embed(["alpha", "beta", "alpha"])
    assert mat.shape == (3, 16)
    assert np.allclose(np.linalg.norm(mat, axis=1), 1.0)
    assert mat[0].tobytes() == mat[2].tobytes()
    assert mat[0].tobytes() != mat[1].tobytes()
    salted = MockEmbeddingBackend(dimension=16, salt=1).embed(["alpha"])
    assert salted[0].tobytes() != mat[0].tobytes()


# --- retry policy -----------------------------------------------------------------


class FlakyChat:
    backend_id = "flaky"

    def __init__(self, failures: int, exc: Exception | None = None):
        self.failures = failures
        self.exc = exc or RetriableError("transient")
        self.calls = 0

    def complete(self, req: ChatRequest) -> RawCompletion:
        self.calls += 1
        if self.calls <= self.failures:
            raise self.exc
        return RawCompletion(text="recovered")


def gateway_over(backend, max_retries=2, backoff_base=0.5):
    sleeps: list[float] = []
    cfg = GatewayConfig(max_retries=max_retries, backoff_base=backoff_base)
    gw = Gateway(cfg, chat_backend=backend,
                 embedding_backend=MockEmbeddingBackend(dimension=4),
                 sleep=sleeps.append)
    return gw, sleeps


def test_retriable_failures_then_success():
    backend = FlakyChat(failures=2)
    gw, sleeps = gateway_over(backend, max_retries=2)
    out = gw.chat(chat_request("go"))
    assert out.content == "recovered"
    assert backend.calls == 3
    assert len(sleeps) == 2
    # exponential base doubling, jitter at most 10 percent on top
    assert 0.5 <= sleeps[0] <= 0.55
    assert 1.0 <= sleeps[1] <= 1.1


def test_retry_exhaustion_counts_attempts():
    backend = FlakyChat(failures=99)
    gw, sleeps = gateway_over(backend, max_retries=2)
    with pytest.raises(RetryExhaustedError) as err:
        gw.chat(chat_request("go"))
    assert backend.calls == 3
    assert err.value.attempts == 3
    assert len(sleeps) == 2


def test_non_retriable_fails_immediately():
    backend = FlakyChat(failures=99, exc=NonRetriableError("HTTP 400: bad", status=400))
    gw, sleeps = gateway_over(backend)
    with pytest.raises(NonRetriableError):
        gw.chat(chat_request("go"))
    assert backend.calls == 1
    assert sleeps == []


def test_zero_retries_still_one_attempt():
    backend = FlakyChat(failures=0)
    gw, _ = gateway_over(backend, max_retries=0)
    assert gw.chat(chat_request("go")).content == "recovered"
    failing = FlakyChat(failures=1)
    gw2, _ = gateway_over(failing, max_retries=0)
    with pytest.raises(RetryExhaustedError) as err:
        gw2.chat(chat_request("go"))
    assert err.value.attempts == 1


@pytest.mark.parametrize(
    "status,exc",
    [(429, RetriableError), (500, RetriableError), (503, RetriableError),
     (400, NonRetriableError), (404, NonRetriableError)],
)
def test_status_classification(status, exc):
    with pytest.raises(exc):
        _classify_status(status, "body")


def test_status_ok_passes_through():
    assert _classify_status(200, "") is None
    with pytest.raises(NonRetriableError) as err:
        _classify_status(403, "denied")
    assert err.value.status == 403


# --- gateway chat surface -----------------------------------------------------------


def test_chat_splits_think_when_requested():
    req = chat_request("ponder", think_mode=True)
    script = {request_fingerprint(req): "<think>working</think>the answer"}
    gw = mock_gateway(script=script)
    out = gw.chat(req)
    assert out.think == "working"
    assert out.content == "the answer"


def test_chat_folds_think_for_plain_requests():
    req = chat_request("ponder")
    script = {request_fingerprint(req): "<think>working</think>the answer"}
    gw = mock_gateway(script=script)
    out = gw.chat(req)
    assert out.think is None
    assert out.content == "the answer"


def test_chat_rejects_unclosed_think():
    req = chat_request("ponder", think_mode=True)
    script = {request_fingerprint(req): "<think>never closed"}
    gw = mock_gateway(script=script)
    with pytest.raises(ProtocolError):
        gw.chat(req)


def test_chat_many_keeps_failures_in_slot():
    reqs = [chat_request(f"call {i}", seed=i) for i in range(4)]
    script = {
        request_fingerprint(reqs[0]): "first",
        request_fingerprint(reqs[2]): NonRetriableError("HTTP 400: no", status=400),
    }
    gw = mock_gateway(script=script)
    out = gw.chat_many(reqs)
    assert out[0].content == "first"
    assert isinstance(out[2], NonRetriableError)
    assert out[1].content.startswith("Templated")
    assert out[3].content.startswith("Templated")
    assert gw.chat_many([]) == []


def test_transcript_appends_fingerprints(tmp_path):
    path = tmp_path / "log" / "transcript.jsonl"
    cfg = GatewayConfig(transcript_path=str(path))
    gw = Gateway(cfg, chat_backend=MockChatBackend(),
                 embedding_backend=MockEmbeddingBackend(dimension=4),
                 sleep=lambda _t: None)
    r1, r2 = chat_request("one"), chat_request("two")
    gw.chat(r1)
    gw.chat(r2)
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert [l["fingerprint"] for l in lines] == [
        request_fingerprint(r1), request_fingerprint(r2)
    ]


# --- gateway embed surface ------------------------------------------------------------


class CountingEmbed:
    backend_id = "counting"

    def __init__(self, dimension: int):
        self.dimension = dimension
        self.batches: list[int] = []

    def embed(self, texts):
        self.batches.append(len(texts))
        return MockEmbeddingBackend(dimension=self.dimension).embed(texts)


def test_embed_batches_and_preserves_order():
    backend = CountingEmbed(dimension=8)
    cfg = GatewayConfig(embed_batch_size=2, embed_dimension=8)
    gw = Gateway(cfg, chat_backend=MockChatBackend(),
                 embedding_backend=backend, sleep=lambda _t: None)
    texts = [f"text {i}" for i in range(5)]
    mat = gw.embed(texts)
    assert backend.batches == [2, 2, 1]
    assert mat.shape == (5, 8)
    whole = MockEmbeddingBackend(dimension=8).embed(texts)
    assert np.allclose(mat, whole)
    assert np.allclose(np.linalg.norm(mat, axis=1), 1.0)


def test_embed_rejects_empty_inputs():
    gw = mock_gateway(dimension=8)
    with pytest.raises(GatewayError):
        gw.embed([])
    with pytest.raises(GatewayError):
        gw.embed(["fine", "   "])


class WrongShapeEmbed:
    backend_id = "wrong"

    def __init__(self, dimension):
        self.dimension = dimension

    def embed(self, texts):
        return np.ones((len(texts), self.dimension))


def test_embed_rejects_wrong_dimension():
    cfg = GatewayConfig(embed_dimension=16)
    gw = Gateway(cfg, chat_backend=MockChatBackend(),
                 embedding_backend=WrongShapeEmbed(4), sleep=lambda _t: None)
    with pytest.raises(ProtocolError, match="dimension"):
        gw.embed(["a"])


def test_config_validation():
    with pytest.raises(GatewayError):
        GatewayConfig(backend="carrier-pigeon")
    with pytest.raises(GatewayError):
        GatewayConfig(backend="http")
    with pytest.raises(GatewayError):
        GatewayConfig(max_parallel=0)
    with pytest.raises(GatewayError):
        GatewayConfig(max_retries=-1)
