"""Chat and embedding access with retries, admission control, and mocks.

Real backends speak OpenAI-style JSON over HTTP. Mock backends are pure
functions of the request (messages, temperature, seed) plus a salt, so the
whole pipeline runs offline and byte-deterministically. The gateway itself
is backend-agnostic: it bounds concurrency with a semaphore, retries
transient failures with exponential backoff and bounded jitter, splits think
blocks, and can append every exchange to a transcript file.
"""
from __future__ import annotations

import hashlib
import json
import os
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import requests

from . import formats
from .errors import (
    GatewayError,
    NonRetriableError,
    ProtocolError,
    RetriableError,
    RetryExhaustedError,
)

# --- request/response types --------------------------------------------------


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise GatewayError(f"bad message role: {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[Message, ...]
    temperature: float = 0.0
    seed: int | None = None
    max_tokens: int = 2048
    think_mode: bool = False

    def __post_init__(self):
        if not self.messages:
            raise GatewayError("chat request needs at least one message")
        if self.temperature < 0:
            raise GatewayError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_tokens < 1:
            raise GatewayError(f"max_tokens must be >= 1, got {self.max_tokens}")

    def last_user_content(self) -> str:
        for msg in reversed(self.messages):
            if msg.role == "user":
                return msg.content
        return ""


def chat_request(
    user: str,
    system: str = "",
    *,
    temperature: float = 0.0,
    seed: int | None = None,
    max_tokens: int = 2048,
    think_mode: bool = False,
) -> ChatRequest:
    msgs: list[Message] = []
    if system:
        msgs.append(Message("system", system))
    msgs.append(Message("user", user))
    return ChatRequest(
        messages=tuple(msgs),
        temperature=temperature,
        seed=seed,
        max_tokens=max_tokens,
        think_mode=think_mode,
    )


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass(frozen=True)
class RawCompletion:
    text: str
    usage: Usage = Usage()


@dataclass(frozen=True)
class Completion:
    content: str
    think: str | None
    backend_id: str
    usage: Usage = Usage()


def request_fingerprint(req: ChatRequest) -> str:
    """Stable 16-hex digest of (messages, temperature, seed); mocks key on it."""
    payload = json.dumps(
        {
            "messages": [[m.role, m.content] for m in req.messages],
            "temperature": repr(req.temperature),
            "seed": req.seed,
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


# --- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class GatewayConfig:
    backend: str = "mock"  # mock | http
    endpoint: str = ""
    model_name: str = "mock-model"
    api_key_env: str = ""  # name of the env var holding the bearer token
    max_parallel: int = 4
    max_retries: int = 2
    backoff_base: float = 0.5
    timeout: float = 60.0
    embed_batch_size: int = 64
    embed_dimension: int = 1024
    transcript_path: str = ""
    mock_salt: int = 0

    def __post_init__(self):
        if self.backend not in ("mock", "http"):
            raise GatewayError(f"unknown backend: {self.backend!r}")
        if self.backend == "http" and not self.endpoint:
            raise GatewayError("http backend needs an endpoint")
        if self.max_parallel < 1:
            raise GatewayError("max_parallel must be >= 1")
        if self.max_retries < 0:
            raise GatewayError("max_retries must be >= 0")
        if self.backoff_base <= 0:
            raise GatewayError("backoff_base must be positive")
        if self.embed_batch_size < 1:
            raise GatewayError("embed_batch_size must be >= 1")
        if self.embed_dimension < 1:
            raise GatewayError("embed_dimension must be >= 1")


# --- mock backends -----------------------------------------------------------


def _digest_bytes(req: ChatRequest, salt: int, label: str = "") -> bytes:
    payload = f"{salt}|{label}|{request_fingerprint(req)}"
    return hashlib.sha256(payload.encode("utf-8")).digest()


def default_mock_response(req: ChatRequest, salt: int = 0) -> str:
    """Format-aware templated response.

    Reads the prompt for layout markers and answers in kind: rubric prompts
    get in-range scores derived from the request hash, verdict prompts get a
    hash-picked A/B/tie, question prompts get a question/reasoning/answer
    triple echoing the question type, and think-mode prompts get a think
    block plus an answer. Deterministic in (messages, temperature, seed, salt).
    """
    digest = _digest_bytes(req, salt)
    tag = digest[:6].hex()
    prompt = "\n".join(m.content for m in req.messages)
    ranges = formats.extract_score_ranges(prompt)
    if formats.SCORES_SECTION in prompt and ranges:
        lines = [formats.SCORES_SECTION]
        for i, (name, lo, hi) in enumerate(ranges):
            frac = digest[i % len(digest)] / 255.0
            value = round(lo + frac * (hi - lo), 1)
            value = min(max(value, lo), hi)
            lines.append(f"{name}: {value:g}")
        lines.append(formats.RATIONALE_SECTION)
        lines.append(f"Templated rationale {tag}.")
        return "\n".join(lines)
    if formats.VERDICT_SECTION in prompt:
        verdict = ("A", "B", "tie")[digest[0] % 3]
        return (
            f"{formats.JUSTIFICATION_SECTION}\nTemplated comparison {tag}.\n"
            f"{formats.VERDICT_SECTION}\n{verdict}"
        )
    if formats.QUESTION_SECTION in prompt:
        m = re.search(r"\b(Q[1-9])\b", prompt)
        code = m.group(1) if m else "Q0"
        return (
            f"{formats.QUESTION_SECTION}\n"
            f"({code}) Templated question {tag} about the supplied material?\n"
            f"{formats.REASONING_SECTION}\nTemplated reasoning {tag}.\n"
            f"{formats.ANSWER_SECTION}\nTemplated answer {tag}."
        )
    if req.think_mode:
        return (
            f"{formats.THINK_OPEN}Templated thinking {tag}.{formats.THINK_CLOSE}"
            f"Templated final answer {tag}."
        )
    return f"Templated response {tag}."


class MockChatBackend:
    """Scripted responses by request fingerprint, templated fallback otherwise.

    Script values may be strings or exceptions; exceptions are raised, which
    is how tests inject backend failures.
    """

    def __init__(self, script=None, fallback=None, backend_id="mock-chat", salt=0):
        self.backend_id = backend_id
        self.script = dict(script or {})
        self.fallback = fallback
        self.salt = salt
        self.calls = 0

    def complete(self, req: ChatRequest) -> RawCompletion:
        self.calls += 1
        fp = request_fingerprint(req)
        if fp in self.script:
            value = self.script[fp]
            if isinstance(value, Exception):
                raise value
            text = value
        elif self.fallback is not None:
            text = self.fallback(req, self.salt)
        else:
            text = default_mock_response(req, self.salt)
        prompt_tokens = sum(len(m.content.split()) for m in req.messages)
        return RawCompletion(
            text=text,
            usage=Usage(prompt_tokens=prompt_tokens, completion_tokens=len(text.split())),
        )


class MockEmbeddingBackend:
    """Hash-seeded unit vectors: same text always embeds identically."""

    def __init__(self, dimension: int = 1024, salt: int = 0):
        self.backend_id = "mock-embed"
        self.dimension = dimension
        self.salt = salt

    def embed(self, texts: list[str]) -> np.ndarray:
        rows = []
        for text in texts:
            seed_bytes = hashlib.sha256(
                f"{self.salt}|{text}".encode("utf-8")
            ).digest()
            rng = np.random.default_rng(int.from_bytes(seed_bytes[:8], "big"))
            vec = rng.standard_normal(self.dimension)
            rows.append(vec / np.linalg.norm(vec))
        return np.asarray(rows)


# --- http backends -----------------------------------------------------------


def _auth_headers(cfg: GatewayConfig) -> dict[str, str]:
    headers = {"Content-Type": "application/json"}
    if cfg.api_key_env:
        key = os.environ.get(cfg.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
    return headers


def _classify_status(status: int, body: str) -> None:
    if status == 429 or status >= 500:
        raise RetriableError(f"HTTP {status}: {body[:200]}")
    if 400 <= status < 500:
        raise NonRetriableError(f"HTTP {status}: {body[:200]}", status=status)


class HttpChatBackend:
    """POST /chat/completions in the common JSON shape."""

    def __init__(self, cfg: GatewayConfig, session=None):
        self.cfg = cfg
        self.backend_id = cfg.model_name
        self._session = session or requests.Session()

    def complete(self, req: ChatRequest) -> RawCompletion:
        payload = {
            "model": self.cfg.model_name,
            "messages": [{"role": m.role, "content": m.content} for m in req.messages],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if req.seed is not None:
            payload["seed"] = req.seed
        url = self.cfg.endpoint.rstrip("/") + "/chat/completions"
        try:
            resp = self._session.post(
                url, json=payload, headers=_auth_headers(self.cfg), timeout=self.cfg.timeout
            )
        except requests.RequestException as exc:
            raise RetriableError(f"transport failure: {exc}") from exc
        _classify_status(resp.status_code, resp.text)
        try:
            data = resp.json()
            content = data["choices"][0]["message"]["content"]
            usage = data.get("usage", {})
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(
                f"malformed chat payload: {exc}", payload=resp.text
            ) from exc
        return RawCompletion(
            text=content,
            usage=Usage(
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                completion_tokens=int(usage.get("completion_tokens", 0)),
            ),
        )


class HttpEmbeddingBackend:
    """POST /embeddings in the common JSON shape."""

    def __init__(self, cfg: GatewayConfig, session=None):
        self.cfg = cfg
        self.backend_id = cfg.model_name
        self._session = session or requests.Session()

    def embed(self, texts: list[str]) -> np.ndarray:
        payload = {"model": self.cfg.model_name, "input": list(texts)}
        url = self.cfg.endpoint.rstrip("/") + "/embeddings"
        try:
            resp = self._session.post(
                url, json=payload, headers=_auth_headers(self.cfg), timeout=self.cfg.timeout
            )
        except requests.RequestException as exc:
            raise RetriableError(f"transport failure: {exc}") from exc
        _classify_status(resp.status_code, resp.text)
        try:
            data = resp.json()
            items = sorted(data["data"], key=lambda d: d["index"])
            rows = [item["embedding"] for item in items]
        except (ValueError, KeyError, TypeError) as exc:
            raise ProtocolError(
                f"malformed embedding payload: {exc}", payload=resp.text
            ) from exc
        if len(rows) != len(texts):
            raise ProtocolError(
                f"embedding count mismatch: sent {len(texts)}, got {len(rows)}",
                payload=resp.text,
            )
        return np.asarray(rows, dtype=np.float64)


# --- the gateway -------------------------------------------------------------


class Gateway:
    """Concurrency-bounded, retrying access to one chat and one embedding backend."""

    def __init__(
        self,
        cfg: GatewayConfig | None = None,
        chat_backend=None,
        embedding_backend=None,
        sleep=time.sleep,
    ):
        self.cfg = cfg or GatewayConfig()
        if chat_backend is None:
            chat_backend = (
                HttpChatBackend(self.cfg)
                if self.cfg.backend == "http"
                else MockChatBackend(salt=self.cfg.mock_salt)
            )
        if embedding_backend is None:
            embedding_backend = (
                HttpEmbeddingBackend(self.cfg)
                if self.cfg.backend == "http"
                else MockEmbeddingBackend(
                    dimension=self.cfg.embed_dimension, salt=self.cfg.mock_salt
                )
            )
        self.chat_backend = chat_backend
        self.embedding_backend = embedding_backend
        self.backend_id = getattr(chat_backend, "backend_id", "unknown")
        self._sleep = sleep
        self._semaphore = threading.BoundedSemaphore(self.cfg.max_parallel)
        self._jitter = random.Random(0)
        self._lock = threading.Lock()

    # retry policy: attempt i sleeps backoff_base * 2**(i-1) * (1 + 0.1*u), u in [0,1)
    def _call(self, fn):
        attempts = self.cfg.max_retries + 1
        for attempt in range(1, attempts + 1):
            try:
                with self._semaphore:
                    return fn()
            except RetriableError as exc:
                if attempt == attempts:
                    raise RetryExhaustedError(
                        f"gave up after {attempts} attempts: {exc}", attempts=attempts
                    ) from exc
                with self._lock:
                    u = self._jitter.random()
                self._sleep(self.cfg.backoff_base * 2 ** (attempt - 1) * (1.0 + 0.1 * u))

    def chat(self, req: ChatRequest) -> Completion:
        raw = self._call(lambda: self.chat_backend.complete(req))
        try:
            think, content = formats.split_think(raw.text)
        except ValueError as exc:
            raise ProtocolError(str(exc), payload=raw.text) from exc
        if not req.think_mode:
            # non-think requests fold any reasoning away entirely
            think = None
        completion = Completion(
            content=content.strip(),
            think=think,
            backend_id=getattr(self.chat_backend, "backend_id", "unknown"),
            usage=raw.usage,
        )
        self._log({"kind": "chat", "fingerprint": request_fingerprint(req),
                   "response": raw.text})
        return completion

    def chat_many(self, reqs: list[ChatRequest]) -> list[Completion | Exception]:
        """Issue requests concurrently; failures come back in-slot, not raised."""
        if not reqs:
            return []
        results: list[Completion | Exception] = [None] * len(reqs)  # type: ignore

        def run(i: int) -> None:
            try:
                results[i] = self.chat(reqs[i])
            except Exception as exc:  # caller decides what is fatal
                results[i] = exc

        with ThreadPoolExecutor(max_workers=self.cfg.max_parallel) as pool:
            list(pool.map(run, range(len(reqs))))
        return results

    def embed(self, texts: list[str]) -> np.ndarray:
        """Embed texts in order; rows come back unit-norm."""
        if not texts:
            raise GatewayError("nothing to embed")
        if any(not t or not t.strip() for t in texts):
            raise GatewayError("cannot embed empty text")
        rows: list[np.ndarray] = []
        for start in range(0, len(texts), self.cfg.embed_batch_size):
            batch = texts[start : start + self.cfg.embed_batch_size]
            arr = self._call(lambda b=batch: self.embedding_backend.embed(b))
            arr = np.asarray(arr, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[0] != len(batch):
                raise ProtocolError(
                    f"embedding batch shape {arr.shape} for {len(batch)} texts"
                )
            if arr.shape[1] != self.cfg.embed_dimension:
                raise ProtocolError(
                    f"embedding dimension {arr.shape[1]}, expected {self.cfg.embed_dimension}"
                )
            norms = np.linalg.norm(arr, axis=1)
            if np.any(norms == 0.0) or not np.all(np.isfinite(norms)):
                raise ProtocolError("degenerate embedding: zero or non-finite norm")
            rows.extend(arr / norms[:, None])
        return np.asarray(rows)

    def _log(self, record: dict) -> None:
        if not self.cfg.transcript_path:
            return
        with self._lock:
            parent = os.path.dirname(self.cfg.transcript_path)
            if parent:
                os.makedirs(parent, exist_ok=True)
            with open(self.cfg.transcript_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False))
                fh.write("\n")


def mock_gateway(
    salt: int = 0,
    script=None,
    fallback=None,
    dimension: int = 1024,
    max_parallel: int = 4,
) -> Gateway:
    """Offline gateway with deterministic mock backends; no sleeping on retry."""
    cfg = GatewayConfig(
        backend="mock", embed_dimension=dimension, max_parallel=max_parallel,
        mock_salt=salt,
    )
    return Gateway(
        cfg,
        chat_backend=MockChatBackend(script=script, fallback=fallback, salt=salt),
        embedding_backend=MockEmbeddingBackend(dimension=dimension, salt=salt),
        sleep=lambda _t: None,
    )
