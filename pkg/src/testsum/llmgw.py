"""Provider-agnostic chat/embedding gateway with a write-once content-hash cache,
retries with exponential backoff, and a bound on in-flight provider calls."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

log = logging.getLogger(__name__)

SUMMARY_TEMPERATURE = 0.2
SUMMARY_MAX_TOKENS = 128
JUDGE_TEMPERATURE = 0.0
SEMANTICS_TEMPERATURE = 0.0


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    user_text: str
    system_text: str = ""
    temperature: float = SUMMARY_TEMPERATURE
    max_output_tokens: int = SUMMARY_MAX_TOKENS

    def __post_init__(self):
        if not self.model_id:
            raise ValueError("model_id must be non-empty")
        if not self.user_text:
            raise ValueError("user_text must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be > 0")


@dataclass(frozen=True)
class ChatReply:
    text: str
    prompt_tokens: int = 0
    output_tokens: int = 0
    provider: str = ""
    cached: bool = False


@dataclass(frozen=True)
class EmbeddingRequest:
    model_id: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class EmbeddingReply:
    vectors: np.ndarray  # (n_tokens, dim), rows unit-normalized
    provider: str = ""
    cached: bool = False

    def __post_init__(self):
        if self.vectors.ndim != 2:
            raise ValueError("embedding reply must be a 2-d array")


class GatewayError(Exception):
    pass


class AuthMissing(GatewayError):
    def __init__(self, env_var: str):
        super().__init__(f"credential environment variable {env_var} is not set")
        self.env_var = env_var


class ProviderError(GatewayError):
    def __init__(self, status: int | None, body: str):
        super().__init__(f"provider error {status}: {body[:200]}")
        self.status = status
        self.body = body


class TransientError(ProviderError):
    """Timeouts, 429 and 5xx: worth retrying."""


def cache_key(request: ChatRequest | EmbeddingRequest) -> str:
    if isinstance(request, ChatRequest):
        payload = {
            "kind": "chat",
            "model_id": request.model_id,
            "system_text": request.system_text,
            "user_text": request.user_text,
            "temperature": repr(float(request.temperature)),
            "max_output_tokens": int(request.max_output_tokens),
        }
    else:
        payload = {"kind": "embedding", "model_id": request.model_id, "tokens": list(request.tokens)}
    canonical = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class Provider(Protocol):
    name: str

    def chat(self, request: ChatRequest) -> ChatReply: ...

    def embed(self, request: EmbeddingRequest) -> EmbeddingReply: ...


# -- mock provider ----------------------------------------------------------------

_WORD = re.compile(r"[A-Za-z][a-z]+|[A-Z]+(?![a-z])|\d+")
_VERBS = ("returns", "matches", "equals", "handles", "rejects", "produces", "keeps", "stores")
_OPENERS = ("Verifies that", "Checks that", "Tests that", "Ensures that")
_FILLER = ("the", "expected", "value", "result", "correct", "given", "input", "when", "is", "called")


def _code_words(prompt: str) -> list[str]:
    m = re.search(r"\[(CODE|ASSERTION)\]\n(.*?)\n\[/\1\]", prompt, re.DOTALL)
    body = m.group(2) if m else prompt
    words = []
    for ident in re.findall(r"[A-Za-z_][A-Za-z0-9_]*", body):
        words += [w.lower() for w in _WORD.findall(ident)]
    stop = {"public", "void", "test", "final", "new", "string", "int", "assert", "static"}
    return [w for w in words if w not in stop and len(w) > 1] or list(_FILLER)


class MockProvider:
    """Deterministic offline provider: replies depend only on (seed, request key).

    Judge prompts get ``Score: X`` with X = 1 + 4*(d mod 1000)/999 to one
    decimal; other chat prompts get a short sentence built from identifiers in
    the prompt's code block; embeddings are non-negative unit vectors derived
    from token hashes, so identical tokens embed identically.
    """

    def __init__(self, seed: int = 0, *, dim: int = 32, judge_score: float | None = None,
                 name: str = "mock"):
        self.seed = seed
        self.dim = dim
        self.judge_score = judge_score
        self.name = name

    def _digest(self, key: str) -> int:
        return int(hashlib.sha256(f"{self.seed}:{key}".encode()).hexdigest(), 16)

    def chat(self, request: ChatRequest) -> ChatReply:
        from testsum.promptkit import JUDGE_HEAD, build_semantics_prompt

        d = self._digest(cache_key(request))
        prompt = request.user_text
        if prompt.startswith(JUDGE_HEAD):
            score = self.judge_score
            if score is None:
                score = round(1 + 4 * (d % 1000) / 999, 1)
            text = f"Score: {score:g}" if float(score).is_integer() else f"Score: {score}"
        elif prompt.startswith(build_semantics_prompt("x").split("\n\n", 1)[0]):
            words = _code_words(prompt)
            pick = [words[(d >> (8 * i)) % len(words)] for i in range(min(6, len(words)))]
            text = "Checks that " + " ".join(pick) + "."
        else:
            words = _code_words(prompt)
            rng = np.random.default_rng(d % (2**63))
            n = int(rng.integers(6, 16))
            subject = [words[int(i)] for i in rng.integers(0, len(words), size=n // 2)]
            rest = [_FILLER[int(i)] for i in rng.integers(0, len(_FILLER), size=n - n // 2 - 3)]
            opener = _OPENERS[d % len(_OPENERS)]
            verb = _VERBS[(d >> 16) % len(_VERBS)]
            text = " ".join([opener, *subject, verb, *rest]).strip() + "."
        return ChatReply(text, len(prompt.split()), len(text.split()), self.name)

    def embed(self, request: EmbeddingRequest) -> EmbeddingReply:
        rows = []
        for tok in request.tokens:
            h = hashlib.sha256(f"{self.seed}:{request.model_id}:{tok}".encode()).digest()
            rng = np.random.default_rng(int.from_bytes(h[:8], "big"))
            v = np.abs(rng.standard_normal(self.dim))
            rows.append(v / np.linalg.norm(v))
        vectors = np.array(rows, dtype=float).reshape(len(rows), self.dim)
        return EmbeddingReply(vectors, self.name)


def mock_provider(seed: int = 0, **kwargs) -> MockProvider:
    return MockProvider(seed, **kwargs)


# -- OpenAI-style HTTP adapter ------------------------------------------------------

@dataclass(frozen=True)
class ProviderConfig:
    name: str
    base_url: str = ""
    model_id: str = ""
    credential_env_var: str = ""
    kind: str = "chat"  # chat | embedding | mock
    seed: int = 0


def load_provider_configs(path: str | Path) -> list[ProviderConfig]:
    """Provider config: a JSON list (or ``{"providers": [...]}``) of entries."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, dict):
        data = data.get("providers", [])
    configs = []
    for entry in data:
        unknown = set(entry) - set(ProviderConfig.__dataclass_fields__)
        if unknown:
            raise ValueError(f"{path}: unknown provider fields {sorted(unknown)}")
        if entry.get("kind", "chat") not in ("chat", "embedding", "mock"):
            raise ValueError(f"{path}: bad provider kind {entry.get('kind')!r}")
        configs.append(ProviderConfig(**entry))
    return configs


class OpenAIProvider:
    """Adapter for OpenAI-style ``/chat/completions`` and ``/embeddings`` endpoints.

    Request: ``{"model", "messages": [system?, user], "temperature", "max_tokens"}``.
    Reply: ``choices[0].message.content`` and ``usage.{prompt,completion}_tokens``.
    Embeddings: ``{"model", "input": [tokens]}`` -> ``data[i].embedding``.
    """

    def __init__(self, config: ProviderConfig, *, timeout: float = 60.0, client=None):
        self.config = config
        self.name = config.name
        self.timeout = timeout
        self._client = client

    def _headers(self) -> dict[str, str]:
        env = self.config.credential_env_var
        key = os.environ.get(env) if env else None
        if not key:
            raise AuthMissing(env or "<unset credential_env_var>")
        return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    def _post(self, path: str, payload: dict) -> dict:
        import httpx

        headers = self._headers()
        url = self.config.base_url.rstrip("/") + path
        client = self._client or httpx
        try:
            resp = client.post(url, json=payload, headers=headers, timeout=self.timeout)
        except httpx.TimeoutException as exc:
            raise TransientError(None, f"timeout: {exc}") from exc
        except httpx.TransportError as exc:
            raise TransientError(None, f"transport: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientError(resp.status_code, resp.text)
        if resp.status_code >= 400:
            raise ProviderError(resp.status_code, resp.text)
        return resp.json()

    def chat(self, request: ChatRequest) -> ChatReply:
        messages = []
        if request.system_text:
            messages.append({"role": "system", "content": request.system_text})
        messages.append({"role": "user", "content": request.user_text})
        data = self._post("/chat/completions", {
            "model": request.model_id,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        })
        try:
            text = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(200, f"unexpected reply shape: {json.dumps(data)[:200]}") from exc
        usage = data.get("usage") or {}
        return ChatReply(text, int(usage.get("prompt_tokens", 0)),
                         int(usage.get("completion_tokens", 0)), self.name)

    def embed(self, request: EmbeddingRequest) -> EmbeddingReply:
        data = self._post("/embeddings", {"model": request.model_id, "input": list(request.tokens)})
        vectors = np.array([d["embedding"] for d in data["data"]], dtype=float)
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        return EmbeddingReply(vectors / np.where(norms == 0, 1, norms), self.name)


def provider_from_config(config: ProviderConfig) -> Provider:
    if config.kind == "mock":
        return MockProvider(config.seed, name=config.name)
    return OpenAIProvider(config)


# -- gateway --------------------------------------------------------------------------

@dataclass
class GatewayStats:
    hits: int = 0
    misses: int = 0
    provider_calls: int = 0
    retries: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def bump(self, **counts: int) -> None:
        with self._lock:
            for k, v in counts.items():
                setattr(self, k, getattr(self, k) + v)


class Gateway:
    """Routes requests to providers by model id, caching every reply on disk.

    Cache entries are one JSON file per key, written to a temp file and
    hard-linked into place, so an existing entry is never overwritten.
    """

    def __init__(
        self,
        providers: Provider | dict[str, Provider],
        cache_dir: str | Path | None = None,
        *,
        max_concurrency: int = 4,
        max_retries: int = 3,
        backoff: Sequence[float] = (1.0, 2.0, 4.0),
        sleep: Callable[[float], None] = time.sleep,
    ):
        self._providers = providers
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self._slots = threading.BoundedSemaphore(max_concurrency)
        self.max_retries = max_retries
        self.backoff = tuple(backoff)
        self._sleep = sleep
        self.stats = GatewayStats()

    def provider_for(self, model_id: str) -> Provider:
        if isinstance(self._providers, dict):
            if model_id in self._providers:
                return self._providers[model_id]
            if "*" in self._providers:
                return self._providers["*"]
            raise GatewayError(f"no provider configured for model {model_id!r}")
        return self._providers

    # cache ------------------------------------------------------------------------
    def _path(self, key: str) -> Path | None:
        if self.cache_dir is None:
            return None
        return self.cache_dir / key[:2] / f"{key}.json"

    def _read(self, key: str) -> dict | None:
        path = self._path(key)
        if path is None or not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def _write(self, key: str, record: dict) -> None:
        path = self._path(key)
        if path is None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(record, fh, ensure_ascii=False, sort_keys=True)
            try:
                os.link(tmp, path)
            except FileExistsError:
                pass  # write-once: first writer wins
        finally:
            os.unlink(tmp)

    def is_cached(self, request: ChatRequest | EmbeddingRequest) -> bool:
        path = self._path(cache_key(request))
        return path is not None and path.exists()

    # calls ------------------------------------------------------------------------
    def _call(self, fn, request):
        attempt = 0
        while True:
            try:
                with self._slots:
                    self.stats.bump(provider_calls=1)
                    return fn(request)
            except TransientError as exc:
                if attempt >= self.max_retries:
                    raise ProviderError(exc.status, exc.body) from exc
                delay = self.backoff[min(attempt, len(self.backoff) - 1)]
                log.warning("transient provider failure (%s); retrying in %.1fs", exc.status, delay)
                self.stats.bump(retries=1)
                self._sleep(delay)
                attempt += 1

    def complete(self, request: ChatRequest) -> ChatReply:
        key = cache_key(request)
        hit = self._read(key)
        if hit is not None:
            self.stats.bump(hits=1)
            return ChatReply(hit["text"], hit["prompt_tokens"], hit["output_tokens"],
                             hit["provider"], cached=True)
        self.stats.bump(misses=1)
        reply = self._call(self.provider_for(request.model_id).chat, request)
        record = {k: v for k, v in asdict(reply).items() if k != "cached"}
        self._write(key, {**record, "request": asdict(request)})
        stored = self._read(key) if self.cache_dir is not None else None
        if stored is not None and stored["text"] != reply.text:
            # another writer got there first; the stored reply is authoritative
            return ChatReply(stored["text"], stored["prompt_tokens"], stored["output_tokens"],
                             stored["provider"])
        return reply

    def embed(self, request: EmbeddingRequest) -> EmbeddingReply:
        key = cache_key(request)
        hit = self._read(key)
        if hit is not None:
            self.stats.bump(hits=1)
            vectors = np.array(hit["vectors"], dtype=float).reshape(len(request.tokens), -1)
            return EmbeddingReply(vectors, hit["provider"], cached=True)
        self.stats.bump(misses=1)
        reply = self._call(self.provider_for(request.model_id).embed, request)
        if reply.vectors.shape[0] != len(request.tokens):
            raise ProviderError(200, "embedding count does not match token count")
        self._write(key, {"vectors": reply.vectors.tolist(), "provider": reply.provider,
                          "model_id": request.model_id})
        # round-trip through the cache format so hits and misses agree bit for bit
        return EmbeddingReply(np.array(reply.vectors.tolist(), dtype=float), reply.provider)

    def embedder(self, model_id: str) -> Callable[[Sequence[str]], np.ndarray]:
        def _embed(tokens: Sequence[str]) -> np.ndarray:
            return self.embed(EmbeddingRequest(model_id, tuple(tokens))).vectors
        return _embed
