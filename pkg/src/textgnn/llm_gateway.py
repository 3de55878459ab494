"""Pluggable completion backend with content-addressed caching.

Every pipeline stage talks to a :class:`CompletionGateway`, which consults a
persistent on-disk cache keyed by a digest of the request before touching the
backend.  A deterministic :class:`MockBackend` makes the whole pipeline
runnable offline.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import re
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Optional, Protocol

from .errors import (
    BackendUnavailable,
    BudgetExceeded,
    PromptTooLong,
    UnparseablePrompt,
)
from .tokenizing import DEFAULT_TOKENIZER, SimpleTokenizer


@dataclass(frozen=True)
class CompletionRequest:
    model_id: str
    prompt: str
    max_output_tokens: int
    temperature: float = 0.0
    request_tag: str = "default"

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")


def cache_key(request: CompletionRequest) -> str:
    """Collision-resistant digest over the fields that determine the output."""
    payload = json.dumps(
        [
            request.model_id,
            request.prompt,
            request.max_output_tokens,
            request.temperature,
        ],
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class StageUsage:
    calls: int = 0
    input_tokens: int = 0
    output_tokens: int = 0
    cache_hits: int = 0

    def as_dict(self) -> Dict[str, int]:
        return {
            "calls": self.calls,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "cache_hits": self.cache_hits,
        }


class UsageLedger:
    """Per-stage call and token accounting; input/output tokens count
    non-cached calls only."""

    def __init__(self) -> None:
        self._stages: Dict[str, StageUsage] = {}
        self._lock = threading.Lock()

    def record(
        self, stage: str, input_tokens: int, output_tokens: int, cached: bool
    ) -> None:
        with self._lock:
            usage = self._stages.setdefault(stage, StageUsage())
            usage.calls += 1
            if cached:
                usage.cache_hits += 1
            else:
                usage.input_tokens += input_tokens
                usage.output_tokens += output_tokens

    def snapshot(self) -> Dict[str, Dict[str, int]]:
        with self._lock:
            return {stage: usage.as_dict() for stage, usage in self._stages.items()}

    def totals(self) -> StageUsage:
        with self._lock:
            total = StageUsage()
            for usage in self._stages.values():
                total.calls += usage.calls
                total.input_tokens += usage.input_tokens
                total.output_tokens += usage.output_tokens
                total.cache_hits += usage.cache_hits
            return total


class CompletionBackend(Protocol):
    model_id: str

    def complete(self, request: CompletionRequest) -> str: ...


# --- deterministic mock backend ---

_AGG_NATURAL_RE = re.compile(
    r"Given the central node (?P<center>.*?)\. "
    r"The selected one-hop neighbors are \[(?P<nbrs>.*)\]\. "
    r"Please aggregate neighbor nodes and update a concise yet meaningful "
    r"representation for the central node\. "
    r"Note connected nodes should share similar semantics and vice versa\.",
    re.DOTALL,
)


class MockBackend:
    """Order-invariant test backend.

    Parses the center and neighbor token multisets from either the compact
    stage format (``AGG|center:x|nbrs:a,b``) or the rendered aggregation
    prompt, and returns the lexicographically sorted union of center and
    neighbor tokens truncated to the output budget.  Prompts without
    neighbor structure are treated as initialization payloads: their own
    sorted token set is returned.
    """

    model_id = "mock"

    def __init__(self, tokenizer: Optional[SimpleTokenizer] = None) -> None:
        self.tokenizer = tokenizer or DEFAULT_TOKENIZER

    def complete(self, request: CompletionRequest) -> str:
        center, neighbor_texts = self._parse(request.prompt)
        tokens = set(self.tokenizer.tokenize(center))
        for text in neighbor_texts:
            tokens.update(self.tokenizer.tokenize(text))
        ordered = sorted(tokens)[: request.max_output_tokens]
        return self.tokenizer.detokenize(ordered)

    def _parse(self, prompt: str) -> tuple:
        if prompt.startswith("AGG|"):
            parts = prompt.split("|")
            if (
                len(parts) != 3
                or not parts[1].startswith("center:")
                or not parts[2].startswith("nbrs:")
            ):
                raise UnparseablePrompt(prompt[:80])
            center = parts[1][len("center:"):]
            nbr_blob = parts[2][len("nbrs:"):]
            neighbors = [n for n in nbr_blob.split(",") if n]
            return center, neighbors
        match = _AGG_NATURAL_RE.search(prompt)
        if match:
            nbr_blob = match.group("nbrs")
            neighbors = [n for n in nbr_blob.split(", ") if n]
            return match.group("center"), neighbors
        # Initialization prompt: the payload is the prompt itself.
        return prompt, []


def mock_complete(request: CompletionRequest) -> str:
    """Module-level convenience wrapper around :class:`MockBackend`."""
    return MockBackend().complete(request)


# --- remote HTTP backend ---

class RemoteBackend:
    """Chat-completion endpoint client with bounded exponential backoff.

    Endpoint, auth token and model id come from the LLM_ENDPOINT,
    LLM_API_KEY and LLM_MODEL environment variables unless given explicitly.
    """

    def __init__(
        self,
        endpoint: Optional[str] = None,
        api_key: Optional[str] = None,
        model_id: Optional[str] = None,
        max_attempts: int = 5,
        backoff_base: float = 0.5,
        timeout: float = 60.0,
        sleep: Callable[[float], None] = time.sleep,
        session=None,
    ) -> None:
        self.endpoint = endpoint or os.environ.get("LLM_ENDPOINT", "")
        self.api_key = api_key or os.environ.get("LLM_API_KEY", "")
        self.model_id = model_id or os.environ.get("LLM_MODEL", "")
        if not self.endpoint:
            raise ValueError("no endpoint configured (set LLM_ENDPOINT)")
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.timeout = timeout
        self._sleep = sleep
        if session is None:
            import requests

            session = requests.Session()
        self._session = session
        self._rng = random.Random()

    def complete(self, request: CompletionRequest) -> str:
        body = {
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "max_tokens": request.max_output_tokens,
            "temperature": request.temperature,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        last_error: Optional[Exception] = None
        for attempt in range(self.max_attempts):
            try:
                resp = self._session.post(
                    self.endpoint, json=body, headers=headers, timeout=self.timeout
                )
                if resp.status_code == 429 or resp.status_code >= 500:
                    raise IOError(f"retryable status {resp.status_code}")
                resp.raise_for_status()
                data = resp.json()
                return data["choices"][0]["message"]["content"]
            except Exception as exc:  # noqa: BLE001 - every failure is retryable here
                last_error = exc
                if attempt + 1 < self.max_attempts:
                    delay = self.backoff_base * (2**attempt)
                    delay += self._rng.uniform(0, delay / 2)
                    self._sleep(delay)
        raise BackendUnavailable(str(last_error))


# --- gateway ---

@dataclass
class GatewayConfig:
    cache_dir: Optional[Path] = None
    context_window: int = 128_000
    token_budget: Optional[int] = None
    max_in_flight: int = 8


class CompletionGateway:
    """Caching, accounting front door for all completion calls."""

    def __init__(
        self,
        backend: CompletionBackend,
        config: Optional[GatewayConfig] = None,
        tokenizer: Optional[SimpleTokenizer] = None,
    ) -> None:
        self.backend = backend
        self.config = config or GatewayConfig()
        self.tokenizer = tokenizer or DEFAULT_TOKENIZER
        self.ledger = UsageLedger()
        self._semaphore = threading.Semaphore(self.config.max_in_flight)
        if self.config.cache_dir is not None:
            Path(self.config.cache_dir).mkdir(parents=True, exist_ok=True)
        self._memory_cache: Dict[str, str] = {}
        self._lock = threading.Lock()

    # cache layout: <cache_dir>/<first 2 hex chars>/<digest>
    def _cache_path(self, digest: str) -> Optional[Path]:
        if self.config.cache_dir is None:
            return None
        return Path(self.config.cache_dir) / digest[:2] / digest

    def _cache_get(self, digest: str) -> Optional[str]:
        with self._lock:
            if digest in self._memory_cache:
                return self._memory_cache[digest]
        path = self._cache_path(digest)
        if path is not None and path.exists():
            try:
                record = json.loads(path.read_text(encoding="utf-8"))
                return record["text"]
            except (json.JSONDecodeError, KeyError):
                return None
        return None

    def _cache_put(self, digest: str, request: CompletionRequest, text: str) -> None:
        with self._lock:
            self._memory_cache[digest] = text
        path = self._cache_path(digest)
        if path is None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        record = {
            "model_id": request.model_id,
            "prompt": request.prompt,
            "max_output_tokens": request.max_output_tokens,
            "temperature": request.temperature,
            "request_tag": request.request_tag,
            "text": text,
        }
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(record, fh, ensure_ascii=False)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def complete(self, request: CompletionRequest) -> str:
        prompt_tokens = self.tokenizer.count(request.prompt)
        if prompt_tokens > self.config.context_window:
            raise PromptTooLong(
                f"{prompt_tokens} tokens exceed the {self.config.context_window} "
                "token context window"
            )

        digest = cache_key(request)
        cached = self._cache_get(digest)
        if cached is not None:
            self.ledger.record(request.request_tag, 0, 0, cached=True)
            return cached

        if self.config.token_budget is not None:
            total = self.ledger.totals()
            if total.input_tokens + total.output_tokens >= self.config.token_budget:
                raise BudgetExceeded(
                    f"token budget {self.config.token_budget} spent"
                )

        with self._semaphore:
            text = self.backend.complete(request)
        self._cache_put(digest, request, text)
        self.ledger.record(
            request.request_tag,
            prompt_tokens,
            self.tokenizer.count(text),
            cached=False,
        )
        return text

    def export_ledger(self) -> Dict[str, Dict[str, int]]:
        return self.ledger.snapshot()
