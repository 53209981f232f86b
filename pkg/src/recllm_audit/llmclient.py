"""Chat-completion providers, a record/replay store and cost accounting.

Three providers share one interface, ``provider.complete(bundle, params,
repetition=0) -> RawResponse``:

* :class:`LiveProvider` POSTs to ``<base_url>/chat/completions`` with retries;
* :class:`MockProvider` answers deterministically from a catalog;
* :class:`ReplayProvider` serves stored responses from a JSONL file and, when
  given an inner provider, records misses (record mode).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import random
import statistics
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import CacheMissError, ConfigError, ProviderError, TransportError
from .promptgen import PromptBundle
from .stats import nearest_rank

DEFAULT_ALPHA = 0.02  # currency per 1000 tokens
DEFAULT_MAX_TOKENS = 800
ENV_API_KEY = "RECLLM_API_KEY"
ENV_BASE_URL = "RECLLM_BASE_URL"


@dataclass(frozen=True)
class CompletionParams:
    model: str = "gpt-3.5-turbo"
    temperature: float = 0.0
    max_tokens: int = DEFAULT_MAX_TOKENS

    def __post_init__(self):
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ConfigError("max_tokens must be >= 1")

    def as_dict(self) -> dict:
        return {"temperature": self.temperature, "max_tokens": self.max_tokens}


@dataclass(frozen=True)
class RawResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    latency: float
    provider_tag: str
    tokens_approximate: bool = False

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


def approx_tokens(text: str) -> int:
    """Provider-agnostic fallback: one token per four characters, rounded up."""
    return math.ceil(len(text) / 4)


def request_key(model: str, messages: list, params: dict, repetition: int = 0) -> str:
    """Content hash of a call. Repetitions beyond the first get their own key."""
    payload = {"model": model, "messages": messages, "params": params}
    if repetition:
        payload["repetition"] = repetition
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# --------------------------------------------------------------------------
# live


def httpx_transport(url: str, headers: dict, body: dict, timeout: float):
    """Default transport; returns ``(status_code, parsed_json_or_None)``."""
    import httpx

    try:
        resp = httpx.post(url, headers=headers, json=body, timeout=timeout)
    except httpx.HTTPError as exc:
        raise ConnectionError(str(exc)) from exc
    try:
        data = resp.json()
    except ValueError:
        data = None
    return resp.status_code, data


def _is_transient(status: int) -> bool:
    return status == 429 or status >= 500


class LiveProvider:
    tag = "live"

    def __init__(self, base_url: Optional[str] = None, api_key: Optional[str] = None,
                 transport: Callable = httpx_transport, max_attempts: int = 5,
                 backoff: float = 1.0, timeout: float = 60.0, sleep: Callable = time.sleep,
                 seed: int = 0, max_concurrency: int = 4):
        self.base_url = (base_url or os.environ.get(ENV_BASE_URL) or "https://api.openai.com/v1").rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY)
        if not self.api_key:
            raise ConfigError(f"live provider needs an API key (set {ENV_API_KEY})")
        self.transport = transport
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.timeout = timeout
        self.sleep = sleep
        self._jitter = random.Random(seed)
        self._lock = threading.Lock()
        if max_concurrency < 1:
            raise ConfigError("max_concurrency must be >= 1")
        self._slots = threading.BoundedSemaphore(max_concurrency)

    def _delay(self, attempt: int) -> float:
        with self._lock:
            jitter = self._jitter.uniform(0, self.backoff)
        return self.backoff * 2 ** attempt + jitter

    def complete(self, bundle: PromptBundle, params: CompletionParams, repetition: int = 0) -> RawResponse:
        body = {"model": params.model, "messages": bundle.messages(), **params.as_dict()}
        headers = {"Authorization": f"Bearer {self.api_key}", "Content-Type": "application/json"}
        url = f"{self.base_url}/chat/completions"
        last_status, last_error = None, None
        start = time.perf_counter()
        for attempt in range(self.max_attempts):
            try:
                with self._slots:
                    status, data = self.transport(url, headers, body, self.timeout)
            except (ConnectionError, TimeoutError, OSError) as exc:
                last_error, last_status = exc, None
            else:
                if 200 <= status < 300 and data is not None:
                    return self._parse(data, time.perf_counter() - start)
                last_status = status
                if not _is_transient(status):
                    raise ProviderError(f"HTTP {status} from {url}", status)
            if attempt + 1 < self.max_attempts:
                self.sleep(self._delay(attempt))
        if last_status is not None:
            raise ProviderError(f"HTTP {last_status} from {url} after {self.max_attempts} attempts", last_status)
        raise TransportError(f"{url} unreachable after {self.max_attempts} attempts: {last_error}")

    @staticmethod
    def _parse(data: dict, latency: float) -> RawResponse:
        try:
            text = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed completion payload: {exc!r}") from exc
        usage = data.get("usage") or {}
        if "prompt_tokens" in usage and "completion_tokens" in usage:
            return RawResponse(text, int(usage["prompt_tokens"]), int(usage["completion_tokens"]),
                               latency, "live")
        return RawResponse(text, 0, approx_tokens(text), latency, "live", tokens_approximate=True)


# --------------------------------------------------------------------------
# mock


class MockProvider:
    """Deterministic synthetic recommender.

    The reply is a numbered list of ``k`` quoted catalog titles chosen by a
    generator seeded from the request hash and ``seed``, so the output is a
    pure function of (bundle, params, seed). ``weights`` (item id -> weight)
    skews the draw, e.g. towards popular items.
    """

    tag = "mock"

    def __init__(self, catalog, k: int = 10, seed: int = 0, weights: Optional[dict] = None,
                 domain: str = "movies"):
        self._ids = sorted(catalog)
        if not self._ids:
            raise ConfigError("mock provider needs a non-empty catalog")
        self._catalog = catalog
        self.k = k
        self.seed = seed
        self.domain = domain
        if weights:
            w = np.array([float(weights.get(i, 0.0)) for i in self._ids])
            self._p = w / w.sum()
        else:
            self._p = None

    def _line(self, rank: int, item) -> str:
        if self.domain == "music" and item.artist:
            return f"{rank}. {item.title} by {item.artist}"
        return f'{rank}. "{item.title}"'

    def complete(self, bundle: PromptBundle, params: CompletionParams, repetition: int = 0) -> RawResponse:
        key = request_key(params.model, bundle.messages(), params.as_dict())
        digest = hashlib.sha256(f"{key}:{self.seed}".encode()).digest()
        rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
        k = min(self.k, len(self._ids))
        picks = rng.choice(len(self._ids), size=k, replace=False, p=self._p)
        text = "\n".join(self._line(r, self._catalog[self._ids[i]]) for r, i in enumerate(picks, start=1))
        prompt_chars = sum(len(m["content"]) for m in bundle.messages())
        return RawResponse(text, math.ceil(prompt_chars / 4), approx_tokens(text), 0.0, "mock",
                           tokens_approximate=True)


# --------------------------------------------------------------------------
# record / replay


class ReplayStore:
    """Append-only JSONL store of completed calls keyed by request hash."""

    def __init__(self, path):
        self.path = Path(path)
        self._records: dict = {}
        self._lock = threading.Lock()
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        rec = json.loads(line)
                        self._records[rec["key_hash"]] = rec

    def __len__(self):
        return len(self._records)

    def __contains__(self, key):
        return key in self._records

    def get(self, key) -> Optional[dict]:
        return self._records.get(key)

    def append(self, record: dict) -> None:
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
            self._records[record["key_hash"]] = record


class ReplayProvider:
    """Serve calls from a :class:`ReplayStore`.

    Without ``inner`` a miss raises :class:`CacheMissError` when ``strict`` and
    otherwise returns an empty reply. With ``inner`` misses are forwarded and
    the answer is recorded.
    """

    tag = "replay"

    def __init__(self, store, inner=None, strict: bool = True):
        self.store = store if isinstance(store, ReplayStore) else ReplayStore(store)
        self.inner = inner
        self.strict = strict

    def complete(self, bundle: PromptBundle, params: CompletionParams, repetition: int = 0) -> RawResponse:
        messages = bundle.messages()
        key = request_key(params.model, messages, params.as_dict(), repetition)
        rec = self.store.get(key)
        if rec is not None:
            return RawResponse(rec["text"], int(rec["prompt_tokens"]), int(rec["completion_tokens"]),
                               float(rec["latency"]), "replay")
        if self.inner is None:
            if self.strict:
                raise CacheMissError(f"no stored response for key {key[:12]}")
            return RawResponse("", 0, 0, 0.0, "replay", tokens_approximate=True)
        resp = self.inner.complete(bundle, params, repetition)
        record = {
            "key_hash": key,
            "model": params.model,
            "messages": messages,
            "params": params.as_dict(),
            "text": resp.text,
            "prompt_tokens": resp.prompt_tokens,
            "completion_tokens": resp.completion_tokens,
            "latency": resp.latency,
        }
        if repetition:
            record["repetition"] = repetition
        self.store.append(record)
        return resp


def complete(bundle: PromptBundle, params: CompletionParams, provider, ledger=None,
             user_id=None, cell=None, repetition: int = 0) -> RawResponse:
    """Send one bundle through ``provider``; successful calls go on ``ledger``."""
    resp = provider.complete(bundle, params, repetition)
    if ledger is not None:
        ledger.record(resp, user_id=user_id, cell=cell)
    return resp


# --------------------------------------------------------------------------
# cost accounting


def estimate_cost(total_tokens: int, alpha: float = DEFAULT_ALPHA) -> float:
    """``(tokens / 1000) * alpha``."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    return total_tokens / 1000 * alpha


def projected_cost(n_users: int, n_prompts: int, cost_per_call: float) -> float:
    """Total spend for ``n_users`` users each receiving ``n_prompts`` prompts."""
    return n_users * n_prompts * cost_per_call


@dataclass(frozen=True)
class CallRecord:
    prompt_tokens: int
    completion_tokens: int
    latency: float
    cost: float
    user_id: object = None
    cell: Optional[str] = None


@dataclass
class CostLedger:
    alpha: float = DEFAULT_ALPHA
    records: list = field(default_factory=list)

    def __post_init__(self):
        self._lock = threading.Lock()

    def record(self, response: RawResponse, user_id=None, cell=None) -> CallRecord:
        rec = CallRecord(response.prompt_tokens, response.completion_tokens, response.latency,
                         estimate_cost(response.total_tokens, self.alpha), user_id, cell)
        with self._lock:
            self.records.append(rec)
        return rec

    def add(self, total_tokens: int, latency: float = 0.0, user_id=None, cell=None) -> CallRecord:
        rec = CallRecord(total_tokens, 0, latency, estimate_cost(total_tokens, self.alpha), user_id, cell)
        with self._lock:
            self.records.append(rec)
        return rec

    @property
    def n_calls(self) -> int:
        return len(self.records)

    @property
    def total_cost(self) -> float:
        return math.fsum(r.cost for r in self.records)

    @property
    def prompts_per_user(self) -> Optional[float]:
        users = {r.user_id for r in self.records if r.user_id is not None}
        return self.n_calls / len(users) if users else None


def ledger_summary(ledger: CostLedger) -> dict:
    """Totals plus mean/median/p95 (nearest-rank) latency and mean tokens per call."""
    n = ledger.n_calls
    tokens = [r.prompt_tokens + r.completion_tokens for r in ledger.records]
    out = {
        "alpha": ledger.alpha,
        "calls": n,
        "users": len({r.user_id for r in ledger.records if r.user_id is not None}),
        "prompts_per_user": ledger.prompts_per_user,
        "total_tokens": sum(tokens),
        "total_cost": ledger.total_cost,
        "mean_tokens_per_call": (sum(tokens) / n) if n else None,
        "latency_mean": None,
        "latency_median": None,
        "latency_p95": None,
    }
    if n:
        lat = sorted(r.latency for r in ledger.records)
        out["latency_mean"] = statistics.fmean(lat)
        out["latency_median"] = statistics.median(lat)
        out["latency_p95"] = nearest_rank(lat, 0.95)
    return out


def make_provider(kind: str, catalog=None, replay_path=None, strict: bool = True, seed: int = 0,
                  k: int = 10, domain: str = "movies", **live_kwargs):
    if kind == "mock":
        return MockProvider(catalog, k=k, seed=seed, domain=domain)
    if kind == "live":
        live = LiveProvider(seed=seed, **live_kwargs)
        return ReplayProvider(replay_path, inner=live) if replay_path else live
    if kind == "replay":
        if replay_path is None:
            raise ConfigError("replay provider needs a replay_path")
        return ReplayProvider(replay_path, strict=strict)
    raise ConfigError(f"unknown provider {kind!r}")
