"""Model backends: an HTTP chat-completions client plus deterministic mocks.

Every backend exposes one method, ``complete(bundle, context)``, and returns
a RawResponse. The HTTP adapter speaks the OpenAI-compatible multimodal JSON
shape (message content as a list of text and base64 data-URI image parts);
it is the only place wire-format code lives. Mock backends stand in for the
model so every strategy, and the full CLI, runs offline and reproducibly.

The API key is read exclusively from the environment variable named in the
config. It is never read from a file and never written to disk; manifests
record the variable NAME only.
"""

from __future__ import annotations

import base64
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import requests

from .instances import Instance
from .prompts import PromptBundle, bundle_sha256, format_route_text
from .rng import Pcg32, derive_seed, seed_from_string
from .solver import Route, SolvedInstance

STATUS_OK = "ok"
STATUS_TIMEOUT = "timeout"
STATUS_RETRIES_EXHAUSTED = "retries_exhausted"

KIND_HTTP = "http"
KIND_MOCK_ORACLE = "mock-oracle"
KIND_MOCK_SCRIPTED = "mock-scripted"
BACKEND_KINDS = (KIND_HTTP, KIND_MOCK_ORACLE, KIND_MOCK_SCRIPTED)

# single-shot strategies sample near-greedily; the ensemble needs diverse draws
DEFAULT_TEMPERATURE_ENSEMBLE = 1.0
DEFAULT_TEMPERATURE_SINGLE = 0.2


class BackendError(RuntimeError):
    """Harness-level backend fault (bad config, missing key, broken replay)."""


def http_error_status(code: int) -> str:
    return f"http_error:{code}"


@dataclass(frozen=True)
class BackendConfig:
    kind: str = KIND_MOCK_ORACLE
    endpoint_url: str = ""
    model_name: str = "mock"
    api_key_env_var: str = "TSP_EYEBALL_API_KEY"
    temperature: float = DEFAULT_TEMPERATURE_SINGLE
    max_output_tokens: int = 1024
    request_timeout_s: float = 60.0
    max_retries: int = 3
    max_concurrent_requests: int = 4
    generation_config: dict = field(default_factory=dict)
    safety_settings: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.kind not in BACKEND_KINDS:
            raise BackendError(f"unknown backend kind {self.kind!r}")
        if self.temperature < 0:
            raise BackendError("temperature must be nonnegative")
        if self.max_concurrent_requests < 1:
            raise BackendError("max_concurrent_requests must be at least 1")
        if self.max_retries < 0:
            raise BackendError("max_retries must be nonnegative")
        if self.kind == KIND_HTTP and not self.endpoint_url:
            raise BackendError("http backend needs an endpoint_url")


@dataclass(frozen=True)
class RawResponse:
    text: str
    latency_ms: float
    model_name: str
    attempt_index: int
    transport_status: str

    def __post_init__(self) -> None:
        if (self.transport_status == STATUS_OK) == (self.text == ""):
            raise ValueError("text must be non-empty exactly when transport_status is ok")


@dataclass(frozen=True)
class CompletionContext:
    """Identifies one draw so mocks, transcripts, and replays line up."""

    instance_id: str
    draw_index: int
    tag: str = ""


class Backend:
    kind: str = "abstract"

    def complete(self, bundle: PromptBundle, context: CompletionContext) -> RawResponse:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# mock oracle

@dataclass(frozen=True)
class MockOracleConfig:
    p_optimal: float = 1.0
    p_perturbed: float = 0.0
    p_incorrect_id: float = 0.0
    p_incomplete: float = 0.0
    p_unparseable: float = 0.0
    perturb_moves: int = 2
    seed: int = 0

    def validate(self) -> None:
        probs = (self.p_optimal, self.p_perturbed, self.p_incorrect_id, self.p_incomplete, self.p_unparseable)
        if any(p < 0 for p in probs):
            raise BackendError("mock probabilities must be nonnegative")
        if sum(probs) > 1.0 + 1e-12:
            raise BackendError("mock probabilities must sum to at most 1")
        if self.perturb_moves < 0:
            raise BackendError("perturb_moves must be nonnegative")


def two_opt_perturb(route: Route, moves: int, rng: Pcg32) -> Route:
    """Apply ``moves`` random segment reversals; stays a valid permutation."""
    order = list(route.order)
    n = len(order)
    for _ in range(moves):
        i = rng.randint(0, n - 2)
        j = rng.randint(i + 1, n - 1)
        order[i : j + 1] = reversed(order[i : j + 1])
    return Route(tuple(order))


def _open_form(ids: list[int]) -> str:
    return "<<start>> " + " -> ".join(str(i) for i in ids) + " <<end>>"


def mock_oracle_respond(
    instance: Instance, solved: SolvedInstance, config: MockOracleConfig, draw_index: int
) -> str:
    """Deterministic canned response for (config.seed, instance_id, draw_index).

    The outcome category is sampled first (optimal, perturbed optimum,
    incorrect-ID fault, incomplete fault, unparseable fault, in that
    cumulative order); leftover probability mass yields a uniform random
    permutation, which is valid but usually far from optimal.
    """
    if solved.instance.instance_id != instance.instance_id:
        raise BackendError("solved does not correspond to instance")
    rng = Pcg32(derive_seed(config.seed, seed_from_string(instance.instance_id), draw_index))
    n = instance.n
    u = rng.random()
    edge = config.p_optimal
    if u < edge:
        return format_route_text(solved.optimal_route)
    edge += config.p_perturbed
    if u < edge:
        return format_route_text(two_opt_perturb(solved.optimal_route, config.perturb_moves, rng))
    edge += config.p_incorrect_id
    if u < edge:
        ids = list(range(1, n + 1))
        rng.shuffle(ids)
        ids[rng.randint(0, n - 1)] = n + 1 + rng.randint(0, 3)
        return _open_form(ids)
    edge += config.p_incomplete
    if u < edge:
        ids = list(range(1, n + 1))
        rng.shuffle(ids)
        ids.pop(rng.randint(0, n - 1))
        return _open_form(ids)
    edge += config.p_unparseable
    if u < edge:
        return "I could not identify a tour from the image."
    ids = list(range(1, n + 1))
    rng.shuffle(ids)
    return format_route_text(Route(tuple(ids)))


class MockOracleBackend(Backend):
    """Answers from the known optimum with configurable fault injection."""

    kind = KIND_MOCK_ORACLE

    def __init__(
        self,
        config: MockOracleConfig,
        solved_by_id: Mapping[str, SolvedInstance],
        model_name: str = "mock-oracle",
    ) -> None:
        config.validate()
        self.config = config
        self._solved = dict(solved_by_id)
        self.model_name = model_name

    def complete(self, bundle: PromptBundle, context: CompletionContext) -> RawResponse:
        solved = self._solved.get(context.instance_id)
        if solved is None:
            raise BackendError(f"mock oracle has no solution for {context.instance_id!r}")
        text = mock_oracle_respond(solved.instance, solved, self.config, context.draw_index)
        return RawResponse(text, 0.0, self.model_name, context.draw_index, STATUS_OK)


# ---------------------------------------------------------------------------
# scripted replay

class ScriptedBackend(Backend):
    """Replays a recorded transcript keyed by (instance_id, draw_index)."""

    kind = KIND_MOCK_SCRIPTED

    def __init__(self, entries: Mapping[tuple[str, int], dict]) -> None:
        self._entries = dict(entries)

    @classmethod
    def from_transcript(cls, path: str | Path) -> "ScriptedBackend":
        entries: dict[tuple[str, int], dict] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                entries[(record["instance_id"], record["draw_index"])] = record
        return cls(entries)

    def complete(self, bundle: PromptBundle, context: CompletionContext) -> RawResponse:
        key = (context.instance_id, context.draw_index)
        record = self._entries.get(key)
        if record is None:
            raise BackendError(f"transcript has no entry for {key!r}")
        return RawResponse(
            record["text"],
            record.get("latency_ms", 0.0),
            record.get("model_name", "scripted"),
            context.draw_index,
            record.get("transport_status", STATUS_OK),
        )


# ---------------------------------------------------------------------------
# HTTP adapter

_RETRYABLE_CODES = {408, 409, 429, 500, 502, 503, 504}


def bundle_to_messages(bundle: PromptBundle) -> list[dict]:
    """One user message whose content interleaves text and data-URI images."""
    content: list[dict] = []
    for part in bundle.parts:
        if part.kind == "text":
            content.append({"type": "text", "text": part.text})
        else:
            b64 = base64.b64encode(part.image.data).decode("ascii")
            content.append(
                {"type": "image_url", "image_url": {"url": f"data:{part.image.mime};base64,{b64}"}}
            )
    return [{"role": "user", "content": content}]


class HttpBackend(Backend):
    """OpenAI-compatible chat-completions client.

    Transient failures (timeouts, connection errors, 408/429/5xx) retry with
    exponential backoff up to max_retries; other HTTP errors return
    immediately. Model content never raises: all failures surface in
    transport_status and parsing happens downstream. A bounded semaphore
    keeps at most max_concurrent_requests requests in flight.
    """

    kind = KIND_HTTP

    def __init__(
        self,
        config: BackendConfig,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
        api_key: str | None = None,
    ) -> None:
        config.validate()
        self.config = config
        self._session = session or requests.Session()
        self._sleep = sleep
        self._limiter = threading.BoundedSemaphore(config.max_concurrent_requests)
        if api_key is None:
            import os

            api_key = os.environ.get(config.api_key_env_var, "")
            if not api_key:
                raise BackendError(
                    f"environment variable {config.api_key_env_var} is not set; "
                    "it is the only accepted key source"
                )
        self._api_key = api_key

    def _payload(self, bundle: PromptBundle) -> dict:
        payload = {
            "model": self.config.model_name,
            "messages": bundle_to_messages(bundle),
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_output_tokens,
        }
        payload.update(self.config.generation_config)
        if self.config.safety_settings:
            payload["safety_settings"] = self.config.safety_settings
        return payload

    def complete(self, bundle: PromptBundle, context: CompletionContext) -> RawResponse:
        url = self.config.endpoint_url.rstrip("/") + "/chat/completions"
        payload = self._payload(bundle)
        headers = {"Authorization": f"Bearer {self._api_key}"}
        started = time.monotonic()
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self._sleep(min(0.5 * 2 ** (attempt - 1), 8.0))
            try:
                with self._limiter:
                    response = self._session.post(
                        url, json=payload, headers=headers, timeout=self.config.request_timeout_s
                    )
            except requests.RequestException:
                # timeouts and connection drops are transient; retry
                continue
            latency = (time.monotonic() - started) * 1000.0
            if response.status_code == 200:
                try:
                    text = response.json()["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError):
                    text = None
                if text:
                    return RawResponse(
                        text, latency, self.config.model_name, context.draw_index, STATUS_OK
                    )
                # 200 with an unusable body: not retryable, not parseable
                return RawResponse(
                    "", latency, self.config.model_name, context.draw_index, http_error_status(200)
                )
            if response.status_code in _RETRYABLE_CODES:
                continue
            return RawResponse(
                "", latency, self.config.model_name, context.draw_index,
                http_error_status(response.status_code),
            )
        latency = (time.monotonic() - started) * 1000.0
        return RawResponse("", latency, self.config.model_name, context.draw_index, STATUS_RETRIES_EXHAUSTED)


# ---------------------------------------------------------------------------
# transcript recording

class RecordingBackend(Backend):
    """Wraps any backend and appends one JSONL entry per completion."""

    def __init__(
        self,
        inner: Backend,
        transcript_path: str | Path,
        dump_prompts_dir: str | Path | None = None,
    ) -> None:
        self.inner = inner
        self.kind = inner.kind
        self._path = Path(transcript_path)
        self._path.parent.mkdir(parents=True, exist_ok=True)
        self._dump_dir = Path(dump_prompts_dir) if dump_prompts_dir else None
        if self._dump_dir:
            self._dump_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def complete(self, bundle: PromptBundle, context: CompletionContext) -> RawResponse:
        response = self.inner.complete(bundle, context)
        entry = {
            "instance_id": context.instance_id,
            "draw_index": context.draw_index,
            "tag": context.tag or bundle.strategy_tag,
            "n": bundle.n,
            "bundle_sha256": bundle_sha256(bundle),
            "model_name": response.model_name,
            "transport_status": response.transport_status,
            "latency_ms": response.latency_ms,
            "text": response.text,
        }
        line = json.dumps(entry, sort_keys=True)
        with self._lock:
            with open(self._path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
        if self._dump_dir is not None:
            self._dump_prompt(bundle, context)
        return response

    def _dump_prompt(self, bundle: PromptBundle, context: CompletionContext) -> None:
        lines = [f"# {context.instance_id} draw={context.draw_index} tag={bundle.strategy_tag}"]
        for part in bundle.parts:
            if part.kind == "text":
                lines.append(part.text)
            else:
                lines.append(f"[image sha256={part.image.sha256}]")
        name = f"{context.instance_id}_{context.draw_index:03d}_{bundle.strategy_tag}.txt"
        with self._lock:
            (self._dump_dir / name).write_text("\n".join(lines) + "\n", encoding="utf-8")
