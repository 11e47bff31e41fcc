"""Backend tests: mock oracle statistics, scripted replay, HTTP adapter."""

from __future__ import annotations

import base64
import json
import threading
import time

import pytest
import requests

from tsp_eyeball.backend import (
    BackendConfig,
    BackendError,
    CompletionContext,
    HttpBackend,
    MockOracleBackend,
    MockOracleConfig,
    RawResponse,
    RecordingBackend,
    ScriptedBackend,
    bundle_to_messages,
    mock_oracle_respond,
    two_opt_perturb,
)
from tsp_eyeball.instances import generate_instance
from tsp_eyeball.parse import (
    STATUS_INCOMPLETE,
    STATUS_INCORRECT_IDS,
    STATUS_UNPARSEABLE,
    STATUS_VALID,
    parse_response,
)
from tsp_eyeball.prompts import build_zero_shot, format_route_text
from tsp_eyeball.render import Image, encode_png
from tsp_eyeball.rng import Pcg32
from tsp_eyeball.solver import Route, solve_exact
from tests.conftest import load_golden

import numpy as np


def tiny_bundle(n: int = 5) -> "PromptBundle":
    img = Image.from_png(encode_png(np.zeros((4, 4, 3), dtype=np.uint8)))
    return build_zero_shot(img, n)


# ---------------------------------------------------------------------------
# config validation

def test_backend_config_validation():
    for bad in (
        BackendConfig(kind="carrier-pigeon"),
        BackendConfig(temperature=-0.1),
        BackendConfig(max_concurrent_requests=0),
        BackendConfig(max_retries=-1),
        BackendConfig(kind="http", endpoint_url=""),
    ):
        with pytest.raises(BackendError):
            bad.validate()
    BackendConfig().validate()
    BackendConfig(kind="http", endpoint_url="https://example.invalid/v1").validate()


def test_mock_config_validation():
    with pytest.raises(BackendError):
        MockOracleConfig(p_optimal=-0.1).validate()
    with pytest.raises(BackendError):
        MockOracleConfig(p_optimal=0.7, p_perturbed=0.7).validate()
    with pytest.raises(BackendError):
        MockOracleConfig(perturb_moves=-1).validate()
    MockOracleConfig(p_optimal=0.5, p_unparseable=0.5).validate()


def test_raw_response_invariant():
    with pytest.raises(ValueError):
        RawResponse("", 0.0, "m", 0, "ok")
    with pytest.raises(ValueError):
        RawResponse("hello", 0.0, "m", 0, "timeout")
    RawResponse("hello", 0.0, "m", 0, "ok")
    RawResponse("", 0.0, "m", 0, "http_error:500")


# ---------------------------------------------------------------------------
# mock oracle behavior

@pytest.fixture(scope="module")
def solved8():
    return solve_exact(generate_instance(8, 5))


def test_oracle_always_optimal(solved8):
    config = MockOracleConfig(p_optimal=1.0, seed=1)
    for draw in range(5):
        text = mock_oracle_respond(solved8.instance, solved8, config, draw)
        assert text == format_route_text(solved8.optimal_route)


def test_oracle_degenerate_categories(solved8):
    n = solved8.instance.n
    cases = {
        "p_perturbed": STATUS_VALID,
        "p_incorrect_id": STATUS_INCORRECT_IDS,
        "p_incomplete": STATUS_INCOMPLETE,
        "p_unparseable": STATUS_UNPARSEABLE,
    }
    for field_name, expected in cases.items():
        config = MockOracleConfig(**{"p_optimal": 0.0, field_name: 1.0, "seed": 3})
        for draw in range(8):
            text = mock_oracle_respond(solved8.instance, solved8, config, draw)
            assert parse_response(text, n).status == expected, field_name


def test_oracle_remainder_is_random_valid_tour(solved8):
    config = MockOracleConfig(p_optimal=0.0, seed=9)
    seen = set()
    for draw in range(10):
        text = mock_oracle_respond(solved8.instance, solved8, config, draw)
        out = parse_response(text, solved8.instance.n)
        assert out.status == STATUS_VALID
        seen.add(out.route.order)
    assert len(seen) > 1


def test_oracle_deterministic_per_draw(solved8):
    config = MockOracleConfig(p_optimal=0.4, p_unparseable=0.3, seed=7)
    a = [mock_oracle_respond(solved8.instance, solved8, config, d) for d in range(6)]
    b = [mock_oracle_respond(solved8.instance, solved8, config, d) for d in range(6)]
    assert a == b
    assert len(set(a)) > 1


def test_oracle_instance_id_isolation(solved8):
    # a different instance id must give an independent draw stream
    other = solve_exact(generate_instance(8, 6))
    config = MockOracleConfig(p_optimal=0.0, seed=7)
    a = [mock_oracle_respond(solved8.instance, solved8, config, d) for d in range(4)]
    b = [mock_oracle_respond(other.instance, other, config, d) for d in range(4)]
    assert a != b


def test_oracle_golden_draw_sequence(solved8):
    golden = load_golden("mock_draws.json")
    config = MockOracleConfig(
        p_optimal=0.3,
        p_perturbed=0.25,
        p_incorrect_id=0.15,
        p_incomplete=0.1,
        p_unparseable=0.1,
        perturb_moves=2,
        seed=123,
    )
    texts = [mock_oracle_respond(solved8.instance, solved8, config, d) for d in range(13)]
    assert texts == golden["texts"]


def test_oracle_mismatched_solution_rejected(solved8):
    other = solve_exact(generate_instance(6, 1))
    with pytest.raises(BackendError):
        mock_oracle_respond(solved8.instance, other, MockOracleConfig(), 0)


def test_two_opt_perturb_keeps_permutation():
    rng = Pcg32(4)
    route = Route(tuple(range(1, 11)))
    for moves in (0, 1, 5):
        out = two_opt_perturb(route, moves, rng)
        assert sorted(out.order) == list(range(1, 11))
    assert two_opt_perturb(route, 0, rng).order == route.order


def test_oracle_category_frequencies(solved8):
    # one-sided chi-square check over many draws; scipy provides the test
    scipy_stats = pytest.importorskip("scipy.stats")
    config = MockOracleConfig(
        p_optimal=0.5, p_perturbed=0.2, p_incorrect_id=0.1, p_incomplete=0.1,
        p_unparseable=0.1, perturb_moves=1, seed=2024,
    )
    n = solved8.instance.n
    optimal_text = format_route_text(solved8.optimal_route)
    counts = {"optimal": 0, STATUS_VALID: 0, STATUS_INCORRECT_IDS: 0, STATUS_INCOMPLETE: 0, STATUS_UNPARSEABLE: 0}
    draws = 10000
    for d in range(draws):
        text = mock_oracle_respond(solved8.instance, solved8, config, d)
        if text == optimal_text:
            counts["optimal"] += 1
        else:
            counts[parse_response(text, n).status] += 1
    # perturbation can land back on the optimum; fold that sliver into optimal
    expected = [draws * p for p in (0.5, 0.2, 0.1, 0.1, 0.1)]
    observed = [
        counts["optimal"], counts[STATUS_VALID], counts[STATUS_INCORRECT_IDS],
        counts[STATUS_INCOMPLETE], counts[STATUS_UNPARSEABLE],
    ]
    # shift perturbed-but-optimal mass is possible only optimal->perturbed
    result = scipy_stats.chisquare(observed, expected)
    assert result.pvalue > 1e-4, (observed, expected)


def test_mock_backend_complete(solved8):
    backend = MockOracleBackend(MockOracleConfig(seed=5), {solved8.instance.instance_id: solved8})
    bundle = tiny_bundle(8)
    response = backend.complete(bundle, CompletionContext(solved8.instance.instance_id, 2))
    assert response.transport_status == "ok"
    assert response.attempt_index == 2
    assert response.model_name == "mock-oracle"
    with pytest.raises(BackendError):
        backend.complete(bundle, CompletionContext("missing", 0))


# ---------------------------------------------------------------------------
# scripted replay

def test_scripted_backend_round_trip(tmp_path):
    path = tmp_path / "transcript.jsonl"
    entries = [
        {"instance_id": "a", "draw_index": 0, "text": "<<start>> 1 2 3 <<end>>"},
        {"instance_id": "a", "draw_index": 1, "text": "nope", "transport_status": "ok",
         "latency_ms": 12.5, "model_name": "gpt-test"},
    ]
    path.write_text("\n".join(json.dumps(e) for e in entries) + "\n\n")
    backend = ScriptedBackend.from_transcript(path)
    r0 = backend.complete(tiny_bundle(), CompletionContext("a", 0))
    assert r0.text == "<<start>> 1 2 3 <<end>>"
    assert r0.model_name == "scripted"
    r1 = backend.complete(tiny_bundle(), CompletionContext("a", 1))
    assert r1.latency_ms == 12.5
    assert r1.model_name == "gpt-test"
    with pytest.raises(BackendError):
        backend.complete(tiny_bundle(), CompletionContext("a", 2))
    with pytest.raises(BackendError):
        backend.complete(tiny_bundle(), CompletionContext("b", 0))


# ---------------------------------------------------------------------------
# HTTP adapter

class FakeResponse:
    def __init__(self, status_code: int, body=None, raw_text: str | None = None):
        self.status_code = status_code
        self._body = body
        self._raw_text = raw_text

    def json(self):
        if self._body is None:
            raise ValueError("not json")
        return self._body


def chat_body(text: str) -> dict:
    return {"choices": [{"message": {"content": text}}]}


class FakeSession:
    def __init__(self, outcomes):
        # each outcome is a FakeResponse or an exception instance to raise
        self.outcomes = list(outcomes)
        self.calls = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append({"url": url, "json": json, "headers": headers, "timeout": timeout})
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


def http_config(**overrides) -> BackendConfig:
    fields = dict(
        kind="http",
        endpoint_url="https://example.invalid/v1",
        model_name="vision-model",
        temperature=0.7,
        max_retries=2,
    )
    fields.update(overrides)
    return BackendConfig(**fields)


def test_http_success_payload_and_headers():
    session = FakeSession([FakeResponse(200, chat_body("<<start>> 1 2 3 <<end>>"))])
    backend = HttpBackend(http_config(), session=session, sleep=lambda s: None, api_key="sk-test")
    response = backend.complete(tiny_bundle(5), CompletionContext("i", 3))
    assert response.transport_status == "ok"
    assert response.text == "<<start>> 1 2 3 <<end>>"
    assert response.attempt_index == 3
    call = session.calls[0]
    assert call["url"] == "https://example.invalid/v1/chat/completions"
    assert call["headers"]["Authorization"] == "Bearer sk-test"
    payload = call["json"]
    assert payload["model"] == "vision-model"
    assert payload["temperature"] == 0.7
    assert payload["max_tokens"] == 1024
    content = payload["messages"][0]["content"]
    assert content[0]["type"] == "image_url"
    assert content[1]["type"] == "text"


def test_http_image_encoding_round_trip():
    bundle = tiny_bundle(5)
    messages = bundle_to_messages(bundle)
    assert len(messages) == 1
    assert messages[0]["role"] == "user"
    url = messages[0]["content"][0]["image_url"]["url"]
    prefix = "data:image/png;base64,"
    assert url.startswith(prefix)
    assert base64.b64decode(url[len(prefix):]) == bundle.parts[0].image.data


def test_http_retries_then_succeeds():
    sleeps = []
    session = FakeSession([
        FakeResponse(503),
        requests.ConnectionError("boom"),
        FakeResponse(200, chat_body("ok text")),
    ])
    backend = HttpBackend(http_config(max_retries=3), session=session, sleep=sleeps.append, api_key="k")
    response = backend.complete(tiny_bundle(), CompletionContext("i", 0))
    assert response.transport_status == "ok"
    assert len(session.calls) == 3
    assert sleeps == [0.5, 1.0]


def test_http_retries_exhausted():
    sleeps = []
    session = FakeSession([FakeResponse(429)] * 3)
    backend = HttpBackend(http_config(max_retries=2), session=session, sleep=sleeps.append, api_key="k")
    response = backend.complete(tiny_bundle(), CompletionContext("i", 0))
    assert response.transport_status == "retries_exhausted"
    assert response.text == ""
    assert len(session.calls) == 3
    assert sleeps == [0.5, 1.0]


def test_http_backoff_is_capped():
    sleeps = []
    session = FakeSession([FakeResponse(500)] * 8)
    backend = HttpBackend(http_config(max_retries=7), session=session, sleep=sleeps.append, api_key="k")
    backend.complete(tiny_bundle(), CompletionContext("i", 0))
    assert sleeps == [0.5, 1.0, 2.0, 4.0, 8.0, 8.0, 8.0]


def test_http_non_retryable_code_returns_immediately():
    session = FakeSession([FakeResponse(400, {"error": "bad request"})])
    backend = HttpBackend(http_config(), session=session, sleep=lambda s: None, api_key="k")
    response = backend.complete(tiny_bundle(), CompletionContext("i", 0))
    assert response.transport_status == "http_error:400"
    assert len(session.calls) == 1


def test_http_malformed_200_body_not_retried():
    for response_obj in (
        FakeResponse(200, None),
        FakeResponse(200, {"choices": []}),
        FakeResponse(200, {"choices": [{"message": {"content": ""}}]}),
    ):
        session = FakeSession([response_obj])
        backend = HttpBackend(http_config(), session=session, sleep=lambda s: None, api_key="k")
        response = backend.complete(tiny_bundle(), CompletionContext("i", 0))
        assert response.transport_status == "http_error:200"
        assert len(session.calls) == 1


def test_http_api_key_env_var_only(monkeypatch):
    config = http_config(api_key_env_var="TSP_TEST_KEY")
    monkeypatch.delenv("TSP_TEST_KEY", raising=False)
    with pytest.raises(BackendError, match="TSP_TEST_KEY"):
        HttpBackend(config, session=FakeSession([]), sleep=lambda s: None)
    monkeypatch.setenv("TSP_TEST_KEY", "sk-from-env")
    session = FakeSession([FakeResponse(200, chat_body("t"))])
    backend = HttpBackend(config, session=session, sleep=lambda s: None)
    backend.complete(tiny_bundle(), CompletionContext("i", 0))
    assert session.calls[0]["headers"]["Authorization"] == "Bearer sk-from-env"


def test_http_concurrency_cap():
    active = {"now": 0, "peak": 0}
    lock = threading.Lock()

    class SlowSession:
        def post(self, url, json=None, headers=None, timeout=None):
            with lock:
                active["now"] += 1
                active["peak"] = max(active["peak"], active["now"])
            time.sleep(0.02)
            with lock:
                active["now"] -= 1
            return FakeResponse(200, chat_body("t"))

    backend = HttpBackend(
        http_config(max_concurrent_requests=2, max_retries=0),
        session=SlowSession(), sleep=lambda s: None, api_key="k",
    )
    bundle = tiny_bundle()
    threads = [
        threading.Thread(target=backend.complete, args=(bundle, CompletionContext("i", d)))
        for d in range(8)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert active["peak"] <= 2


# ---------------------------------------------------------------------------
# transcript recording

def test_recording_backend_entries(tmp_path, solved8):
    inner = MockOracleBackend(MockOracleConfig(seed=5), {solved8.instance.instance_id: solved8})
    path = tmp_path / "t.jsonl"
    backend = RecordingBackend(inner, path)
    bundle = tiny_bundle(8)
    backend.complete(bundle, CompletionContext(solved8.instance.instance_id, 0))
    backend.complete(bundle, CompletionContext(solved8.instance.instance_id, 1, tag="custom"))
    lines = path.read_text().strip().split("\n")
    assert len(lines) == 2
    first = json.loads(lines[0])
    assert first["instance_id"] == solved8.instance.instance_id
    assert first["draw_index"] == 0
    assert first["tag"] == "zero_shot"
    assert first["n"] == 8
    assert len(first["bundle_sha256"]) == 64
    assert json.loads(lines[1])["tag"] == "custom"
    # entries are replayable
    replay = ScriptedBackend.from_transcript(path)
    again = replay.complete(bundle, CompletionContext(solved8.instance.instance_id, 0))
    assert again.text == first["text"]


def test_recording_backend_prompt_dumps(tmp_path, solved8):
    inner = MockOracleBackend(MockOracleConfig(seed=5), {solved8.instance.instance_id: solved8})
    dump_dir = tmp_path / "prompts"
    backend = RecordingBackend(inner, tmp_path / "t.jsonl", dump_prompts_dir=dump_dir)
    bundle = tiny_bundle(8)
    backend.complete(bundle, CompletionContext(solved8.instance.instance_id, 0))
    files = list(dump_dir.iterdir())
    assert len(files) == 1
    body = files[0].read_text()
    assert f"[image sha256={bundle.parts[0].image.sha256}]" in body
    assert bundle.parts[1].text in body
