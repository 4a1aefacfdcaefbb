"""Client behavior: caching, retries, stop truncation, batching, concurrency."""

from __future__ import annotations

import pytest

from baregen.client import (
    CompletionRequest,
    ModelClient,
    RetryPolicy,
    ScriptedTransport,
    cache_key,
)
from baregen.datastore import ResponseCache
from baregen.errors import DimensionMismatch, EmptyInput, RateLimited, TransportError

from conftest import (
    DispatchTransport,
    GaugeTransport,
    base_endpoint,
    embedding_endpoint,
    instruct_endpoint,
    mock_client,
)


def _chat_req(endpoint, text, seed=0):
    return CompletionRequest(endpoint=endpoint, messages=(("user", text),), seed_tag=seed)


class TestComplete:
    def test_mock_determinism_same_prompt_same_text(self, math_spec):
        client = mock_client(seed=7)
        ep = instruct_endpoint()
        first = client.complete(_chat_req(ep, "tell me a problem", seed=7))
        second = client.complete(_chat_req(ep, "tell me a problem", seed=7))
        assert first == second

    def test_client_side_stop_truncation(self):
        transport = ScriptedTransport([(200, {"choices": [{"message": {
            "content": "useful part##STOPME##echoed stop and garbage"}}]})])
        client = ModelClient(transport=transport)
        ep = instruct_endpoint()
        req = CompletionRequest(endpoint=ep, messages=(("user", "hi"),),
                                stop=("##STOPME##",))
        assert client.complete(req) == "useful part"

    def test_429_three_times_then_success(self):
        ok = {"choices": [{"message": {"content": "finally"}}]}
        transport = ScriptedTransport([(429, {}), (429, {}), (429, {}), (200, ok)])
        client = ModelClient(transport=transport, sleep=lambda s: None)
        text = client.complete(_chat_req(instruct_endpoint(), "x"))
        assert text == "finally"
        assert len(client.retry_events()) == 3

    def test_rate_limit_surfaced_after_exhaustion(self):
        transport = ScriptedTransport([(429, {})] * 5)
        client = ModelClient(transport=transport, sleep=lambda s: None,
                             retry=RetryPolicy(max_attempts=5))
        with pytest.raises(RateLimited):
            client.complete(_chat_req(instruct_endpoint(), "x"))
        assert len(transport.calls) == 5  # hard cap on attempts

    def test_non_retryable_4xx_fails_fast(self):
        transport = ScriptedTransport([(404, {"error": "nope"})])
        client = ModelClient(transport=transport, sleep=lambda s: None)
        with pytest.raises(TransportError):
            client.complete(_chat_req(instruct_endpoint(), "x"))
        assert len(transport.calls) == 1


class TestCache:
    def test_idempotence_one_transport_call(self, tmp_path):
        gauge = GaugeTransport(DispatchTransport(seed=3), delay=0)
        client = ModelClient(transport=gauge, cache=ResponseCache(tmp_path / "cache"))
        req = _chat_req(instruct_endpoint(), "same request", seed=5)
        first = client.complete(req)
        second = client.complete(req)
        assert first == second
        assert gauge.calls == 1

    def test_key_sensitive_to_temperature(self):
        ep = instruct_endpoint()
        a = CompletionRequest(endpoint=ep, messages=(("user", "x"),), temperature=0.5)
        b = CompletionRequest(endpoint=ep, messages=(("user", "x"),), temperature=0.9)
        assert cache_key(ep.model_name, a.body(), 0) != cache_key(ep.model_name, b.body(), 0)
        assert cache_key(ep.model_name, a.body(), 0) == cache_key(ep.model_name, a.body(), 0)

    def test_malformed_response_never_cached(self, tmp_path):
        from baregen.errors import MalformedResponse
        ok = {"choices": [{"message": {"content": "good"}}]}
        transport = ScriptedTransport([(200, {"choices": []}), (200, ok)])
        client = ModelClient(transport=transport, cache=ResponseCache(tmp_path / "c"),
                             sleep=lambda s: None)
        req = _chat_req(instruct_endpoint(), "x", seed=1)
        with pytest.raises(MalformedResponse):
            client.complete(req)
        assert client.complete(req) == "good"  # bad body was not served from cache

    def test_corrupt_entry_detected_and_refetched(self, tmp_path):
        cache = ResponseCache(tmp_path / "cache")
        gauge = GaugeTransport(DispatchTransport(seed=3), delay=0)
        client = ModelClient(transport=gauge, cache=cache)
        req = _chat_req(instruct_endpoint(), "corrupt me", seed=9)
        original = client.complete(req)
        entry = next((tmp_path / "cache").glob("*.json"))
        entry.write_text(entry.read_text().replace("Question", "Tampered"), encoding="utf-8")
        refetched = client.complete(req)
        assert refetched == original
        assert gauge.calls == 2
        assert cache.corruption_count == 1


class TestEmbed:
    def test_empty_text_rejected(self):
        client = mock_client()
        with pytest.raises(EmptyInput):
            client.embed([""], embedding_endpoint())
        with pytest.raises(EmptyInput):
            client.embed([], embedding_endpoint())

    def test_three_deterministic_vectors(self):
        client = mock_client(seed=4)
        vectors = client.embed(["a", "b", "c"], embedding_endpoint())
        again = mock_client(seed=4).embed(["a", "b", "c"], embedding_endpoint())
        assert len(vectors) == 3
        assert vectors == again

    def test_batching_2500_texts_three_requests(self):
        gauge = GaugeTransport(DispatchTransport(seed=1), delay=0)
        client = ModelClient(transport=gauge, embed_batch_size=1000)
        texts = [f"text {i}" for i in range(2500)]
        vectors = client.embed(texts, embedding_endpoint())
        assert len(vectors) == 2500
        assert gauge.calls == 3

    def test_inconsistent_dimensions_rejected(self):
        bad = {"data": [{"index": 0, "embedding": [1.0, 2.0]},
                        {"index": 1, "embedding": [1.0, 2.0, 3.0]}]}
        transport = ScriptedTransport([(200, bad)])
        client = ModelClient(transport=transport)
        with pytest.raises(DimensionMismatch):
            client.embed(["a", "b"], embedding_endpoint())


class TestConcurrency:
    def test_in_flight_never_exceeds_limit(self):
        gauge = GaugeTransport(DispatchTransport(seed=2), delay=0.002)
        client = ModelClient(transport=gauge, concurrency_limit=5)
        ep = instruct_endpoint()
        requests = [_chat_req(ep, f"req {i}", seed=i) for i in range(100)]
        replies = client.map_complete(requests)
        assert len(replies) == 100
        assert gauge.calls == 100
        assert gauge.max_in_flight <= 5

    def test_pairing_preserved_under_fan_out(self):
        client = mock_client(seed=6, concurrency_limit=4)
        ep = instruct_endpoint()
        requests = [_chat_req(ep, f"unique prompt {i}", seed=i) for i in range(32)]
        fanned = client.map_complete(requests)
        serial = [client.complete(r) for r in requests]
        assert fanned == serial


def test_base_endpoint_requires_prompt_form():
    from baregen.errors import ConfigError
    with pytest.raises(ConfigError):
        CompletionRequest(endpoint=base_endpoint(), messages=(("user", "x"),))
    with pytest.raises(ConfigError):
        CompletionRequest(endpoint=instruct_endpoint(), prompt="x")
