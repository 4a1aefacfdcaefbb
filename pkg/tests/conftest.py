"""Shared fixtures: domain specs, few-shot examples, and test transports."""

from __future__ import annotations

import threading
import time

import pytest

from baregen.client import MockTransport, ModelClient
from baregen.mock import mock_backend
from baregen.types import DomainSpec, FewShotExample, ModelEndpoint

NEWSGROUP_LABELS = (
    "alt.atheism", "comp.graphics", "comp.os.ms-windows.misc",
    "comp.sys.ibm.pc.hardware", "comp.sys.mac.hardware", "comp.windows.x",
    "misc.forsale", "rec.autos", "rec.motorcycles", "rec.sport.baseball",
    "rec.sport.hockey", "sci.crypt", "sci.electronics", "sci.med", "sci.space",
    "soc.religion.christian", "talk.politics.guns", "talk.politics.mideast",
    "talk.politics.misc", "talk.religion.misc",
)


@pytest.fixture
def math_spec():
    return DomainSpec(
        name="gsm8k",
        task_description="grade school math word problems that require performing "
                         "a sequence of elementary calculations using basic "
                         "arithmetic operations. A bright middle school student "
                         "should be able to solve each problem.",
        answer_format="question_answer_numeric",
    )


@pytest.fixture
def email_spec():
    return DomainSpec(
        name="enron",
        task_description="emails that could appear in a corporate inbox.",
        label_mode="conditioned",
        class_set=("spam", "legitimate"),
        answer_format="freeform",
    )


@pytest.fixture
def newsgroups_spec():
    return DomainSpec(
        name="newsgroups",
        task_description="Usenet messages, each belonging to one newsgroup.",
        label_mode="model_generated",
        class_set=NEWSGROUP_LABELS,
        answer_format="freeform",
    )


@pytest.fixture
def math_examples():
    return [
        FewShotExample(question="Ben buys 4 packs of 6 pens. How many pens?",
                       answer="4 x 6 = 24 pens. #### 24"),
        FewShotExample(question="A jar holds 30 marbles and 12 are red. How many are not red?",
                       answer="30 - 12 = 18 marbles. #### 18"),
        FewShotExample(question="Nina reads 15 pages a day for 3 days. Total pages?",
                       answer="15 x 3 = 45 pages. #### 45"),
    ]


@pytest.fixture
def email_examples():
    return [
        FewShotExample(body="Subject: win a free cruise now!!!", class_label="spam"),
        FewShotExample(body="Subject: minutes from Monday's standup attached.",
                       class_label="legitimate"),
        FewShotExample(body="Subject: your invoice for March is overdue, click here.",
                       class_label="spam"),
    ]


def base_endpoint(url="mock://template_qa", temperature=0.7):
    return ModelEndpoint(role="base_completion", base_url=url, model_name="mock-base",
                         temperature=temperature, max_tokens=1024,
                         stop_sequences=("EXAMPLE END",))


def instruct_endpoint(url="mock://template_qa", temperature=1.0, model="mock-instruct"):
    return ModelEndpoint(role="instruct_chat", base_url=url, model_name=model,
                         temperature=temperature, max_tokens=1024)


def refine_endpoint(url="mock://echo_fewshot", temperature=0.7):
    return ModelEndpoint(role="instruct_chat", base_url=url, model_name="mock-refine",
                         temperature=temperature, max_tokens=2048)


def embedding_endpoint():
    return ModelEndpoint(role="embedding", base_url="mock://template_qa",
                         model_name="mock-embed", temperature=0.0)


def judge_endpoint(profile="random_judge"):
    return ModelEndpoint(role="judge", base_url=f"mock://{profile}",
                         model_name="mock-judge", temperature=0.0, max_tokens=2048)


class DispatchTransport:
    """Routes each endpoint's traffic to its own transport; lets tests mix
    scripted backends with the standard mock profiles."""

    def __init__(self, overrides: dict | None = None, seed: int = 0):
        self.overrides = dict(overrides or {})
        self.seed = seed
        self._defaults: dict[str, MockTransport] = {}
        self._lock = threading.Lock()

    def send(self, endpoint, route, payload):
        transport = self.overrides.get(endpoint.base_url)
        if transport is None:
            profile = endpoint.base_url[len("mock://"):]
            with self._lock:
                if profile not in self._defaults:
                    self._defaults[profile] = MockTransport(
                        mock_backend(self.seed, profile))
                transport = self._defaults[profile]
        return transport.send(endpoint, route, payload)


def scripted_chat_transport(responses):
    """Transport whose chat replies replay ``responses`` in call order."""
    return MockTransport(mock_backend(0, "scripted", list(responses)))


class GaugeTransport:
    """Wraps a transport and tracks the maximum number of concurrent sends."""

    def __init__(self, inner, delay: float = 0.002):
        self.inner = inner
        self.delay = delay
        self._lock = threading.Lock()
        self.in_flight = 0
        self.max_in_flight = 0
        self.calls = 0

    def send(self, endpoint, route, payload):
        with self._lock:
            self.in_flight += 1
            self.calls += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
        try:
            time.sleep(self.delay)
            return self.inner.send(endpoint, route, payload)
        finally:
            with self._lock:
                self.in_flight -= 1


def mock_client(seed=0, **kwargs) -> ModelClient:
    kwargs.setdefault("concurrency_limit", 8)
    return ModelClient(mock_seed=seed, **kwargs)
