"""Mock backend profiles: purity, formats, and statistical behavior."""

from __future__ import annotations

import re

import pytest
from scipy import stats

from baregen.errors import UnknownProfile
from baregen.mock import EMBED_DIM, mock_backend
from baregen.prompting import parse_judge_answer


def _chat(prompt_text):
    return {"model": "m", "messages": [{"role": "user", "content": prompt_text}],
            "temperature": 0.7, "max_tokens": 100, "seed": 1}


def test_unknown_profile_rejected():
    with pytest.raises(UnknownProfile):
        mock_backend(0, "telepathy")


def test_fixed_judge_answers_its_index():
    backend = mock_backend(0, "fixed_judge:2")
    body = backend.respond("chat/completions", _chat("Here are 4 examples..."))
    assert body["choices"][0]["message"]["content"] == "Answer: 2"


def test_template_qa_matches_contract():
    backend = mock_backend(3, "template_qa")
    pattern = re.compile(r"Question: .*\s+Answer: .* #### \d+", re.DOTALL)
    for i in range(20):
        body = backend.respond("chat/completions", _chat(f"prompt variant {i}"))
        assert pattern.search(body["choices"][0]["message"]["content"])


def test_template_qa_is_pure_function_of_seed_and_request():
    a = mock_backend(3, "template_qa").respond("chat/completions", _chat("same"))
    b = mock_backend(3, "template_qa").respond("chat/completions", _chat("same"))
    c = mock_backend(4, "template_qa").respond("chat/completions", _chat("same"))
    assert a == b
    assert a != c


def test_template_qa_in_one_emits_requested_count():
    backend = mock_backend(1, "template_qa")
    prompt = ('Provide 5 examples of problems. Delimit the end of an example with '
              'the phrase "END OF EXAMPLE" (all caps) on a new line.')
    text = backend.respond("chat/completions", _chat(prompt))["choices"][0]["message"]["content"]
    assert text.count("END OF EXAMPLE") == 5


def test_random_judge_uniform_over_1000_calls():
    backend = mock_backend(1, "random_judge")
    counts = [0, 0, 0, 0]
    for t in range(1000):
        prompt = f"Here are 4 examples. Panel {t}:\n1. a\n2. b\n3. c\n4. d"
        text = backend.respond("chat/completions", _chat(prompt))["choices"][0]["message"]["content"]
        verdict = parse_judge_answer(text, 4)
        assert verdict is not None
        counts[verdict - 1] += 1
    result = stats.chisquare(counts)
    assert result.pvalue > 0.01, counts


def test_perfect_judge_finds_the_marked_item():
    backend = mock_backend(0, "perfect_judge:ZZSYNTHZZ")
    prompt = ("Here are 4 examples. One of them is of low quality:\n\n"
              "1. a real entry\n\n2. another real one\n\n"
              "3. generated ZZSYNTHZZ entry\n\n4. real again")
    text = backend.respond("chat/completions", _chat(prompt))["choices"][0]["message"]["content"]
    assert parse_judge_answer(text, 4) == 3


def test_scripted_replays_in_order():
    backend = mock_backend(0, "scripted", ["first", "second"])
    assert backend.respond("chat/completions", _chat("x"))["choices"][0]["message"]["content"] == "first"
    assert backend.respond("chat/completions", _chat("y"))["choices"][0]["message"]["content"] == "second"
    with pytest.raises(UnknownProfile):
        backend.respond("chat/completions", _chat("z"))


def test_scripted_requires_responses():
    with pytest.raises(UnknownProfile):
        mock_backend(0, "scripted")


def test_embeddings_deterministic_function_of_text():
    backend = mock_backend(5, "template_qa")
    body = backend.respond("embeddings", {"model": "e", "input": ["alpha", "beta", "alpha"]})
    vectors = [d["embedding"] for d in body["data"]]
    assert len(vectors) == 3
    assert all(len(v) == EMBED_DIM for v in vectors)
    assert vectors[0] == vectors[2]
    assert vectors[0] != vectors[1]


def test_echo_fewshot_echoes_refine_candidate():
    backend = mock_backend(0, "echo_fewshot")
    prompt = ("Improve the given example. Here is the question and answer for you to edit:\n"
              "Question:\nA train travels 60 miles in 2 hours. What is its speed?\n"
              "Answer:\n60 / 2 = 30 mph\n\n"
              "Provide only the improved question and answer in the given format.")
    text = backend.respond("chat/completions", _chat(prompt))["choices"][0]["message"]["content"]
    assert "A train travels 60 miles" in text
    assert "#### 5" in text  # numeric tail appended when missing
