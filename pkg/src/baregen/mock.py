"""Deterministic offline backends emulating OpenAI-style endpoints.

Every profile's completion output is a pure function of ``(seed, request)``
(except ``scripted``, which replays a caller-supplied list in call order),
so whole pipelines are bit-reproducible without network access.

Profiles
--------
echo_fewshot
    Echoes content found in the prompt: for refine prompts the embedded
    question/answer (theme-preserving; appends ``#### 5`` when the answer
    carries no numeric tail), for base prompts the first few-shot example,
    otherwise the last question/answer pair in the message.
template_qa
    Emits text matching ``Question: ... Answer: ... #### <int>`` with
    seeded names/quantities; honors in-one prompts by emitting the
    requested number of items delimited with ``END OF EXAMPLE``, and base
    prompts by appending an ``EXAMPLE END`` tail plus trailing garbage.
random_judge
    Parses the panel size from the judge prompt and answers a uniformly
    random index in ``1..k``.
fixed_judge:<i>
    Always answers ``Answer: <i>``.
perfect_judge:<marker>
    Answers the index of the numbered panel item containing ``<marker>``
    (a perfect discriminator for marked synthetic items).
scripted
    Replays ``scripted_responses`` verbatim, one per call.

All profiles serve the embeddings route with vectors that are a
deterministic function of the text hash.
"""

from __future__ import annotations

import random
import re
import threading
from typing import Any, Sequence

from .errors import UnknownProfile
from .types import canonical_json, stable_hash_int

EMBED_DIM = 32

_NAMES = (
    "Mara", "Felix", "Priya", "Jonah", "Aiko", "Tomas", "Nadia", "Leah",
    "Omar", "Ingrid", "Caleb", "Sofia", "Dmitri", "Wren", "Hassan", "Lucia",
    "Edgar", "Meera", "Silas", "Anya",
)
_ITEMS = (
    "notebooks", "apples", "marbles", "stickers", "bolts", "tickets",
    "pencils", "bricks", "seeds", "coins", "cartons", "ribbons",
    "batteries", "mugs", "crates", "lanterns", "spools", "tiles",
)

_IN_ONE_COUNT_RE = re.compile(r"Provide (\d+) examples")
_PANEL_SIZE_RE = re.compile(r"Here are (\d+) examples")
_PANEL_ITEM_RE = re.compile(r"(?m)^(\d+)\.\s")


def mock_backend(
    seed: int,
    behavior_profile: str,
    scripted_responses: Sequence[str] | None = None,
) -> "MockBackend":
    """Build a backend handle for the named profile.

    Raises:
        UnknownProfile: the profile name (before any ``:`` argument) is not
            one of the supported behaviors.
    """
    name = behavior_profile.split(":", 1)[0]
    if name not in ("echo_fewshot", "template_qa", "random_judge", "fixed_judge",
                    "perfect_judge", "scripted"):
        raise UnknownProfile(f"unknown mock behavior profile {behavior_profile!r}")
    if name == "scripted" and scripted_responses is None:
        raise UnknownProfile("scripted profile needs scripted_responses")
    return MockBackend(seed, behavior_profile, scripted_responses)


class MockBackend:
    """Serves completions, chat completions, and embeddings offline."""

    def __init__(self, seed: int, profile: str, scripted: Sequence[str] | None = None):
        self.seed = seed
        self.profile, _, arg = profile.partition(":")
        self.profile_arg = arg
        self._scripted = list(scripted or [])
        self._scripted_lock = threading.Lock()

    def respond(self, route: str, payload: dict[str, Any]) -> dict[str, Any]:
        if route == "embeddings":
            return self._embeddings(payload)
        text = self._generate(payload)
        if route == "chat/completions":
            return {
                "object": "chat.completion",
                "model": payload.get("model", "mock"),
                "choices": [{"index": 0, "message": {"role": "assistant", "content": text}}],
            }
        return {
            "object": "text_completion",
            "model": payload.get("model", "mock"),
            "choices": [{"index": 0, "text": text}],
        }

    # ------------------------------------------------------------------

    def _rng(self, payload: dict[str, Any]) -> random.Random:
        return random.Random(stable_hash_int(self.seed, canonical_json(payload)))

    @staticmethod
    def _request_text(payload: dict[str, Any]) -> str:
        if "prompt" in payload:
            return payload["prompt"]
        parts = [m.get("content", "") for m in payload.get("messages", ())]
        return "\n".join(parts)

    def _generate(self, payload: dict[str, Any]) -> str:
        if self.profile == "scripted":
            with self._scripted_lock:
                if not self._scripted:
                    raise UnknownProfile("scripted profile ran out of responses")
                return self._scripted.pop(0)

        text = self._request_text(payload)
        rng = self._rng(payload)
        if self.profile == "fixed_judge":
            return f"Answer: {self.profile_arg or 1}"
        if self.profile == "random_judge":
            return self._random_judge(text, rng)
        if self.profile == "perfect_judge":
            return self._perfect_judge(text)
        if self.profile == "template_qa":
            return self._template_qa(payload, text, rng)
        return self._echo_fewshot(payload, text, rng)

    # -- judge profiles -------------------------------------------------

    @staticmethod
    def _panel_size(text: str) -> int:
        m = _PANEL_SIZE_RE.search(text)
        return int(m.group(1)) if m else 4

    def _random_judge(self, text: str, rng: random.Random) -> str:
        k = self._panel_size(text)
        pick = rng.randint(1, k)
        return f"I compared all {k} examples for fluency and structure. Answer: {pick}"

    def _perfect_judge(self, text: str) -> str:
        marker = self.profile_arg
        matches = list(_PANEL_ITEM_RE.finditer(text))
        for i, m in enumerate(matches):
            end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
            if marker and marker in text[m.end():end]:
                return f"Example {m.group(1)} stands out. Answer: {m.group(1)}"
        return "Answer: 1"

    # -- generation profiles --------------------------------------------

    def _qa_item(self, rng: random.Random) -> str:
        name = rng.choice(_NAMES)
        item = rng.choice(_ITEMS)
        a = rng.randint(3, 99)
        b = rng.randint(2, 19)
        c = rng.randint(1, a * b - 1)
        total = a * b
        left = total - c
        tag = rng.randrange(10**9, 10**10)
        question = (
            f"{name} logs delivery {tag}: {a} boxes of {item} arrive, each holding "
            f"{b} {item}. After {c} {item} are handed out, how many remain?"
        )
        answer = (
            f"The delivery holds {a} x {b} = {total} {item}. Handing out {c} leaves "
            f"{total} - {c} = {left}. #### {left}"
        )
        return f"Question: {question}\nAnswer: {answer}"

    def _template_qa(self, payload: dict[str, Any], text: str, rng: random.Random) -> str:
        if "END OF EXAMPLE" in text:
            m = _IN_ONE_COUNT_RE.search(text)
            count = int(m.group(1)) if m else 1
            items = [self._qa_item(random.Random(rng.getrandbits(64))) for _ in range(count)]
            return "\nEND OF EXAMPLE\n".join(items) + "\nEND OF EXAMPLE"
        item = self._qa_item(rng)
        if "prompt" in payload:
            # Base completions ramble past the example like a real base model.
            return f" {item}\nEXAMPLE END\n\nEXAMPLE START\nQuestion: unfinished trailing"
        return item

    _EDIT_QA_RE = re.compile(
        r"for you to edit:\s*\nQuestion:\s*\n?(.*?)\nAnswer:\s*\n?(.*?)(?:\n\nProvide only|\Z)",
        re.DOTALL,
    )
    _EDIT_BODY_RE = re.compile(
        r"example for you to edit:\s*\n(.*?)(?:\n\nProvide only|\Z)", re.DOTALL
    )
    _QA_PAIR_RE = re.compile(r"Question:\s*(.+?)\nAnswer:\s*(.+?)(?:\n\n|\Z)", re.DOTALL)

    def _echo_fewshot(self, payload: dict[str, Any], text: str, rng: random.Random) -> str:
        m = self._EDIT_QA_RE.search(text)
        if m:
            q, a = m.group(1).strip(), m.group(2).strip()
            if "####" not in a:
                a = f"{a} #### 5"
            return f"Question: {q}\nAnswer: {a}"
        m = self._EDIT_BODY_RE.search(text)
        if m:
            return m.group(1).strip()
        if "prompt" in payload:
            start = text.find("EXAMPLE START")
            end = text.find("EXAMPLE END")
            if 0 <= start < end:
                return text[start + len("EXAMPLE START"):end].strip() + "\nEXAMPLE END"
        pairs = self._QA_PAIR_RE.findall(text)
        if pairs:
            q, a = pairs[-1]
            return f"Question: {q.strip()}\nAnswer: {a.strip()}"
        return text.strip() or "Echoed."

    # -- embeddings ------------------------------------------------------

    def _embeddings(self, payload: dict[str, Any]) -> dict[str, Any]:
        inputs = payload.get("input", [])
        if isinstance(inputs, str):
            inputs = [inputs]
        data = []
        for i, text in enumerate(inputs):
            rng = random.Random(stable_hash_int(self.seed, "embed", text))
            vec = [rng.uniform(-1.0, 1.0) for _ in range(EMBED_DIM)]
            data.append({"index": i, "embedding": vec})
        return {
            "object": "list",
            "model": payload.get("model", "mock-embed"),
            "data": data,
        }
