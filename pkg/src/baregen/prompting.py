"""Prompt rendering and output parsing.

Templates are UTF-8 text files with ``{slot_name}`` placeholders, shipped as
package data and overridable per domain (``<templates_dir>/<domain>/<file>``
wins over ``<templates_dir>/<file>`` wins over the packaged default). They
are data, not code: runs hash the resolved template text into the manifest.

Parsing never raises on bad model output. A malformed generation comes back
as a :class:`Derail` value so the caller can count and replace it; repairs
are deliberately not attempted because they would contaminate diversity and
quality measurements downstream.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

from .errors import ArityMismatch, TemplateError
from .types import DomainSpec, FewShotExample, GenerationRecord

Messages = tuple[tuple[str, str], ...]

_SLOT_RE = re.compile(r"\{([a-z_]+)\}")
_QA_RE = re.compile(r"Question:\s*(.*?)\s*Answer:\s*(.*)", re.DOTALL)
_NUMERIC_TAIL_RE = re.compile(r"####\s*([-+]?[\d,]*\.?\d+)")
_JUDGE_ANSWER_RE = re.compile(r"Answer:\s*\[?\s*(\d+)\s*\]?")

IN_ONE_DELIMITER = "END OF EXAMPLE"


@dataclass(frozen=True)
class Derail:
    """A generation that failed the domain's format contract; counted, not raised."""

    reason: str


# ---------------------------------------------------------------------------
# Template loading and rendering
# ---------------------------------------------------------------------------

def _is_qa(spec: DomainSpec) -> bool:
    return spec.answer_format in ("question_answer_numeric", "question_answer_categorical")


def template_filename(kind: str, spec: DomainSpec | None = None) -> str:
    if kind in ("base", "ir_system", "ir_user"):
        return f"{kind}.txt"
    suffix = "qa" if spec is not None and _is_qa(spec) else "freeform"
    return f"{kind}.{suffix}.txt"


_packaged_cache: dict[str, str] = {}


def load_template_text(filename: str, domain_name: str | None = None,
                       templates_dir: str | Path | None = None) -> str:
    """Resolve a template file: domain override, then shared override,
    then the packaged default. Packaged defaults are cached; override
    directories are re-read so edits take effect immediately."""
    if templates_dir is not None:
        candidates = []
        if domain_name:
            candidates.append(Path(templates_dir) / domain_name / filename)
        candidates.append(Path(templates_dir) / filename)
        for candidate in candidates:
            if candidate.is_file():
                return candidate.read_text(encoding="utf-8")
    if filename not in _packaged_cache:
        ref = resources.files("baregen").joinpath("templates", filename)
        if not ref.is_file():
            raise TemplateError(f"no template file {filename!r}")
        _packaged_cache[filename] = ref.read_text(encoding="utf-8")
    return _packaged_cache[filename]


def load_template(kind: str, spec: DomainSpec | None = None,
                  templates_dir: str | Path | None = None) -> str:
    """Resolve the template text for a prompt kind, honoring overrides."""
    return load_template_text(template_filename(kind, spec),
                              spec.name if spec else None, templates_dir)


def render(template: str, slots: dict[str, str]) -> str:
    """Fill ``{slot}`` markers in a single pass.

    Values are inserted literally (never re-scanned for markers), so braces
    inside example texts cannot smuggle in new slots. Unknown or unfilled
    slots raise TemplateError.
    """
    def _sub(m: re.Match) -> str:
        name = m.group(1)
        if name not in slots:
            raise TemplateError(f"unfilled template slot {{{name}}}")
        return slots[name]

    rendered = _SLOT_RE.sub(_sub, template)
    lines = [line.rstrip() for line in rendered.split("\n")]
    return "\n".join(lines).strip()


def _answer_note(spec: DomainSpec, style: str) -> str:
    if spec.answer_format != "question_answer_numeric":
        return ""
    if style == "base":
        return "The numerical answer is provided at the end of each example after ####."
    return ("Note how the numerical answer is provided after #### after each brief "
            "reasoning for a question.")


def format_example(example: FewShotExample, spec: DomainSpec) -> str:
    """Render one few-shot example the way generated outputs should look."""
    if example.question is not None and example.answer is not None:
        return f"Question: {example.question}\nAnswer: {example.answer}"
    body = example.body or ""
    if spec.label_mode == "model_generated" and example.class_label:
        return f"{spec.class_header} {example.class_label}\n{body}"
    return body


def _class_filtered(examples: Sequence[FewShotExample], class_label: str | None):
    if class_label is None:
        return list(examples)
    matching = [e for e in examples if e.class_label == class_label]
    return matching or list(examples)


def _class_directive(spec: DomainSpec, class_label: str | None) -> str:
    if class_label is not None:
        return f"Your example must belong to the following class: {class_label}."
    if spec.label_mode == "model_generated" and spec.class_set:
        choices = ", ".join(spec.class_set)
        return (f"Begin your example with a line '{spec.class_header} <class>', "
                f"choosing a class from: {choices}.")
    return ""


# ---------------------------------------------------------------------------
# Renderers
# ---------------------------------------------------------------------------

def render_base_prompt(spec: DomainSpec, examples: Sequence[FewShotExample],
                       class_label: str | None = None,
                       templates_dir: str | Path | None = None) -> str:
    """Few-shot continuation prompt for base models.

    Examples are wrapped in EXAMPLE START / EXAMPLE END delimiters and the
    prompt ends with a dangling EXAMPLE START to elicit one more example.
    """
    if not examples:
        raise TemplateError("base prompt needs at least one few-shot example")
    chosen = _class_filtered(examples, class_label)
    blocks = "\n\n".join(
        f"EXAMPLE START\n{format_example(e, spec)}\nEXAMPLE END" for e in chosen
    )
    template = load_template("base", spec, templates_dir)
    prompt = render(template, {
        "task_description": spec.task_description,
        "answer_format_note": _answer_note(spec, "base"),
        "examples": blocks,
    })
    if class_label is not None:
        prompt = f"The following examples all belong to the class: {class_label}.\n\n{prompt}"
    return prompt


def _instruct_user_message(kind: str, spec: DomainSpec,
                           examples: Sequence[FewShotExample],
                           slots: dict[str, str],
                           class_label: str | None,
                           templates_dir: str | Path | None) -> str:
    if not examples:
        raise TemplateError(f"{kind} prompt needs at least one few-shot example")
    chosen = _class_filtered(examples, class_label)
    filled = {
        "task_description": spec.task_description,
        "answer_format_note": _answer_note(spec, "instruct"),
        "examples": "\n\n".join(format_example(e, spec) for e in chosen),
        **slots,
    }
    text = render(load_template(kind, spec, templates_dir), filled)
    directive = _class_directive(spec, class_label)
    if directive:
        text = f"{text}\n\n{directive}"
    return text


def render_instruct_prompt(spec: DomainSpec, examples: Sequence[FewShotExample],
                           class_label: str | None = None,
                           templates_dir: str | Path | None = None) -> Messages:
    text = _instruct_user_message("instruct_fewshot", spec, examples, {},
                                  class_label, templates_dir)
    return (("user", text),)


def render_persona_prompt(spec: DomainSpec, examples: Sequence[FewShotExample],
                          persona_description: str,
                          class_label: str | None = None,
                          templates_dir: str | Path | None = None) -> Messages:
    if not persona_description.strip():
        raise TemplateError("persona_description must be non-empty")
    text = _instruct_user_message("persona", spec, examples,
                                  {"persona_description": persona_description},
                                  class_label, templates_dir)
    return (("user", text),)


def render_in_one_prompt(spec: DomainSpec, examples: Sequence[FewShotExample],
                         num: int, class_label: str | None = None,
                         templates_dir: str | Path | None = None) -> Messages:
    if num < 2:
        raise TemplateError("in-one prompts ask for at least 2 entries")
    text = _instruct_user_message("in_one", spec, examples, {"num": str(num)},
                                  class_label, templates_dir)
    return (("user", text),)


def render_sequential_prompt(spec: DomainSpec, example_texts: Sequence[str],
                             class_label: str | None = None,
                             templates_dir: str | Path | None = None) -> Messages:
    """Iterative prompt embedding every previously accepted generation.

    ``example_texts`` is the static few-shot block followed by accepted
    history, already rendered to text (the caller owns eviction policy).
    """
    if not example_texts:
        raise TemplateError("sequential prompt needs at least one example")
    filled = {
        "task_description": spec.task_description,
        "answer_format_note": _answer_note(spec, "instruct"),
        "examples": "\n\n".join(example_texts),
    }
    text = render(load_template("sequential", spec, templates_dir), filled)
    directive = _class_directive(spec, class_label)
    if directive:
        text = f"{text}\n\n{directive}"
    return (("user", text),)


def render_refine_prompt(spec: DomainSpec, candidate: GenerationRecord,
                         examples: Sequence[FewShotExample],
                         templates_dir: str | Path | None = None) -> Messages:
    """Edit-not-replace prompt embedding the candidate to improve."""
    if _is_qa(spec):
        question = candidate.question
        answer = candidate.answer
        if (question is None or answer is None) and candidate.final_text:
            m = _QA_RE.search(candidate.final_text)
            if m:
                question, answer = m.group(1).strip(), m.group(2).strip()
        if not question or not answer:
            raise TemplateError("refine candidate carries no question/answer content")
        slots = {"question": question, "answer": answer}
    else:
        if not candidate.final_text.strip():
            raise TemplateError("refine candidate carries no content")
        slots = {"body": candidate.final_text}
    text = _instruct_user_message("refine", spec, examples, slots, None, templates_dir)
    return (("user", text),)


def render_ir_prompt(k: int, items: Sequence[str],
                     templates_dir: str | Path | None = None) -> Messages:
    """Judge prompt: one low-quality entry hidden among k panel items."""
    if k < 2:
        raise ArityMismatch("panel size must be at least 2")
    if len(items) != k:
        raise ArityMismatch(f"expected {k} panel items, got {len(items)}")
    numbered = "\n\n".join(f"{i}. {text}" for i, text in enumerate(items, start=1))
    system = render(load_template("ir_system", None, templates_dir), {"k": str(k)})
    user = render(load_template("ir_user", None, templates_dir),
                  {"k": str(k), "questions": numbered})
    return (("system", system), ("user", user))


# ---------------------------------------------------------------------------
# Parsers
# ---------------------------------------------------------------------------

def parse_base_generation(raw: str, spec: DomainSpec) -> GenerationRecord | Derail:
    """Turn a raw completion into a content-only record, or a Derail.

    Truncates at the first EXAMPLE END (base models ramble on), then applies
    the domain's answer-format contract. Also used for instruct-path replies,
    where the truncation is a no-op. Provenance fields (id, strategy, hashes,
    seed) are left for the caller to fill in.

    Idempotent: re-parsing the ``final_text`` of a returned record yields the
    same content fields.
    """
    idx = raw.find("EXAMPLE END")
    if idx != -1:
        raw = raw[:idx]
    text = raw.strip()
    if not text:
        return Derail("empty output")

    if _is_qa(spec):
        m = _QA_RE.search(text)
        if not m:
            return Derail("missing Question:/Answer: structure")
        question = m.group(1).strip()
        answer = m.group(2).strip()
        if not question or not answer:
            return Derail("empty question or answer")
        numeric: str | None = None
        if spec.answer_format == "question_answer_numeric":
            tail = _NUMERIC_TAIL_RE.findall(answer)
            if not tail:
                return Derail("no terminal numeric answer after ####")
            numeric = tail[-1].replace(",", "")
        return GenerationRecord(
            id="", strategy="", final_text=text,
            question=question, answer=answer, numeric_answer=numeric,
        )

    return GenerationRecord(id="", strategy="", final_text=text)


def parse_in_one(raw: str) -> list[str]:
    """Split a multi-entry reply on lines equal to the in-one delimiter."""
    segments: list[str] = []
    current: list[str] = []
    for line in raw.split("\n"):
        if line.strip() == IN_ONE_DELIMITER:
            segments.append("\n".join(current))
            current = []
        else:
            current.append(line)
    segments.append("\n".join(current))
    return [s.strip() for s in segments if s.strip()]


def parse_judge_answer(raw: str, k: int) -> int | None:
    """Extract the judge's verdict: the LAST ``Answer: <int>`` occurrence.

    The prompt asks the judge to reason first and end with the answer, so
    earlier mentions of "Answer" are ignored. Returns None (unparseable)
    when the last occurrence is absent or out of 1..k.
    """
    if k < 2:
        raise ArityMismatch("panel size must be at least 2")
    matches = _JUDGE_ANSWER_RE.findall(raw)
    if not matches:
        return None
    try:
        verdict = int(matches[-1])
    except ValueError:
        return None
    return verdict if 1 <= verdict <= k else None


def extract_class(raw: str, spec: DomainSpec) -> str | None:
    """Match a leading class header against the domain's closed class set.

    Case-insensitive exact match only; no fuzzy matching. Returns None
    (unlabeled) when the header is absent or names an unknown class.
    """
    if not spec.class_set:
        return None
    header = spec.class_header.lower()
    for line in raw.split("\n"):
        line = line.strip()
        if not line:
            continue
        if line.lower().startswith(header):
            candidate = line[len(spec.class_header):].strip().lower()
            for label in spec.class_set:
                if label.lower() == candidate:
                    return label
            return None
        return None
    return None
