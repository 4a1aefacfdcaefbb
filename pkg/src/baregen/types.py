"""Shared domain model: domain specs, endpoints, records, datasets, manifests.

All types are immutable value objects after construction and are safe to
share across concurrent tasks. Every type serializes to canonical JSON
(sorted keys, compact separators, ``None`` fields omitted) so that digests
and golden files are stable across runs and platforms.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field, fields
from typing import Any, Mapping

from .errors import InvalidSpec

LABEL_MODES = ("none", "conditioned", "model_generated")
ANSWER_FORMATS = ("freeform", "question_answer_numeric", "question_answer_categorical")
ENDPOINT_ROLES = ("base_completion", "instruct_chat", "embedding", "judge")
STRATEGY_NAMES = (
    "independent",
    "persona",
    "sequential",
    "in_one",
    "dynamic_fewshot",
    "bare",
    "instruct_refine",
)

# Crockford base32: sortable, no ambiguous characters.
_B32_ALPHABET = "0123456789ABCDEFGHJKMNPQRSTVWXYZ"


def canonical_json(obj: Any) -> str:
    """Serialize with sorted keys and compact separators for stable digests."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def sha256_hex(data: str | bytes) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def stable_hash_int(*parts: Any) -> int:
    """Derive a 63-bit integer from arbitrary parts via SHA-256.

    Unlike Python's built-in ``hash``, the result is stable across processes,
    which is what makes per-call seeds replayable.
    """
    digest = hashlib.sha256(canonical_json(list(parts)).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFF_FFFF_FFFF_FFFF


def _b32_encode(value: int, width: int) -> str:
    chars = []
    for _ in range(width):
        chars.append(_B32_ALPHABET[value & 31])
        value >>= 5
    return "".join(reversed(chars))


def record_id(global_seed: int, slot: int) -> str:
    """ULID-style 26-char id: sortable slot prefix + seeded random suffix.

    Deterministic given (global_seed, slot) so reruns produce byte-identical
    datasets; lexicographic order follows creation order.
    """
    rng = random.Random(stable_hash_int(global_seed, "record-id", slot))
    prefix = _b32_encode(slot, 10)
    suffix = _b32_encode(rng.getrandbits(80), 16)
    return prefix + suffix


def _omit_none(d: dict[str, Any]) -> dict[str, Any]:
    return {k: v for k, v in d.items() if v is not None}


@dataclass(frozen=True)
class DomainSpec:
    """What is being generated: task text, labeling regime, answer format."""

    name: str
    task_description: str
    label_mode: str = "none"
    class_set: tuple[str, ...] | None = None
    answer_format: str = "freeform"
    class_header: str = "Class:"

    def __post_init__(self):
        if isinstance(self.class_set, list):
            object.__setattr__(self, "class_set", tuple(self.class_set))

    def to_dict(self) -> dict[str, Any]:
        return _omit_none(
            {
                "name": self.name,
                "task_description": self.task_description,
                "label_mode": self.label_mode,
                "class_set": list(self.class_set) if self.class_set is not None else None,
                "answer_format": self.answer_format,
                "class_header": self.class_header,
            }
        )

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DomainSpec":
        return cls(
            name=d["name"],
            task_description=d["task_description"],
            label_mode=d.get("label_mode", "none"),
            class_set=tuple(d["class_set"]) if d.get("class_set") is not None else None,
            answer_format=d.get("answer_format", "freeform"),
            class_header=d.get("class_header", "Class:"),
        )


def validate_domain_spec(spec: DomainSpec) -> DomainSpec:
    """Return ``spec`` unchanged iff all its invariants hold.

    Raises:
        InvalidSpec: label mode requires a class set and none was given, or
            an enum field holds an unknown value.
    """
    if spec.label_mode not in LABEL_MODES:
        raise InvalidSpec(f"unknown label_mode {spec.label_mode!r}")
    if spec.answer_format not in ANSWER_FORMATS:
        raise InvalidSpec(f"unknown answer_format {spec.answer_format!r}")
    if spec.label_mode in ("conditioned", "model_generated") and not spec.class_set:
        raise InvalidSpec(f"label_mode={spec.label_mode} requires a non-empty class_set")
    if not spec.name:
        raise InvalidSpec("domain name must be non-empty")
    if not spec.task_description.strip():
        raise InvalidSpec("task_description must be non-empty")
    return spec


@dataclass(frozen=True)
class FewShotExample:
    """One real exemplar: either a body text or a question/answer pair."""

    body: str | None = None
    class_label: str | None = None
    question: str | None = None
    answer: str | None = None

    def __post_init__(self):
        if self.body is None and not (self.question is not None and self.answer is not None):
            raise InvalidSpec("few-shot example needs a body or a (question, answer) pair")

    def to_dict(self) -> dict[str, Any]:
        return _omit_none(
            {
                "body": self.body,
                "class_label": self.class_label,
                "question": self.question,
                "answer": self.answer,
            }
        )

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FewShotExample":
        return cls(
            body=d.get("body"),
            class_label=d.get("class_label"),
            question=d.get("question"),
            answer=d.get("answer"),
        )

    def digest(self) -> str:
        return sha256_hex(canonical_json(self.to_dict()))


@dataclass(frozen=True)
class ModelEndpoint:
    """A model role plus the sampling parameters used when calling it."""

    role: str
    base_url: str
    model_name: str
    temperature: float = 0.0
    max_tokens: int = 1024
    stop_sequences: tuple[str, ...] = ()
    api_key_ref: str | None = None

    def __post_init__(self):
        if isinstance(self.stop_sequences, list):
            object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))
        if self.role not in ENDPOINT_ROLES:
            raise InvalidSpec(f"unknown endpoint role {self.role!r}")
        if self.temperature < 0:
            raise InvalidSpec("temperature must be >= 0")
        if self.role == "embedding" and self.temperature != 0:
            raise InvalidSpec("embedding endpoints do not sample; temperature must be 0")
        if self.role == "base_completion" and not self.stop_sequences:
            raise InvalidSpec("base_completion endpoints need stop_sequences")
        if self.max_tokens <= 0:
            raise InvalidSpec("max_tokens must be positive")

    def is_mock(self) -> bool:
        return self.base_url.startswith("mock://")

    def to_dict(self) -> dict[str, Any]:
        return _omit_none(
            {
                "role": self.role,
                "base_url": self.base_url,
                "model_name": self.model_name,
                "temperature": self.temperature,
                "max_tokens": self.max_tokens,
                "stop_sequences": list(self.stop_sequences),
                "api_key_ref": self.api_key_ref,
            }
        )

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ModelEndpoint":
        return cls(
            role=d["role"],
            base_url=d["base_url"],
            model_name=d["model_name"],
            temperature=d.get("temperature", 0.0),
            max_tokens=d.get("max_tokens", 1024),
            stop_sequences=tuple(d.get("stop_sequences", ())),
            api_key_ref=d.get("api_key_ref"),
        )


@dataclass(frozen=True)
class GenerationRecord:
    """One synthetic datum with full provenance.

    ``base_text`` holds the stage-1 output for two-stage strategies;
    ``numeric_answer`` is kept as a decimal string to avoid float formatting
    drift in golden files.
    """

    id: str
    strategy: str
    final_text: str
    base_text: str | None = None
    question: str | None = None
    answer: str | None = None
    numeric_answer: str | None = None
    class_label: str | None = None
    persona: str | None = None
    prompt_hash: str = ""
    base_prompt_hash: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.strategy == "bare" and self.base_text is not None and not self.final_text:
            raise InvalidSpec("bare records must carry a non-empty final_text")

    def to_dict(self) -> dict[str, Any]:
        return _omit_none(
            {
                "id": self.id,
                "strategy": self.strategy,
                "final_text": self.final_text,
                "base_text": self.base_text,
                "question": self.question,
                "answer": self.answer,
                "numeric_answer": self.numeric_answer,
                "class_label": self.class_label,
                "persona": self.persona,
                "prompt_hash": self.prompt_hash,
                "base_prompt_hash": self.base_prompt_hash,
                "seed": self.seed,
            }
        )

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "GenerationRecord":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass(frozen=True)
class RunManifest:
    """Audit record sufficient to replay a run (minus secrets)."""

    requested_n: int
    domain: str
    strategy: str
    endpoints: Mapping[str, ModelEndpoint] = field(default_factory=dict)
    few_shot_hashes: tuple[str, ...] = ()
    prompt_hashes: Mapping[str, str] = field(default_factory=dict)
    global_seed: int = 0
    started_at: str = ""
    finished_at: str = ""
    discard_count: int = 0
    surplus_count: int = 0
    derail_policy: str = "replace_with_regeneration"
    domain_spec: DomainSpec | None = None
    dataset_digest: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return _omit_none(
            {
                "requested_n": self.requested_n,
                "domain": self.domain,
                "strategy": self.strategy,
                "endpoints": {k: v.to_dict() for k, v in sorted(self.endpoints.items())},
                "few_shot_hashes": list(self.few_shot_hashes),
                "prompt_hashes": dict(sorted(self.prompt_hashes.items())),
                "global_seed": self.global_seed,
                "started_at": self.started_at,
                "finished_at": self.finished_at,
                "discard_count": self.discard_count,
                "surplus_count": self.surplus_count,
                "derail_policy": self.derail_policy,
                "domain_spec": self.domain_spec.to_dict() if self.domain_spec else None,
                "dataset_digest": self.dataset_digest,
            }
        )

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunManifest":
        return cls(
            requested_n=d["requested_n"],
            domain=d["domain"],
            strategy=d["strategy"],
            endpoints={k: ModelEndpoint.from_dict(v) for k, v in d.get("endpoints", {}).items()},
            few_shot_hashes=tuple(d.get("few_shot_hashes", ())),
            prompt_hashes=dict(d.get("prompt_hashes", {})),
            global_seed=d.get("global_seed", 0),
            started_at=d.get("started_at", ""),
            finished_at=d.get("finished_at", ""),
            discard_count=d.get("discard_count", 0),
            surplus_count=d.get("surplus_count", 0),
            derail_policy=d.get("derail_policy", "replace_with_regeneration"),
            domain_spec=DomainSpec.from_dict(d["domain_spec"]) if d.get("domain_spec") else None,
            dataset_digest=d.get("dataset_digest"),
        )


@dataclass(frozen=True)
class Dataset:
    """Ordered records plus the manifest describing how they were made."""

    records: tuple[GenerationRecord, ...]
    manifest: RunManifest

    def __post_init__(self):
        if isinstance(self.records, list):
            object.__setattr__(self, "records", tuple(self.records))
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise InvalidSpec("record ids must be unique within a dataset")
        if self.manifest.requested_n < len(self.records):
            raise InvalidSpec("manifest.requested_n must be >= number of records")

    def __len__(self) -> int:
        return len(self.records)

    def record_lines(self) -> list[str]:
        """Canonical JSON, one record per line; the basis of the dataset digest."""
        return [canonical_json(r.to_dict()) for r in self.records]

    def digest(self) -> str:
        return sha256_hex("\n".join(self.record_lines()) + ("\n" if self.records else ""))
