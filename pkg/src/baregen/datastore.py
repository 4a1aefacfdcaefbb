"""Persistence: run directories, JSONL dataset I/O, example ingestion,
content-addressed response caching, and fine-tuning export.

Every file is UTF-8 with ``\\n`` separators and canonical JSON; digests are
SHA-256 hex. Cache entries verify their own digest on read so a corrupted
file is never silently served.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
import threading
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

from .errors import SchemaError, UnparsedRecord
from .types import (
    Dataset,
    DomainSpec,
    FewShotExample,
    GenerationRecord,
    RunManifest,
    canonical_json,
    sha256_hex,
)

logger = logging.getLogger(__name__)

BUNDLED_PREFIX = "bundled:"


@dataclass(frozen=True)
class RunDirectory:
    """Layout of one run: manifest, dataset, reports, cache, prompt snapshots."""

    root: Path

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.json"

    @property
    def dataset_path(self) -> Path:
        return self.root / "dataset.jsonl"

    @property
    def reports_dir(self) -> Path:
        return self.root / "reports"

    @property
    def cache_dir(self) -> Path:
        return self.root / "cache"

    @property
    def prompts_dir(self) -> Path:
        return self.root / "prompts"

    @property
    def event_log_path(self) -> Path:
        return self.root / "run.log.jsonl"

    def initialize(self) -> "RunDirectory":
        for d in (self.root, self.reports_dir, self.cache_dir, self.prompts_dir):
            d.mkdir(parents=True, exist_ok=True)
        return self


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_manifest(manifest: RunManifest, run_dir: RunDirectory) -> None:
    _atomic_write(run_dir.manifest_path, canonical_json(manifest.to_dict()) + "\n")


def read_manifest(run_dir: RunDirectory) -> RunManifest:
    with open(run_dir.manifest_path, encoding="utf-8") as f:
        return RunManifest.from_dict(json.load(f))


def write_dataset(ds: Dataset, run_dir: RunDirectory) -> int:
    """Write one canonical-JSON record per line and update the manifest digest.

    The manifest must already exist (rows are never written to a run whose
    provenance was not recorded first). Returns the number of rows written.
    """
    if not run_dir.manifest_path.exists():
        raise OSError(f"manifest missing in {run_dir.root}; initialize the run first")
    lines = ds.record_lines()
    _atomic_write(run_dir.dataset_path, "".join(line + "\n" for line in lines))
    import dataclasses

    manifest = dataclasses.replace(ds.manifest, dataset_digest=ds.digest())
    write_manifest(manifest, run_dir)
    return len(lines)


def read_dataset(run_dir: RunDirectory) -> Dataset:
    manifest = read_manifest(run_dir)
    records = []
    with open(run_dir.dataset_path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(GenerationRecord.from_dict(json.loads(line)))
    return Dataset(records=tuple(records), manifest=manifest)


def resolve_data_path(path: str | Path) -> Path:
    """Resolve a path, understanding the ``bundled:`` prefix for package data."""
    if isinstance(path, str) and path.startswith(BUNDLED_PREFIX):
        name = path[len(BUNDLED_PREFIX):]
        if not name.endswith(".jsonl"):
            name += ".jsonl"
        return Path(str(resources.files("baregen").joinpath("data", name)))
    return Path(path)


def read_examples(path: str | Path, spec: DomainSpec) -> list[FewShotExample]:
    """Load few-shot / real-pool examples from JSONL, validated per format.

    Raises:
        SchemaError: with the offending 1-based line number.
    """
    path = resolve_data_path(path)
    examples: list[FewShotExample] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(lineno, f"invalid JSON: {exc}") from exc
            if not isinstance(raw, dict):
                raise SchemaError(lineno, "expected a JSON object")
            if spec.answer_format in ("question_answer_numeric", "question_answer_categorical"):
                if "question" not in raw or "answer" not in raw:
                    raise SchemaError(lineno, "expected question and answer fields")
                if spec.answer_format == "question_answer_numeric" and "####" not in raw["answer"]:
                    raise SchemaError(lineno, "numeric answers must end with '#### <number>'")
            else:
                if "body" not in raw:
                    raise SchemaError(lineno, "expected a body field")
                if spec.label_mode != "none" and spec.class_set and raw.get("class_label"):
                    if raw["class_label"] not in spec.class_set:
                        raise SchemaError(lineno, f"unknown class_label {raw['class_label']!r}")
            try:
                examples.append(FewShotExample.from_dict(raw))
            except Exception as exc:
                raise SchemaError(lineno, str(exc)) from exc
    return examples


def example_text(example: FewShotExample) -> str:
    """Flatten an example to plain text (used for judge real pools)."""
    if example.question is not None and example.answer is not None:
        return f"Question: {example.question}\nAnswer: {example.answer}"
    return example.body or ""


def export_finetune(ds: Dataset, spec: DomainSpec, path: str | Path) -> int:
    """Emit fine-tuning rows: prompt/completion pairs, or text/label for
    classification domains.

    Raises:
        UnparsedRecord: a record lacks the fields its format requires.
    """
    path = Path(path)
    rows = []
    for rec in ds.records:
        if spec.label_mode != "none":
            if rec.class_label is None:
                raise UnparsedRecord(rec.id, "record has no class label")
            rows.append({"text": rec.final_text, "label": rec.class_label})
        elif spec.answer_format in ("question_answer_numeric", "question_answer_categorical"):
            if rec.question is None or rec.answer is None:
                raise UnparsedRecord(rec.id, "record has no question/answer")
            if spec.answer_format == "question_answer_numeric" and rec.numeric_answer is None:
                raise UnparsedRecord(rec.id, "record has no numeric answer")
            rows.append({"prompt": rec.question, "completion": rec.answer})
        else:
            rows.append({"prompt": spec.task_description, "completion": rec.final_text})
    path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write(path, "".join(canonical_json(r) + "\n" for r in rows))
    return len(rows)


class ResponseCache:
    """Content-addressed on-disk cache, one file per key.

    Entries store a digest of their payload; a mismatch on read is treated
    as a miss (and the entry removed) so corruption triggers a refetch.
    Writes are atomic (write + rename), safe under concurrent access.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.corruption_count = 0
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.root / f"{key}.json"

    def get(self, key: str) -> dict[str, Any] | None:
        path = self._path(key)
        try:
            with open(path, encoding="utf-8") as f:
                entry = json.load(f)
            payload = entry["payload"]
            if sha256_hex(canonical_json(payload)) != entry["sha256"]:
                raise ValueError("digest mismatch")
            return payload
        except FileNotFoundError:
            return None
        except (ValueError, KeyError, json.JSONDecodeError):
            with self._lock:
                self.corruption_count += 1
            logger.warning("cache entry %s corrupt; refetching", key)
            try:
                path.unlink()
            except OSError:
                pass
            return None

    def put(self, key: str, payload: dict[str, Any]) -> None:
        entry = {"sha256": sha256_hex(canonical_json(payload)), "payload": payload}
        _atomic_write(self._path(key), canonical_json(entry) + "\n")

    def clear(self) -> int:
        count = 0
        for path in self.root.glob("*.json"):
            path.unlink()
            count += 1
        return count


def append_events(run_dir: RunDirectory, events: list[dict[str, Any]]) -> None:
    with open(run_dir.event_log_path, "a", encoding="utf-8") as f:
        for event in events:
            f.write(canonical_json(event) + "\n")


def read_events(run_dir: RunDirectory) -> list[dict[str, Any]]:
    events = []
    with open(run_dir.event_log_path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                events.append(json.loads(line))
    return events
