"""Evaluation measures for generated datasets.

Diversity is summarized as mean pairwise cosine similarity of text
embeddings (lower mean = more diverse), with a histogram over [-1, 1].
Entry-wise quality is the indistinguishability rate (IR): how often a judge
model fails to flag the synthetic entry hidden among real ones. Coverage
reports which closed-set classes a dataset reaches.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .client import CompletionRequest, EmbeddingVector, ModelClient
from .errors import (
    DimensionMismatch,
    InsufficientSynthetic,
    MissingLabels,
    NoClassSet,
    PoolTooSmall,
    TooFewItems,
    ZeroVector,
)
from .prompting import parse_judge_answer, render_ir_prompt
from .types import Dataset, DomainSpec, ModelEndpoint, sha256_hex, stable_hash_int

DEFAULT_BIN_WIDTH = 0.02
DEFAULT_PANEL_SIZE = 4
DEFAULT_MAX_TRIALS = 200


@dataclass(frozen=True)
class SimilarityReport:
    item_count: int
    pair_count: int
    mean_similarity: float
    histogram: tuple[tuple[float, int], ...]
    bin_width: float
    class_restricted: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_count": self.item_count,
            "pair_count": self.pair_count,
            "mean_similarity": self.mean_similarity,
            "histogram": [[lo, count] for lo, count in self.histogram],
            "bin_width": self.bin_width,
            "class_restricted": self.class_restricted,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SimilarityReport":
        return cls(
            item_count=d["item_count"],
            pair_count=d["pair_count"],
            mean_similarity=d["mean_similarity"],
            histogram=tuple((lo, count) for lo, count in d["histogram"]),
            bin_width=d["bin_width"],
            class_restricted=d["class_restricted"],
        )


@dataclass(frozen=True)
class CoverageReport:
    class_set_size: int
    covered: tuple[str, ...]
    coverage_fraction: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "class_set_size": self.class_set_size,
            "covered": list(self.covered),
            "coverage_fraction": self.coverage_fraction,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CoverageReport":
        return cls(class_set_size=d["class_set_size"], covered=tuple(d["covered"]),
                   coverage_fraction=d["coverage_fraction"])


@dataclass(frozen=True)
class IRReport:
    """Judge-trial tally. ``rate`` = fooled / (trials - unparseable); an
    unparseable judge reply is excluded from the denominator rather than
    counted as fooled, to avoid biasing the rate upward."""

    trials: int
    fooled: int
    unparseable: int
    rate: float
    rows: tuple[dict[str, Any], ...] = field(default_factory=tuple)

    def to_dict(self) -> dict[str, Any]:
        return {
            "trials": self.trials,
            "fooled": self.fooled,
            "unparseable": self.unparseable,
            "rate": self.rate,
            "rows": list(self.rows),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "IRReport":
        return cls(trials=d["trials"], fooled=d["fooled"],
                   unparseable=d["unparseable"], rate=d["rate"],
                   rows=tuple(d.get("rows", ())))


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """dot(a, b) / (|a| |b|), in [-1, 1] up to rounding."""
    if len(a.values) != len(b.values):
        raise DimensionMismatch(f"{len(a.values)} vs {len(b.values)}")
    va = np.asarray(a.values, dtype=np.float64)
    vb = np.asarray(b.values, dtype=np.float64)
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine undefined for all-zero vectors")
    return float(np.dot(va, vb) / (na * nb))


def _histogram(values: np.ndarray, bin_width: float) -> tuple[tuple[float, int], ...]:
    n_bins = int(round(2.0 / bin_width))
    if not 0 < bin_width <= 2 or abs(n_bins * bin_width - 2.0) > 1e-9:
        raise ValueError("bin_width must evenly divide [-1, 1]")
    edges = np.linspace(-1.0, 1.0, n_bins + 1)
    counts, _ = np.histogram(np.clip(values, -1.0, 1.0), bins=edges)
    return tuple((float(edges[i]), int(counts[i])) for i in range(n_bins))


def pairwise_similarity(embeddings: Sequence[EmbeddingVector],
                        labels: Sequence[str | None] | None = None,
                        class_restricted: bool = False,
                        bin_width: float = DEFAULT_BIN_WIDTH) -> SimilarityReport:
    """Mean cosine similarity over all unordered pairs, plus a histogram.

    With ``class_restricted`` only same-label pairs enter the mean (the
    treatment for domains whose classes are too far apart to compare);
    unlabeled items never pair.
    """
    if len(embeddings) < 2:
        raise TooFewItems("need at least 2 embeddings")
    if class_restricted and labels is None:
        raise MissingLabels("class-restricted similarity needs labels")
    if labels is not None and len(labels) != len(embeddings):
        raise MissingLabels("one label per embedding required")

    matrix = np.asarray([e.values for e in embeddings], dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms == 0.0):
        raise ZeroVector("cosine undefined for all-zero vectors")
    unit = matrix / norms[:, None]
    sims = unit @ unit.T
    iu, ju = np.triu_indices(len(embeddings), k=1)
    values = sims[iu, ju]

    if class_restricted:
        label_arr = np.asarray([l if l is not None else "\x00unlabeled" for l in labels])
        keep = (label_arr[iu] == label_arr[ju]) & (label_arr[iu] != "\x00unlabeled")
        values = values[keep]
        if values.size == 0:
            raise TooFewItems("no same-class pairs to compare")

    return SimilarityReport(
        item_count=len(embeddings),
        pair_count=int(values.size),
        mean_similarity=float(values.mean()),
        histogram=_histogram(values, bin_width),
        bin_width=bin_width,
        class_restricted=class_restricted,
    )


def class_coverage(dataset: Dataset, spec: DomainSpec) -> CoverageReport:
    """Fraction of the closed class set reached by at least one record.

    Unlabeled records are ignored; labels outside the class set don't count.
    """
    if not spec.class_set:
        raise NoClassSet(f"domain {spec.name} has no class set")
    seen = {r.class_label for r in dataset.records if r.class_label is not None}
    covered = tuple(sorted(seen & set(spec.class_set)))
    return CoverageReport(
        class_set_size=len(spec.class_set),
        covered=covered,
        coverage_fraction=len(covered) / len(spec.class_set),
    )


def indistinguishability_rate(client: ModelClient, synthetic: Dataset,
                              real_pool: Sequence[str], judge: ModelEndpoint,
                              k: int = DEFAULT_PANEL_SIZE,
                              trials: int | None = None,
                              seed: int = 0,
                              templates_dir=None) -> IRReport:
    """Fraction of trials where the judge fails to flag the synthetic entry.

    Per trial: one synthetic record (drawn without replacement across
    trials), k-1 real entries (without replacement within the trial), panel
    positions shuffled by the trial seed. The pool is canonicalized by
    sorting, so the rate is invariant to its input ordering. Judge calls fan
    out under the client's in-flight limit; rows are assembled by trial
    index, so the report is deterministic.
    """
    if k < 2:
        raise PoolTooSmall("panel size must be at least 2")
    if len(real_pool) < k - 1:
        raise PoolTooSmall(f"need at least {k - 1} real entries, have {len(real_pool)}")
    if trials is None:
        trials = min(len(synthetic.records), DEFAULT_MAX_TRIALS)
    if trials > len(synthetic.records):
        raise InsufficientSynthetic(
            f"{trials} trials need {trials} synthetic records, have {len(synthetic.records)}")

    pool = sorted(real_pool)
    order_rng = random.Random(stable_hash_int(seed, "ir-synthetic-order"))
    synth_indices = order_rng.sample(range(len(synthetic.records)), trials)

    panels = []
    for t in range(trials):
        rec = synthetic.records[synth_indices[t]]
        trial_rng = random.Random(stable_hash_int(seed, "ir-trial", t))
        reals = trial_rng.sample(pool, k - 1)
        position = trial_rng.randint(1, k)
        items = reals[:position - 1] + [rec.final_text] + reals[position - 1:]
        panels.append((rec, position, items))

    requests = [
        CompletionRequest(endpoint=judge,
                          messages=render_ir_prompt(k, items, templates_dir),
                          seed_tag=stable_hash_int(seed, "ir-judge", t))
        for t, (_, _, items) in enumerate(panels)
    ]
    replies = client.map_complete(requests)

    fooled = 0
    unparseable = 0
    rows = []
    for t, ((rec, position, items), reply) in enumerate(zip(panels, replies)):
        verdict = parse_judge_answer(reply, k)
        trial_fooled = verdict is not None and verdict != position
        if verdict is None:
            unparseable += 1
        elif trial_fooled:
            fooled += 1
        rows.append({
            "trial": t,
            "synthetic_id": rec.id,
            "synthetic_digest": sha256_hex(rec.final_text),
            "panel_digests": [sha256_hex(x) for x in items],
            "synthetic_position": position,
            "judge_verdict": verdict,
            "fooled": trial_fooled,
        })

    parseable = trials - unparseable
    rate = fooled / parseable if parseable else 0.0
    return IRReport(trials=trials, fooled=fooled, unparseable=unparseable,
                    rate=rate, rows=tuple(rows))
