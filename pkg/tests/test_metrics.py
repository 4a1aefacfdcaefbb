"""Metric correctness against independent oracles and analytic values."""

from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from baregen.client import EmbeddingVector, ModelClient
from baregen.errors import (
    DimensionMismatch,
    InsufficientSynthetic,
    MissingLabels,
    NoClassSet,
    PoolTooSmall,
    TooFewItems,
    ZeroVector,
)
from baregen.metrics import (
    class_coverage,
    cosine,
    indistinguishability_rate,
    pairwise_similarity,
)
from baregen.types import Dataset, DomainSpec, GenerationRecord, RunManifest, record_id

from conftest import DispatchTransport, judge_endpoint, mock_client, scripted_chat_transport


def _vec(*values):
    return EmbeddingVector(values=tuple(float(v) for v in values), model_name="t")


def brute_force_cosine(a, b):
    """Independent oracle: plain python dot / norms."""
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return dot / (na * nb)


def brute_force_pairwise_mean(vectors):
    """Independent oracle: double loop over unordered pairs."""
    sims = []
    for i in range(len(vectors)):
        for j in range(i + 1, len(vectors)):
            sims.append(brute_force_cosine(vectors[i], vectors[j]))
    return sum(sims) / len(sims), len(sims)


class TestCosine:
    def test_identity(self):
        v = _vec(0.3, -1.2, 4.0)
        assert cosine(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert cosine(_vec(1, 0), _vec(0, 1)) == 0.0

    def test_against_hand_computed_oracle(self):
        a, b = (1.0, 2.0, 3.0), (4.0, 5.0, 6.0)
        expected = brute_force_cosine(a, b)
        assert expected == pytest.approx(0.974631846, abs=1e-9)
        assert cosine(_vec(*a), _vec(*b)) == pytest.approx(expected, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            cosine(_vec(1, 2), _vec(1, 2, 3))

    def test_zero_vector(self):
        with pytest.raises(ZeroVector):
            cosine(_vec(0, 0), _vec(1, 2))

    @settings(max_examples=150, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=32),
           st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=32),
           st.floats(1e-3, 1e3))
    def test_symmetry_and_scale_invariance(self, xs, ys, lam):
        n = min(len(xs), len(ys))
        xs, ys = xs[:n], ys[:n]
        # Norms that underflow to zero hit the ZeroVector precondition.
        if math.sqrt(sum(x * x for x in xs)) == 0 or \
                math.sqrt(sum(y * y for y in ys)) == 0 or \
                math.sqrt(sum((lam * x) ** 2 for x in xs)) == 0:
            return
        a, b = _vec(*xs), _vec(*ys)
        assert cosine(a, b) == cosine(b, a)
        assert abs(cosine(a, b)) <= 1 + 1e-12
        scaled = _vec(*(lam * x for x in xs))
        assert cosine(scaled, b) == pytest.approx(cosine(a, b), abs=1e-12)


class TestPairwiseSimilarity:
    def test_degenerate_identical_set(self):
        report = pairwise_similarity([_vec(1, 2, 3)] * 3)
        assert report.pair_count == 3
        assert report.mean_similarity == pytest.approx(1.0, abs=1e-12)

    def test_three_vector_hand_case(self):
        s = 1 / math.sqrt(2)
        vectors = [(1.0, 0.0), (0.0, 1.0), (s, s)]
        expected_mean, expected_pairs = brute_force_pairwise_mean(vectors)
        assert expected_mean == pytest.approx(math.sqrt(2) / 3, abs=1e-12)
        report = pairwise_similarity([_vec(*v) for v in vectors])
        assert report.pair_count == expected_pairs == 3
        assert report.mean_similarity == pytest.approx(expected_mean, abs=1e-12)

    def test_restricted_pair_count(self):
        vectors = [_vec(1, 0), _vec(0, 1), _vec(1, 1), _vec(1, 2)]
        report = pairwise_similarity(vectors, labels=["A", "A", "B", "B"],
                                     class_restricted=True)
        assert report.pair_count == 2
        assert report.class_restricted

    def test_restricted_needs_labels(self):
        with pytest.raises(MissingLabels):
            pairwise_similarity([_vec(1, 0), _vec(0, 1)], class_restricted=True)

    def test_too_few_items(self):
        with pytest.raises(TooFewItems):
            pairwise_similarity([_vec(1, 0)])

    def test_histogram_counts_sum_to_pair_count(self):
        rng = random.Random(3)
        vectors = [_vec(*(rng.uniform(-1, 1) for _ in range(8))) for _ in range(40)]
        report = pairwise_similarity(vectors)
        assert report.pair_count == 40 * 39 // 2
        assert sum(c for _, c in report.histogram) == report.pair_count

    def test_final_bin_closed_at_one(self):
        report = pairwise_similarity([_vec(2, 2), _vec(1, 1), _vec(3, 3)])
        assert report.mean_similarity == pytest.approx(1.0, abs=1e-12)
        assert report.histogram[-1][1] == 3  # all three pairs land in the top bin

    def test_matches_double_loop_oracle_on_random_sets(self):
        rng = random.Random(7)
        for trial in range(5):
            dim = rng.choice([4, 8, 16])
            raw = [[rng.gauss(0, 1) for _ in range(dim)]
                   for _ in range(rng.randint(10, 60))]
            report = pairwise_similarity([_vec(*v) for v in raw])
            mean, pairs = brute_force_pairwise_mean(raw)
            assert report.pair_count == pairs
            assert report.mean_similarity == pytest.approx(mean, abs=1e-9)


def make_dataset(texts, labels=None, spec_name="gsm8k"):
    records = tuple(
        GenerationRecord(id=record_id(1, i), strategy="independent", final_text=t,
                         class_label=None if labels is None else labels[i], seed=i)
        for i, t in enumerate(texts))
    manifest = RunManifest(requested_n=len(texts), domain=spec_name,
                           strategy="independent", global_seed=1)
    return Dataset(records=records, manifest=manifest)


class TestClassCoverage:
    def _spec(self, k=20):
        return DomainSpec(name="newsgroups", task_description="messages",
                          label_mode="model_generated",
                          class_set=tuple(f"group.{i}" for i in range(k)))

    def test_nineteen_of_twenty(self):
        spec = self._spec()
        ds = make_dataset([f"t{i}" for i in range(19)],
                          labels=[f"group.{i}" for i in range(19)])
        report = class_coverage(ds, spec)
        assert report.coverage_fraction == pytest.approx(0.95)

    def test_twelve_of_twenty(self):
        spec = self._spec()
        ds = make_dataset([f"t{i}" for i in range(24)],
                          labels=[f"group.{i % 12}" for i in range(24)])
        assert class_coverage(ds, spec).coverage_fraction == pytest.approx(0.60)

    def test_empty_dataset_zero_coverage(self):
        assert class_coverage(make_dataset([]), self._spec()).coverage_fraction == 0.0

    def test_unlabeled_and_foreign_labels_ignored(self):
        spec = self._spec(k=4)
        ds = make_dataset(["a", "b", "c"], labels=["group.0", None, "not.a.group"])
        report = class_coverage(ds, spec)
        assert report.covered == ("group.0",)

    def test_no_class_set(self):
        spec = DomainSpec(name="open", task_description="x")
        with pytest.raises(NoClassSet):
            class_coverage(make_dataset(["a"]), spec)


class TestIndistinguishabilityRate:
    def _synthetic(self, n, marker="ZZSYNTHZZ"):
        return make_dataset([f"generated {marker} entry number {i}" for i in range(n)])

    def _pool(self, n=8):
        return [f"real entry {i} with plain text" for i in range(n)]

    def test_perfect_judge_rate_zero(self):
        client = mock_client(seed=1, concurrency_limit=4)
        report = indistinguishability_rate(
            client, self._synthetic(40), self._pool(),
            judge_endpoint("perfect_judge:ZZSYNTHZZ"), k=4, trials=40, seed=5)
        assert report.rate == 0.0
        assert report.fooled == 0
        assert report.unparseable == 0

    def test_random_judge_near_analytic_rate(self):
        client = mock_client(seed=2, concurrency_limit=8)
        report = indistinguishability_rate(
            client, self._synthetic(1500), self._pool(),
            judge_endpoint("random_judge"), k=4, trials=1500, seed=6)
        assert abs(report.rate - 0.75) < 0.05

    def test_scripted_judge_thirty_correct_of_hundred(self):
        synthetic = self._synthetic(100)
        pool = self._pool()
        probe = indistinguishability_rate(
            mock_client(seed=3, concurrency_limit=1), synthetic, pool,
            judge_endpoint("fixed_judge:1"), k=4, trials=100, seed=7)
        positions = [row["synthetic_position"] for row in probe.rows]
        responses = [f"Answer: {pos if t < 30 else (pos % 4) + 1}"
                     for t, pos in enumerate(positions)]
        transport = DispatchTransport(
            {"mock://scripted": scripted_chat_transport(responses)}, seed=3)
        client = ModelClient(transport=transport, concurrency_limit=1)
        report = indistinguishability_rate(
            client, synthetic, pool, judge_endpoint("scripted"), k=4, trials=100, seed=7)
        assert report.fooled == 70
        assert report.rate == pytest.approx(0.70)

    def test_unparseable_excluded_from_denominator(self):
        synthetic = self._synthetic(10)
        probe = indistinguishability_rate(
            mock_client(seed=4, concurrency_limit=1), synthetic, self._pool(),
            judge_endpoint("fixed_judge:1"), k=4, trials=10, seed=8)
        positions = [row["synthetic_position"] for row in probe.rows]
        responses = []
        for t, pos in enumerate(positions):
            if t < 4:
                responses.append("I honestly cannot tell these apart.")
            else:
                responses.append(f"Answer: {(pos % 4) + 1}")  # always fooled
        transport = DispatchTransport(
            {"mock://scripted": scripted_chat_transport(responses)}, seed=4)
        client = ModelClient(transport=transport, concurrency_limit=1)
        report = indistinguishability_rate(
            client, synthetic, self._pool(), judge_endpoint("scripted"),
            k=4, trials=10, seed=8)
        assert report.unparseable == 4
        assert report.fooled == 6
        assert report.rate == pytest.approx(1.0)
        assert report.fooled + report.unparseable <= report.trials

    def test_rate_invariant_to_pool_ordering(self):
        synthetic = self._synthetic(60)
        pool = self._pool(12)
        shuffled = list(pool)
        random.Random(99).shuffle(shuffled)
        a = indistinguishability_rate(mock_client(seed=5), synthetic, pool,
                                      judge_endpoint("random_judge"), k=4,
                                      trials=60, seed=9)
        b = indistinguishability_rate(mock_client(seed=5), synthetic, shuffled,
                                      judge_endpoint("random_judge"), k=4,
                                      trials=60, seed=9)
        assert a.rate == b.rate
        assert a.rows == b.rows

    def test_synthetic_records_not_reused_across_trials(self):
        report = indistinguishability_rate(
            mock_client(seed=6), self._synthetic(50), self._pool(),
            judge_endpoint("random_judge"), k=4, trials=50, seed=10)
        ids = [row["synthetic_id"] for row in report.rows]
        assert len(set(ids)) == 50

    def test_pool_too_small(self):
        with pytest.raises(PoolTooSmall):
            indistinguishability_rate(mock_client(), self._synthetic(5),
                                      ["only", "two"], judge_endpoint(), k=4, trials=5)

    def test_insufficient_synthetic(self):
        with pytest.raises(InsufficientSynthetic):
            indistinguishability_rate(mock_client(), self._synthetic(5),
                                      self._pool(), judge_endpoint(), k=4, trials=6)

    def test_default_trials_capped_at_200(self):
        report = indistinguishability_rate(
            mock_client(seed=7), self._synthetic(300), self._pool(),
            judge_endpoint("random_judge"), k=4, seed=11)
        assert report.trials == 200
