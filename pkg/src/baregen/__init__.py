"""Synthetic dataset generation (base-then-refine and baselines) plus
diversity and quality evaluation."""

from .client import CompletionRequest, EmbeddingVector, ModelClient, RetryPolicy
from .errors import BaregenError
from .metrics import (
    CoverageReport,
    IRReport,
    SimilarityReport,
    class_coverage,
    cosine,
    indistinguishability_rate,
    pairwise_similarity,
)
from .mock import mock_backend
from .strategies import GenerationEngine, StrategyConfig
from .types import (
    Dataset,
    DomainSpec,
    FewShotExample,
    GenerationRecord,
    ModelEndpoint,
    RunManifest,
    validate_domain_spec,
)

__version__ = "0.1.0"

__all__ = [
    "BaregenError",
    "CompletionRequest",
    "CoverageReport",
    "Dataset",
    "DomainSpec",
    "EmbeddingVector",
    "FewShotExample",
    "GenerationEngine",
    "GenerationRecord",
    "IRReport",
    "ModelClient",
    "ModelEndpoint",
    "RetryPolicy",
    "RunManifest",
    "SimilarityReport",
    "StrategyConfig",
    "class_coverage",
    "cosine",
    "indistinguishability_rate",
    "mock_backend",
    "pairwise_similarity",
    "validate_domain_spec",
    "__version__",
]
