"""Train-test leakage auditing for ad-hoc retrieval benchmarks.

The package finds training queries that leak test topics (exact or
paraphrased), builds controlled training sets with known leakage, and
measures the effect: evaluation metrics with canonical tie-breaking,
significance tests, cross-validated size selection, and memorization
statistics over leaked documents.
"""

from .errors import (
    AuditError,
    CalibrationError,
    FormatError,
    InsufficientPoolError,
    ValidationError,
)
from .types import (
    CalibrationResult,
    EmbeddingMatrix,
    LeakageCandidate,
    Neighbor,
    Qrels,
    Query,
    QueryCollection,
    Reformulation,
    Run,
    RunEntry,
    Source,
    Topic,
    TopicField,
    TopicSet,
    TrainingInstance,
    TrainingSet,
)

__version__ = "0.1.0"

__all__ = [
    "AuditError",
    "CalibrationError",
    "CalibrationResult",
    "EmbeddingMatrix",
    "FormatError",
    "InsufficientPoolError",
    "LeakageCandidate",
    "Neighbor",
    "Qrels",
    "Query",
    "QueryCollection",
    "Reformulation",
    "Run",
    "RunEntry",
    "Source",
    "Topic",
    "TopicField",
    "TopicSet",
    "TrainingInstance",
    "TrainingSet",
    "ValidationError",
    "__version__",
]
