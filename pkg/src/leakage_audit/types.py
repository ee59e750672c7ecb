"""Domain types for queries, topics, judgments, runs, training sets, and embeddings.

All containers are plain dataclasses over immutable-by-convention payloads:
once constructed (usually by a parser in corpus_io) they are never mutated,
so they can be shared freely across worker threads.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


class Source(str, enum.Enum):
    """Origin of a query: a training collection or the test topics themselves."""

    MSM = "msm"
    ORCAS = "orcas"
    OTHER = "other"
    TEST = "test"


class TopicField(str, enum.Enum):
    TITLE = "title"
    DESCRIPTION = "description"
    VARIANT = "variant"


class Reformulation(str, enum.Enum):
    IDENTICAL = "identical"
    GENERALIZATION = "generalization"
    SPECIALIZATION = "specialization"
    REFORMULATION = "reformulation"
    DIFFERENT_TOPIC = "different_topic"


@dataclass
class Query:
    query_id: str
    text: str
    source: Source = Source.OTHER


@dataclass
class QueryCollection:
    """Ordered list of training queries with unique non-empty ids."""

    entries: list[Query]

    def __post_init__(self):
        seen = set()
        for q in self.entries:
            if not q.query_id:
                raise ValidationError("query with empty id")
            if q.query_id in seen:
                raise ValidationError(f"duplicate query id {q.query_id!r}")
            seen.add(q.query_id)
            if not q.text.strip():
                raise ValidationError(f"query {q.query_id!r} has empty text")

    def __len__(self):
        return len(self.entries)

    def by_id(self) -> dict[str, Query]:
        return {q.query_id: q for q in self.entries}

    def sources(self) -> dict[str, Source]:
        return {q.query_id: q.source for q in self.entries}


@dataclass
class Topic:
    topic_id: str
    title: str
    description: str
    narrative: str
    variants: list[str] = field(default_factory=list)


@dataclass
class TopicSet:
    """Test topics; topic_id unique, title non-empty, variants may be empty."""

    topics: list[Topic]

    def __post_init__(self):
        seen = set()
        for t in self.topics:
            if not t.topic_id:
                raise ValidationError("topic with empty id")
            if t.topic_id in seen:
                raise ValidationError(f"duplicate topic id {t.topic_id!r}")
            seen.add(t.topic_id)
            if not t.title.strip():
                raise ValidationError(f"topic {t.topic_id!r} has empty title")

    def __len__(self):
        return len(self.topics)

    def by_id(self) -> dict[str, Topic]:
        return {t.topic_id: t for t in self.topics}


@dataclass
class Qrels:
    """Graded relevance judgments keyed by (topic_id, doc_id), grades >= 0."""

    judgments: dict[tuple[str, str], int]

    def grade(self, topic_id: str, doc_id: str) -> int:
        """Grade of a judged pair; unjudged pairs count as 0."""
        return self.judgments.get((topic_id, doc_id), 0)

    def topics(self) -> set[str]:
        return {t for t, _ in self.judgments}

    def docs_for(self, topic_id: str) -> dict[str, int]:
        return {d: g for (t, d), g in self.judgments.items() if t == topic_id}

    def relevant_docs(self, topic_id: str) -> set[str]:
        """Docs with grade >= 1 (standard binarization)."""
        return {d for (t, d), g in self.judgments.items() if t == topic_id and g >= 1}


@dataclass
class RunEntry:
    doc_id: str
    rank: int
    score: float
    tag: str


@dataclass
class Run:
    """TREC run: per topic an ordered list of scored documents.

    Input order is preserved by the parser; canonical (score desc, doc_id asc)
    order is produced on demand by evaluation.sort_ties.
    """

    entries: dict[str, list[RunEntry]]

    def topics(self) -> list[str]:
        return list(self.entries)


@dataclass
class TrainingInstance:
    """One training query with its positive and negative document.

    Counts as two instances in dataset-size arithmetic (one relevant and one
    non-relevant document per query).
    """

    query_id: str
    query_text: str
    pos_doc_id: str
    neg_doc_id: str
    source: Source
    leaked: bool = False
    leak_topic_id: str | None = None

    def __post_init__(self):
        if self.pos_doc_id == self.neg_doc_id:
            raise ValidationError(
                f"query {self.query_id!r}: positive and negative doc are both {self.pos_doc_id!r}"
            )
        if self.leaked and not self.leak_topic_id:
            raise ValidationError(f"query {self.query_id!r}: leaked=true without leak_topic_id")
        if self.source == Source.OTHER:
            raise ValidationError(f"query {self.query_id!r}: training source must be msm, orcas, or test")


@dataclass
class TrainingSet:
    """Training pairs; each pair counts as two instances (one per polarity)."""

    pairs: list[TrainingInstance]

    def instance_count(self) -> int:
        return 2 * len(self.pairs)

    def leaked_pairs(self) -> list[TrainingInstance]:
        return [p for p in self.pairs if p.leaked]


@dataclass
class EmbeddingMatrix:
    """Dense float32 row-major matrix with one string id per row.

    id_ranks() lazily computes the lexicographic (UTF-8 byte order) rank of
    every row id; the scan kernels use it as a purely numeric tie-breaker so
    their output order is canonical without string comparisons. The cache
    fill is idempotent, so concurrent first calls are harmless.
    """

    ids: list[str]
    rows: np.ndarray
    _id_ranks: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        rows = np.ascontiguousarray(self.rows, dtype=np.float32)
        if rows.ndim != 2:
            raise ValidationError(f"embedding matrix must be 2-D, got shape {rows.shape}")
        self.rows = rows
        if len(self.ids) != rows.shape[0]:
            raise ValidationError(
                f"id count {len(self.ids)} does not match row count {rows.shape[0]}"
            )
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("embedding row ids are not unique")
        if rows.shape[1] < 1:
            raise ValidationError("embedding dimension must be positive")

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])

    def __len__(self):
        return int(self.rows.shape[0])

    def id_ranks(self) -> np.ndarray:
        if self._id_ranks is None:
            order = sorted(range(len(self.ids)), key=lambda i: self.ids[i].encode("utf-8"))
            ranks = np.empty(len(self.ids), dtype=np.int64)
            ranks[np.asarray(order, dtype=np.int64)] = np.arange(len(self.ids), dtype=np.int64)
            self._id_ranks = ranks
        return self._id_ranks


@dataclass(order=True)
class Neighbor:
    """One row of a similarity search result, in canonical order.

    Result lists are sorted by (similarity descending, row id ascending in
    byte order); rank is the 1-based position in that order. similarity is
    a float64 dot product of unit float32 rows, so it can exceed +/-1 by
    round-off on the order of 1e-7.
    """

    sort_index: tuple = field(init=False, repr=False)
    query_row_id: str
    similarity: float
    rank: int

    def __post_init__(self):
        self.sort_index = (-self.similarity, self.query_row_id.encode("utf-8"))


@dataclass
class LeakageCandidate:
    """A (topic, query) similarity match on one topic field instance."""

    topic_id: str
    query_id: str
    field: TopicField
    similarity: float
    variant_index: int | None = None
    label: bool | None = None
    reformulation: Reformulation | None = None

    def __post_init__(self):
        if self.reformulation is not None and self.label is not None:
            implied = self.reformulation != Reformulation.DIFFERENT_TOPIC
            if self.label != implied:
                raise ValidationError(
                    f"candidate ({self.topic_id!r}, {self.query_id!r}): reformulation "
                    f"{self.reformulation.value} contradicts label {self.label}"
                )


@dataclass
class CalibrationResult:
    threshold: float
    achieved_precision: float
    support: int
