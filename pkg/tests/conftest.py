"""Shared fixtures and corpus builders for the test suite."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from leakage_audit import nn_search
from leakage_audit.types import EmbeddingMatrix, Qrels, Run, RunEntry, Source

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


def unit_matrix(rng: np.random.Generator, n: int, dim: int,
                prefix: str = "q") -> EmbeddingMatrix:
    """Random unit-norm float32 matrix with zero-padded ids."""
    width = max(2, len(str(n - 1)))
    rows = rng.standard_normal((n, dim)).astype(np.float32)
    ids = [f"{prefix}{i:0{width}d}" for i in range(n)]
    return nn_search.normalize_rows(EmbeddingMatrix(ids=ids, rows=rows))


def make_run(per_topic: dict[str, list[tuple[str, float]]], tag: str = "t") -> Run:
    """per_topic maps topic to (doc_id, score) pairs in rank order."""
    entries = {}
    for topic, docs in per_topic.items():
        entries[topic] = [RunEntry(doc_id=d, rank=i + 1, score=s, tag=tag)
                          for i, (d, s) in enumerate(docs)]
    return Run(entries=entries)


def make_qrels(per_topic: dict[str, dict[str, int]]) -> Qrels:
    judgments = {}
    for topic, grades in per_topic.items():
        for doc, grade in grades.items():
            judgments[(topic, doc)] = grade
    return Qrels(judgments=judgments)


def random_run_and_qrels(
        rng: np.random.Generator, topics: int = 3, docs: int = 10,
        force_ties: bool = False,
) -> tuple[Run, Qrels, dict[str, list[tuple[str, float]]]]:
    """Random instance where every topic has at least one relevant doc.

    Returns (run, qrels, raw) where raw holds each topic's (doc, score)
    pairs plus the judged-but-unretrieved docs live only in qrels.
    """
    run: dict[str, list[tuple[str, float]]] = {}
    qrels: dict[str, dict[str, int]] = {}
    for ti in range(topics):
        topic = f"t{ti}"
        n = int(rng.integers(2, docs + 1))
        doc_ids = [f"d{j:02d}" for j in range(n)]
        scores = rng.random(n) * 4
        if force_ties:
            scores = np.round(scores, 1)
        run[topic] = list(zip(doc_ids, [float(s) for s in scores]))
        grades = {d: int(g) for d, g in zip(doc_ids, rng.integers(0, 3, size=n))}
        if all(g == 0 for g in grades.values()):
            grades[doc_ids[int(rng.integers(n))]] = 1
        # A few judged docs the run never retrieved.
        grades[f"x{ti}"] = int(rng.integers(0, 3))
        qrels[topic] = grades
    return make_run(run), make_qrels(qrels), run


def synthetic_scenario(seed: int = 0, msm: int = 600, orcas: int = 600,
                       leaks: int = 120, topic_count: int = 60,
                       deficient_topics: int = 0):
    """Self-consistent inputs for one dataset-builder scenario.

    Every query gets one judged positive and a four-document run; each topic
    gets two relevant and two non-relevant judged docs (deficient topics only
    one relevant, so test-leakage skips them); the first `leaks` MSM queries
    are verified leaking. Exclusions cover every 13th query of either source.
    """
    from leakage_audit.datasets import ScenarioInputs
    from leakage_audit.types import (
        LeakageCandidate, Qrels, Query, QueryCollection, Reformulation,
        Topic, TopicField, TopicSet,
    )

    rng = np.random.default_rng(seed)
    queries = []
    for i in range(msm):
        queries.append(Query(query_id=f"qm{i:05d}", text=f"msm query {i}",
                             source=Source.MSM))
    for i in range(orcas):
        queries.append(Query(query_id=f"qo{i:05d}", text=f"orcas query {i}",
                             source=Source.ORCAS))
    pool = QueryCollection(entries=queries)

    positives = {q.query_id: f"P-{q.query_id}" for q in queries}
    run_entries = {}
    for q in queries:
        docs = [(positives[q.query_id], 4.0)] + [
            (f"N-{q.query_id}-{j}", 3.0 - j) for j in range(3)]
        run_entries[q.query_id] = [
            RunEntry(doc_id=d, rank=r + 1, score=s, tag="bm25")
            for r, (d, s) in enumerate(docs)]
    bm25_runs = Run(entries=run_entries)

    exclusions = frozenset(q.query_id for i, q in enumerate(queries) if i % 13 == 0)

    topics = TopicSet(topics=[
        Topic(topic_id=f"T{i:03d}", title=f"topic {i} subject",
              description=f"all about topic {i}", narrative="", variants=[])
        for i in range(topic_count)])
    judgments = {}
    for i in range(topic_count):
        tid = f"T{i:03d}"
        judgments[(tid, f"rel-{tid}-a")] = 1 + (i % 2)
        if i >= deficient_topics:
            judgments[(tid, f"rel-{tid}-b")] = 1
        judgments[(tid, f"non-{tid}-a")] = 0
        judgments[(tid, f"non-{tid}-b")] = 0
    qrels = Qrels(judgments=judgments)

    verified = tuple(
        LeakageCandidate(
            topic_id=f"T{i % topic_count:03d}", query_id=f"qm{i:05d}",
            field=TopicField.TITLE,
            similarity=float(np.round(0.92 + 0.07 * rng.random(), 6)),
            label=True, reformulation=Reformulation.REFORMULATION)
        for i in range(leaks))

    return ScenarioInputs(pool=pool, positives=positives, bm25_runs=bm25_runs,
                          exclusions=exclusions, verified_leaks=verified,
                          topics=topics, qrels=qrels)
