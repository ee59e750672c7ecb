"""Controlled training-set construction.

Three dataset kinds per test scenario, eight sizes each:

- no-leakage: random non-leaking queries, balanced between the MSM and
  ORCAS sources within one query.
- msm-leakage: a fixed number of manually verified leaking queries (500
  for robust04, 100 for the Common Core scenarios), topped up with
  no-leakage queries to the requested size.
- test-leakage: queries taken from the test topics themselves, each
  selected topic twice with distinct positive and distinct negative
  documents drawn from the judgments; the rest is no-leakage fill.

Every pair is one query with one relevant and one non-relevant document,
so a dataset of size_instances carries size_instances/2 pairs. Builds are
pure functions of (inputs, spec, seed); the grid builder writes all 72
files plus a manifest of SHA-256 digests.
"""

from __future__ import annotations

import enum
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

from . import corpus_io, evaluation
from .errors import AuditError, InsufficientPoolError, ValidationError
from .seeding import derive_rng
from .types import (
    LeakageCandidate,
    Qrels,
    QueryCollection,
    Run,
    Source,
    TopicSet,
    TrainingInstance,
    TrainingSet,
)

GRID_SIZES = (1000, 2000, 4000, 8000, 16000, 32000, 64000, 128000)


class Scenario(str, enum.Enum):
    ROBUST04 = "robust04"
    CC17 = "cc17"
    CC18 = "cc18"


class Kind(str, enum.Enum):
    NO_LEAKAGE = "no-leakage"
    MSM_LEAKAGE = "msm-leakage"
    TEST_LEAKAGE = "test-leakage"


LEAKED_QUERY_COUNTS = {Scenario.ROBUST04: 500, Scenario.CC17: 100, Scenario.CC18: 100}


@dataclass(frozen=True)
class DatasetSpec:
    scenario: Scenario
    kind: Kind
    size_instances: int
    leaked_query_count: int
    seed: int

    def __post_init__(self):
        if self.size_instances not in GRID_SIZES:
            raise ValidationError(
                f"size_instances must be one of {GRID_SIZES}, got {self.size_instances}"
            )
        expected = 0 if self.kind == Kind.NO_LEAKAGE else LEAKED_QUERY_COUNTS[self.scenario]
        if self.leaked_query_count != expected:
            raise ValidationError(
                f"{self.scenario.value}/{self.kind.value} requires leaked_query_count "
                f"{expected}, got {self.leaked_query_count}"
            )
        if self.leaked_query_count > self.size_instances // 2:
            raise ValidationError(
                f"{self.leaked_query_count} leaked queries exceed the "
                f"{self.size_instances // 2} queries of a size-{self.size_instances} dataset"
            )

    @classmethod
    def make(cls, scenario: Scenario, kind: Kind, size_instances: int, seed: int) -> DatasetSpec:
        leaked = 0 if kind == Kind.NO_LEAKAGE else LEAKED_QUERY_COUNTS[scenario]
        return cls(scenario=scenario, kind=kind, size_instances=size_instances,
                   leaked_query_count=leaked, seed=seed)

    @property
    def query_count(self) -> int:
        return self.size_instances // 2


@dataclass(frozen=True)
class ScenarioInputs:
    """Everything one scenario's builds consume."""

    pool: QueryCollection
    positives: dict[str, str]
    bm25_runs: Run
    exclusions: frozenset[str]
    verified_leaks: tuple[LeakageCandidate, ...] = ()
    topics: TopicSet | None = None
    qrels: Qrels | None = None


def sample_negative(query_id: str, bm25_runs: Run, known_positives: set[str],
                    seed: int) -> str:
    """Uniform pick from the query's top-100 run documents minus known
    positives. Deterministic under seed."""
    entries = bm25_runs.entries.get(query_id)
    if not entries:
        raise InsufficientPoolError(f"no run entries for query {query_id!r}")
    ranking = evaluation.sort_ties(entries)[:100]
    candidates = sorted(e.doc_id for e in ranking if e.doc_id not in known_positives)
    if not candidates:
        raise InsufficientPoolError(
            f"all {len(ranking)} run documents for query {query_id!r} are known positives"
        )
    rng = derive_rng(seed, "neg", query_id)
    return candidates[int(rng.integers(len(candidates)))]


def _make_pair(query, positives: dict[str, str], bm25_runs: Run, seed: int, *,
               leaked: bool = False, leak_topic_id: str | None = None) -> TrainingInstance:
    pos = positives.get(query.query_id)
    if pos is None:
        raise ValidationError(f"query {query.query_id!r} has no judged positive document")
    neg = sample_negative(query.query_id, bm25_runs, {pos}, seed)
    return TrainingInstance(
        query_id=query.query_id, query_text=query.text, pos_doc_id=pos, neg_doc_id=neg,
        source=query.source, leaked=leaked, leak_topic_id=leak_topic_id,
    )


def _sample_fill(pool: QueryCollection, exclusions: set[str], count: int,
                 positives: dict[str, str], bm25_runs: Run, seed: int) -> list[TrainingInstance]:
    """count non-leaking queries, balanced between MSM and ORCAS within 1.

    Eligible queries: in the pool, not excluded, MSM- or ORCAS-sourced, and
    equipped with a judged positive and a run for negative sampling.
    """
    if count == 0:
        return []
    eligible: dict[Source, list] = {Source.MSM: [], Source.ORCAS: []}
    for query in pool.entries:
        if query.source not in eligible or query.query_id in exclusions:
            continue
        if query.query_id not in positives or query.query_id not in bm25_runs.entries:
            continue
        eligible[query.source].append(query)

    need = {Source.MSM: count - count // 2, Source.ORCAS: count // 2}
    pairs: list[TrainingInstance] = []
    for source in (Source.MSM, Source.ORCAS):
        have = sorted(eligible[source], key=lambda q: q.query_id)
        if len(have) < need[source]:
            raise InsufficientPoolError(
                f"need {need[source]} eligible {source.value} queries, have {len(have)} "
                f"(short by {need[source] - len(have)})"
            )
        rng = derive_rng(seed, "fill", source.value)
        chosen = rng.choice(len(have), size=need[source], replace=False)
        for i in sorted(int(j) for j in chosen):
            pairs.append(_make_pair(have[i], positives, bm25_runs, seed))
    return pairs


def _finish(pairs: list[TrainingInstance], spec: DatasetSpec) -> TrainingSet:
    pairs.sort(key=lambda p: (p.query_id, p.pos_doc_id))
    ts = TrainingSet(pairs=pairs)
    if ts.instance_count() != spec.size_instances:
        raise ValidationError(
            f"built {ts.instance_count()} instances, spec wants {spec.size_instances}"
        )
    return ts


def build_no_leakage(pool: QueryCollection, exclusions: set[str], spec: DatasetSpec,
                     positives: dict[str, str], bm25_runs: Run) -> TrainingSet:
    """size_instances/2 random non-leaking queries, source-balanced."""
    if spec.kind != Kind.NO_LEAKAGE:
        raise ValidationError(f"spec kind is {spec.kind.value}, not no-leakage")
    pairs = _sample_fill(pool, set(exclusions), spec.query_count, positives, bm25_runs,
                         spec.seed)
    return _finish(pairs, spec)


def _dedupe_leaks(verified_leaks) -> list[LeakageCandidate]:
    """One candidate per query: the highest-similarity verified leak, its
    topic becoming the query's leak_topic_id."""
    best: dict[str, LeakageCandidate] = {}
    for c in verified_leaks:
        if c.label is not True:
            raise ValidationError(
                f"candidate ({c.topic_id!r}, {c.query_id!r}) is not labeled true"
            )
        cur = best.get(c.query_id)
        if cur is None or (-c.similarity, c.topic_id) < (-cur.similarity, cur.topic_id):
            best[c.query_id] = c
    return [best[q] for q in sorted(best)]


def build_msm_leakage(verified_leaks: list[LeakageCandidate], pool: QueryCollection,
                      exclusions: set[str], spec: DatasetSpec, positives: dict[str, str],
                      bm25_runs: Run) -> TrainingSet:
    """Exactly leaked_query_count verified leaking queries plus no-leakage fill."""
    if spec.kind != Kind.MSM_LEAKAGE:
        raise ValidationError(f"spec kind is {spec.kind.value}, not msm-leakage")
    distinct = _dedupe_leaks(verified_leaks)
    if len(distinct) < spec.leaked_query_count:
        raise InsufficientPoolError(
            f"need {spec.leaked_query_count} verified leaking queries, have {len(distinct)}"
        )
    rng = derive_rng(spec.seed, "leak")
    chosen = rng.choice(len(distinct), size=spec.leaked_query_count, replace=False)
    by_id = pool.by_id()
    pairs: list[TrainingInstance] = []
    leaked_ids: set[str] = set()
    for i in sorted(int(j) for j in chosen):
        leak = distinct[i]
        query = by_id.get(leak.query_id)
        if query is None:
            raise ValidationError(f"verified leak {leak.query_id!r} is not in the query pool")
        pairs.append(_make_pair(query, positives, bm25_runs, spec.seed,
                                leaked=True, leak_topic_id=leak.topic_id))
        leaked_ids.add(leak.query_id)

    fill_exclusions = set(exclusions) | leaked_ids
    pairs.extend(_sample_fill(pool, fill_exclusions, spec.query_count - spec.leaked_query_count,
                              positives, bm25_runs, spec.seed))
    return _finish(pairs, spec)


def _usable_test_topics(topics: TopicSet, qrels: Qrels) -> list[tuple[str, list[str], list[str]]]:
    usable = []
    for topic in sorted(topics.topics, key=lambda t: t.topic_id):
        judged = qrels.docs_for(topic.topic_id)
        rel = sorted(d for d in judged if qrels.grade(topic.topic_id, d) >= 1)
        nonrel = sorted(d for d in judged if qrels.grade(topic.topic_id, d) == 0)
        if len(rel) < 2 or len(nonrel) < 2:
            short = "relevant" if len(rel) < 2 else "non-relevant"
            warnings.warn(
                f"topic {topic.topic_id!r} lacks 2 distinct judged {short} documents; skipped"
            )
            continue
        usable.append((topic.topic_id, rel, nonrel))
    return usable


def build_test_leakage(topics: TopicSet, qrels: Qrels, pool: QueryCollection,
                       exclusions: set[str], spec: DatasetSpec, bm25_runs: Run,
                       positives: dict[str, str]) -> TrainingSet:
    """leaked_query_count/2 test topics, each contributing two pairs with
    distinct judged positives and distinct judged negatives; the query text
    is the topic title. Fill comes from the no-leakage pool."""
    if spec.kind != Kind.TEST_LEAKAGE:
        raise ValidationError(f"spec kind is {spec.kind.value}, not test-leakage")
    if spec.leaked_query_count % 2:
        raise ValidationError(
            f"test leakage needs an even leaked_query_count, got {spec.leaked_query_count}"
        )
    topic_count = spec.leaked_query_count // 2
    usable = _usable_test_topics(topics, qrels)
    if len(usable) < topic_count:
        raise InsufficientPoolError(
            f"need {topic_count} usable test topics, have {len(usable)}"
        )
    rng = derive_rng(spec.seed, "topics")
    chosen = rng.choice(len(usable), size=topic_count, replace=False)
    by_id = topics.by_id()
    pairs: list[TrainingInstance] = []
    for i in sorted(int(j) for j in chosen):
        topic_id, rel, nonrel = usable[i]
        title = by_id[topic_id].title
        topic_rng = derive_rng(spec.seed, "testdocs", topic_id)
        pos_pick = topic_rng.choice(len(rel), size=2, replace=False)
        neg_pick = topic_rng.choice(len(nonrel), size=2, replace=False)
        for slot in range(2):
            pairs.append(TrainingInstance(
                query_id=topic_id, query_text=title,
                pos_doc_id=rel[int(pos_pick[slot])], neg_doc_id=nonrel[int(neg_pick[slot])],
                source=Source.TEST, leaked=True, leak_topic_id=topic_id,
            ))

    pairs.extend(_sample_fill(pool, set(exclusions), spec.query_count - spec.leaked_query_count,
                              positives, bm25_runs, spec.seed))
    return _finish(pairs, spec)


def build_dataset(spec: DatasetSpec, inputs: ScenarioInputs) -> TrainingSet:
    if spec.kind == Kind.NO_LEAKAGE:
        return build_no_leakage(inputs.pool, set(inputs.exclusions), spec,
                                inputs.positives, inputs.bm25_runs)
    if spec.kind == Kind.MSM_LEAKAGE:
        return build_msm_leakage(list(inputs.verified_leaks), inputs.pool,
                                 set(inputs.exclusions), spec, inputs.positives,
                                 inputs.bm25_runs)
    if inputs.topics is None or inputs.qrels is None:
        raise ValidationError(f"{spec.scenario.value}: test leakage needs topics and qrels")
    return build_test_leakage(inputs.topics, inputs.qrels, inputs.pool,
                              set(inputs.exclusions), spec, inputs.bm25_runs,
                              inputs.positives)


def grid_file_name(scenario: Scenario, kind: Kind, size_instances: int) -> str:
    return f"{scenario.value}_{kind.value}_{size_instances}.jsonl"


def build_grid(inputs_by_scenario: dict[Scenario, ScenarioInputs], out_dir: str | Path,
               seed: int, sizes: tuple[int, ...] = GRID_SIZES) -> dict:
    """All kinds and sizes for every given scenario, written as JSONL files
    plus a manifest with one SHA-256 digest per file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for scenario in sorted(inputs_by_scenario, key=lambda s: s.value):
        inputs = inputs_by_scenario[scenario]
        for kind in Kind:
            for size in sizes:
                spec = DatasetSpec.make(scenario, kind, size, seed=seed)
                try:
                    ts = build_dataset(spec, inputs)
                except AuditError as e:
                    raise AuditError(
                        f"build failed for {scenario.value}/{kind.value}/{size}: {e}"
                    ) from e
                path = out / grid_file_name(scenario, kind, size)
                corpus_io.write_training_set(ts, path)
                files.append({
                    "scenario": scenario.value,
                    "kind": kind.value,
                    "size_instances": size,
                    "leaked_query_count": spec.leaked_query_count,
                    "leaked_instances": 2 * len(ts.leaked_pairs()),
                    "queries": len(ts.pairs),
                    "path": path.name,
                    "sha256": corpus_io.sha256_file(path),
                })
    manifest = {"seed": seed, "generator": "numpy-pcg64", "sizes": list(sizes), "files": files}
    with open(out / "grid_manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest
