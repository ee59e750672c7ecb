"""Leaking-query identification: candidate generation, threshold calibration,
reformulation classification, annotator agreement, and the summary reports.

The pipeline mirrors a contamination audit: embed every training query and
every topic field instance, pull the k nearest queries per field instance,
have humans label a stratified sample to calibrate the similarity cutoff,
then count leaking topics/queries per field and per source collection.
"""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import nn_search
from .errors import CalibrationError, ValidationError
from .types import (
    CalibrationResult,
    EmbeddingMatrix,
    LeakageCandidate,
    QueryCollection,
    Reformulation,
    Source,
    TopicField,
    TopicSet,
)

# Default cutoff shipped with the tool: the lowest similarity that reached
# 0.9 labeling precision in the original calibration of this pipeline.
DEFAULT_SIMILARITY_THRESHOLD = 0.91
DEFAULT_TARGET_PRECISION = 0.9
DEFAULT_SAMPLE_FLOOR = 0.8
DEFAULT_REVIEW_PER_TOPIC = 5

_FIELD_ORDER = {TopicField.TITLE: 0, TopicField.DESCRIPTION: 1, TopicField.VARIANT: 2}


def parse_field_row_id(row_id: str) -> tuple[str, TopicField, int]:
    """Split a topic-embedding row id of the form ``topic_id#field#index``."""
    parts = row_id.rsplit("#", 2)
    if len(parts) != 3:
        raise ValidationError(f"topic embedding row id {row_id!r} is not topic_id#field#index")
    topic_id, field_str, index_str = parts
    try:
        fieldv = TopicField(field_str)
    except ValueError:
        raise ValidationError(f"row id {row_id!r}: unknown field {field_str!r}")
    try:
        index = int(index_str)
    except ValueError:
        raise ValidationError(f"row id {row_id!r}: non-integer index {index_str!r}")
    if index < 0:
        raise ValidationError(f"row id {row_id!r}: negative index")
    return topic_id, fieldv, index


def make_field_row_id(topic_id: str, fieldv: TopicField, index: int = 0) -> str:
    return f"{topic_id}#{fieldv.value}#{index}"


def generate_candidates(topics: TopicSet, matrix: EmbeddingMatrix,
                        topic_embeddings: EmbeddingMatrix, k: int = 100, *,
                        threads: int = 1,
                        block_rows: int = nn_search.DEFAULT_BLOCK_ROWS) -> list[LeakageCandidate]:
    """For every topic field instance, the k nearest queries become candidates.

    topic_embeddings must carry one row per (topic, field instance) with ids
    of the form ``topic_id#field#index``; every topic id must exist in
    `topics` and variant indices must address an actual variant. Matches of
    the same (topic, query) pair on different fields are kept as separate
    candidates. Output is sorted by (topic_id, similarity desc, query_id).
    """
    by_id = topics.by_id()
    probe_meta = []
    for row_id in topic_embeddings.ids:
        topic_id, fieldv, index = parse_field_row_id(row_id)
        topic = by_id.get(topic_id)
        if topic is None:
            raise ValidationError(f"embedding row {row_id!r} references unknown topic {topic_id!r}")
        if fieldv == TopicField.VARIANT:
            if index >= len(topic.variants):
                raise ValidationError(
                    f"embedding row {row_id!r}: topic {topic_id!r} has only "
                    f"{len(topic.variants)} variants"
                )
        elif index != 0:
            raise ValidationError(f"embedding row {row_id!r}: index must be 0 for {fieldv.value}")
        probe_meta.append((topic_id, fieldv, index))

    neighbor_lists = nn_search.scan_top_k(matrix, topic_embeddings.rows, k,
                                          threads=threads, block_rows=block_rows)
    candidates = []
    for (topic_id, fieldv, index), neighbors in zip(probe_meta, neighbor_lists):
        for n in neighbors:
            candidates.append(LeakageCandidate(
                topic_id=topic_id,
                query_id=n.query_row_id,
                field=fieldv,
                variant_index=index if fieldv == TopicField.VARIANT else None,
                similarity=n.similarity,
            ))
    candidates.sort(key=lambda c: (c.topic_id, -c.similarity, c.query_id))
    return candidates


def dedupe_pairs(candidates: list[LeakageCandidate]) -> list[LeakageCandidate]:
    """One candidate per (topic, query) pair: the highest-similarity match.

    Similarity ties prefer title over description over variants, then the
    lowest variant index, so the choice is deterministic.
    """
    best: dict[tuple[str, str], LeakageCandidate] = {}
    for c in candidates:
        key = (c.topic_id, c.query_id)
        cur = best.get(key)
        if cur is None or _pair_rank(c) < _pair_rank(cur):
            best[key] = c
    return sorted(best.values(), key=lambda c: (c.topic_id, -c.similarity, c.query_id))


def _pair_rank(c: LeakageCandidate):
    return (-c.similarity, _FIELD_ORDER[c.field], c.variant_index if c.variant_index is not None else -1)


@dataclass
class LabelingSample:
    """A stratified sample of candidate pairs ready for annotation.

    too_few is set when fewer distinct pairs than requested existed above
    the floor, in which case all of them are returned.
    """

    candidates: list[LeakageCandidate]
    too_few: bool = False
    bin_populations: dict[int, int] = field(default_factory=dict)
    bin_allocations: dict[int, int] = field(default_factory=dict)


def stratified_sample(candidates: list[LeakageCandidate], floor: float = DEFAULT_SAMPLE_FLOOR,
                      n: int = 100, bin_width: float = 0.02, seed: int = 0) -> LabelingSample:
    """Sample n deduplicated (topic, query) pairs with similarity > floor.

    Pairs are binned into equal-width similarity bins covering (floor, 1.0];
    each bin gets a proportional share of n (remainders go to the densest
    bins) and is sampled without replacement. Deterministic under seed.
    """
    pairs = [c for c in dedupe_pairs(candidates) if c.similarity > floor]
    if not pairs:
        raise ValidationError(f"no candidate pairs with similarity above {floor}")
    if len(pairs) <= n:
        sample = sorted(pairs, key=lambda c: (-c.similarity, c.topic_id, c.query_id))
        return LabelingSample(candidates=sample, too_few=len(pairs) < n)

    nbins = max(1, int(np.ceil((1.0 - floor) / bin_width)))

    def bin_of(sim: float) -> int:
        return min(int((sim - floor) / bin_width), nbins - 1)

    bins: dict[int, list[LeakageCandidate]] = {}
    for c in pairs:
        bins.setdefault(bin_of(c.similarity), []).append(c)

    total = len(pairs)
    alloc = {b: (n * len(members)) // total for b, members in bins.items()}
    leftover = n - sum(alloc.values())
    # Densest bins absorb the remainder, one slot at a time.
    density_order = sorted(bins, key=lambda b: (-len(bins[b]), b))
    i = 0
    while leftover > 0:
        b = density_order[i % len(density_order)]
        if alloc[b] < len(bins[b]):
            alloc[b] += 1
            leftover -= 1
        i += 1

    rng = np.random.default_rng(seed)
    sample: list[LeakageCandidate] = []
    for b in sorted(bins):
        members = sorted(bins[b], key=lambda c: (c.topic_id, c.query_id))
        take = alloc[b]
        if take == 0:
            continue
        chosen = rng.choice(len(members), size=take, replace=False)
        sample.extend(members[int(j)] for j in sorted(chosen))
    sample.sort(key=lambda c: (-c.similarity, c.topic_id, c.query_id))
    return LabelingSample(
        candidates=sample,
        too_few=False,
        bin_populations={b: len(m) for b, m in sorted(bins.items())},
        bin_allocations=dict(sorted(alloc.items())),
    )


def review_candidates(candidates: list[LeakageCandidate], theta: float,
                      per_topic: int = DEFAULT_REVIEW_PER_TOPIC) -> list[LeakageCandidate]:
    """The most similar candidate pairs per topic at or above theta, for
    manual review. Inclusive to match the calibrated threshold, which is
    itself an observed pair similarity."""
    out: list[LeakageCandidate] = []
    per: dict[str, int] = {}
    for c in dedupe_pairs(candidates):
        if c.similarity < theta:
            continue
        if per.get(c.topic_id, 0) < per_topic:
            out.append(c)
            per[c.topic_id] = per.get(c.topic_id, 0) + 1
    return out


def calibrate_threshold(labeled: list[tuple[float, bool]],
                        target_precision: float = DEFAULT_TARGET_PRECISION) -> CalibrationResult:
    """Lowest observed similarity whose at-or-above precision meets the target.

    Precision at cutoff t is true/(true+false) over pairs with similarity >= t.
    Raises CalibrationError (carrying the best achievable precision) when no
    cutoff reaches the target.
    """
    if not labeled:
        raise ValidationError("no labeled pairs")
    if not any(label for _, label in labeled):
        raise ValidationError("calibration needs at least one true-labeled pair")

    by_sim = sorted(labeled, key=lambda x: -x[0])
    best = None
    best_precision = 0.0
    true_count = 0
    i = 0
    while i < len(by_sim):
        # Advance over all pairs sharing this similarity value.
        sim = by_sim[i][0]
        while i < len(by_sim) and by_sim[i][0] == sim:
            true_count += by_sim[i][1]
            i += 1
        precision = true_count / i
        best_precision = max(best_precision, precision)
        if precision >= target_precision:
            best = CalibrationResult(threshold=sim, achieved_precision=precision, support=i)
    if best is None:
        raise CalibrationError(
            f"no similarity cutoff reaches precision {target_precision} "
            f"(best achievable: {best_precision:.4f})",
            best_precision=best_precision,
        )
    return best


_STOPWORDS = frozenset("""
a an and are as at be but by for from in into is it its of on or that the
this to was were what when where which who why will with how do does did
""".split())

_PUNCT_TABLE = str.maketrans({ch: " " for ch in string.punctuation})


def _stem(word: str) -> str:
    # Light inflection folding only: -ing, -ed, -es, -s.
    if len(word) > 5 and word.endswith("ing"):
        return word[:-3]
    if len(word) > 4 and word.endswith("ed"):
        return word[:-2]
    # -es folds only after a sibilant base (boxes, classes); a plain plural
    # like "diseases" must fall through to the -s rule so it meets "disease".
    if len(word) > 3 and word.endswith("es") and word[:-2].endswith(("ss", "x", "z", "sh", "ch")):
        return word[:-2]
    if len(word) > 3 and word.endswith("s") and not word.endswith("ss"):
        return word[:-1]
    return word


def normalize_tokens(text: str) -> frozenset[str]:
    words = text.lower().translate(_PUNCT_TABLE).split()
    return frozenset(_stem(w) for w in words if w not in _STOPWORDS)


def classify_reformulation(topic_title: str, query: str, similarity: float,
                           different_topic_floor: float = DEFAULT_SIMILARITY_THRESHOLD) -> Reformulation:
    """Deterministic proxy for the manual reformulation-type annotation.

    Over normalized token sets (lowercased, punctuation stripped, stopwords
    removed, suffix-stemmed): equal sets are identical queries, a proper
    subset is a generalization, a proper superset a specialization; anything
    else is a reformulation when the embedding similarity clears the floor
    and a different topic otherwise.
    """
    title_tokens = normalize_tokens(topic_title)
    query_tokens = normalize_tokens(query)
    if query_tokens == title_tokens:
        return Reformulation.IDENTICAL
    if query_tokens < title_tokens:
        return Reformulation.GENERALIZATION
    if query_tokens > title_tokens:
        return Reformulation.SPECIALIZATION
    if similarity >= different_topic_floor:
        return Reformulation.REFORMULATION
    return Reformulation.DIFFERENT_TOPIC


def cohen_kappa(labels_a: list, labels_b: list) -> float:
    """Chance-corrected agreement between two aligned label lists."""
    if len(labels_a) != len(labels_b):
        raise ValidationError(
            f"label lists differ in length: {len(labels_a)} vs {len(labels_b)}"
        )
    if not labels_a:
        raise ValidationError("label lists are empty")
    n = len(labels_a)
    observed = sum(a == b for a, b in zip(labels_a, labels_b)) / n
    counts_a = Counter(labels_a)
    counts_b = Counter(labels_b)
    expected = sum(counts_a[c] * counts_b.get(c, 0) for c in counts_a) / (n * n)
    if expected == 1.0:
        return 1.0
    return (observed - expected) / (1.0 - expected)


def _count_block(pairs: list[LeakageCandidate], sources: dict[str, Source]) -> dict:
    msm = [c for c in pairs if sources[c.query_id] == Source.MSM]
    return {
        "msm": {"topics": len({c.topic_id for c in msm}), "queries": len({c.query_id for c in msm})},
        "all": {"topics": len({c.topic_id for c in pairs}), "queries": len({c.query_id for c in pairs})},
    }


def leakage_report(candidates: list[LeakageCandidate], theta: float,
                   sources: QueryCollection | dict[str, Source],
                   verified_only: bool = False) -> dict:
    """Counts of leaking topics and queries at or above theta.

    Theta is inclusive: the calibrated threshold is the lowest observed
    similarity meeting the precision target, so the pair that defines it
    counts as leaking. Per field and for the (topic, query)-deduplicated
    union, split into the MSM-only slice and all sources combined. When
    labeled candidates are present, adds true/false pair counts and a
    reformulation histogram. With verified_only=True, only candidates
    labeled true contribute to the field and union counts.
    """
    source_map = sources.sources() if isinstance(sources, QueryCollection) else sources
    missing = {c.query_id for c in candidates if c.query_id not in source_map}
    if missing:
        raise ValidationError(f"no source known for query ids: {sorted(missing)[:5]}")

    above = [c for c in candidates if c.similarity >= theta]
    counted = [c for c in above if c.label is True] if verified_only else above

    report: dict = {"theta": theta, "verified_only": verified_only, "fields": {}}
    for fieldv in TopicField:
        in_field = dedupe_pairs([c for c in counted if c.field == fieldv])
        report["fields"][fieldv.value] = _count_block(in_field, source_map)
    report["union"] = _count_block(dedupe_pairs(counted), source_map)

    labeled_pairs = [c for c in dedupe_pairs(above) if c.label is not None]
    if labeled_pairs:
        labeled: dict = {}
        for value, name in ((True, "true"), (False, "false")):
            subset = [c for c in labeled_pairs if c.label is value]
            labeled[name] = {
                "pairs": len(subset),
                "queries": len({c.query_id for c in subset}),
                "topics": len({c.topic_id for c in subset}),
            }
        histogram = Counter(c.reformulation.value for c in labeled_pairs
                            if c.reformulation is not None)
        labeled["reformulation"] = {r.value: histogram.get(r.value, 0) for r in Reformulation}
        report["labeled"] = labeled
    return report


def format_report_table(report: dict) -> str:
    """Aligned plain-text rendering of a leakage report."""
    rows = [("Candidates", "MSM T", "MSM Q", "All T", "All Q")]
    order = [TopicField.TITLE, TopicField.DESCRIPTION, TopicField.VARIANT]
    for fieldv in order:
        block = report["fields"][fieldv.value]
        rows.append((fieldv.value.capitalize(),
                     str(block["msm"]["topics"]), str(block["msm"]["queries"]),
                     str(block["all"]["topics"]), str(block["all"]["queries"])))
    union = report["union"]
    rows.append(("Union",
                 str(union["msm"]["topics"]), str(union["msm"]["queries"]),
                 str(union["all"]["topics"]), str(union["all"]["queries"])))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for r in rows:
        lines.append("  ".join(cell.ljust(widths[i]) if i == 0 else cell.rjust(widths[i])
                               for i, cell in enumerate(r)))
    if "labeled" in report:
        lines.append("")
        lab = report["labeled"]
        for name in ("true", "false"):
            lines.append(f"{name:5s}  pairs={lab[name]['pairs']}  "
                         f"queries={lab[name]['queries']}  topics={lab[name]['topics']}")
        lines.append("reformulation: " + "  ".join(
            f"{k}={v}" for k, v in lab["reformulation"].items()))
    return "\n".join(lines) + "\n"
