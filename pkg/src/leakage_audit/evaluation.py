"""Run-file evaluation (nDCG@10, Precision@1, MFR), paired significance
testing with Bonferroni correction, and the five-fold cross-validation
grid search over training-set sizes.

All metrics apply the canonical tie-break (score descending, doc id
ascending in byte order) before scoring, so permuting tied entries never
changes a value. Topics without any judged relevant document are excluded
from metric means, as are run topics absent from the qrels.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.stats

from .errors import ValidationError
from .types import Qrels, Run, RunEntry

DEFAULT_ALPHA = 0.05
MFR_DEPTH = 100


class Metric(str, enum.Enum):
    NDCG10 = "ndcg10"
    P1 = "p1"
    MFR = "mfr"


# Lower is better only for first-rank style metrics.
_MINIMIZE = {Metric.MFR}


@dataclass(frozen=True)
class MetricResult:
    metric: Metric
    per_topic: dict[str, float]
    mean: float
    topics_evaluated: int


@dataclass(frozen=True)
class SignificanceResult:
    t_statistic: float
    p_value: float
    p_adjusted: float
    n: int
    significant: bool

    @property
    def df(self) -> int:
        return self.n - 1


def sort_ties(entries: list[RunEntry]) -> list[RunEntry]:
    """Canonical ranking: score descending, doc id ascending in byte order,
    with ranks reassigned 1..n."""
    ordered = sorted(entries, key=lambda e: (-e.score, e.doc_id.encode("utf-8")))
    return [RunEntry(doc_id=e.doc_id, rank=i + 1, score=e.score, tag=e.tag)
            for i, e in enumerate(ordered)]


def _evaluable_topics(run: Run, qrels: Qrels) -> list[str]:
    topics = []
    judged = qrels.topics()
    for topic_id in sorted(run.entries):
        if topic_id not in judged:
            warnings.warn(f"run topic {topic_id!r} absent from qrels; excluded")
            continue
        if not qrels.relevant_docs(topic_id):
            continue
        topics.append(topic_id)
    return topics


def _result(metric: Metric, per_topic: dict[str, float]) -> MetricResult:
    if not per_topic:
        warnings.warn(f"{metric.value}: no evaluable topics")
        return MetricResult(metric=metric, per_topic={}, mean=float("nan"), topics_evaluated=0)
    mean = float(np.mean(list(per_topic.values())))
    return MetricResult(metric=metric, per_topic=per_topic, mean=mean,
                        topics_evaluated=len(per_topic))


def _gain(grade: int, gain: str) -> float:
    if gain == "exponential":
        return float(2 ** grade - 1)
    if gain == "linear":
        return float(grade)
    raise ValidationError(f"unknown gain function {gain!r}")


def ndcg_at_k(run: Run, qrels: Qrels, k: int = 10, gain: str = "exponential") -> MetricResult:
    """Normalized DCG at depth k with 2^grade − 1 gains (or linear when asked)
    and log2(rank+1) discounts. The ideal ranking comes from the qrels grades."""
    per_topic: dict[str, float] = {}
    for topic_id in _evaluable_topics(run, qrels):
        ranking = sort_ties(run.entries[topic_id])
        dcg = 0.0
        for entry in ranking[:k]:
            grade = qrels.grade(topic_id, entry.doc_id)
            if grade:
                dcg += _gain(grade, gain) / math.log2(entry.rank + 1)
        grades = sorted((qrels.grade(topic_id, d) for d in qrels.docs_for(topic_id)),
                        reverse=True)
        idcg = sum(_gain(g, gain) / math.log2(i + 2) for i, g in enumerate(grades[:k]))
        per_topic[topic_id] = dcg / idcg
    return _result(Metric.NDCG10, per_topic)


def precision_at_1(run: Run, qrels: Qrels) -> MetricResult:
    """1.0 when the top-ranked document is judged relevant, else 0.0.
    Unjudged documents count as non-relevant."""
    per_topic: dict[str, float] = {}
    for topic_id in _evaluable_topics(run, qrels):
        ranking = sort_ties(run.entries[topic_id])
        per_topic[topic_id] = 1.0 if qrels.grade(topic_id, ranking[0].doc_id) >= 1 else 0.0
    return _result(Metric.P1, per_topic)


def mfr(run: Run, qrels: Qrels, depth: int = MFR_DEPTH) -> MetricResult:
    """Rank of the first relevant document per topic; depth+1 when none of
    the top `depth` documents is relevant. Lower is better, 1 is perfect."""
    per_topic: dict[str, float] = {}
    for topic_id in _evaluable_topics(run, qrels):
        ranking = sort_ties(run.entries[topic_id])
        first = float(depth + 1)
        for entry in ranking[:depth]:
            if qrels.grade(topic_id, entry.doc_id) >= 1:
                first = float(entry.rank)
                break
        per_topic[topic_id] = first
    return _result(Metric.MFR, per_topic)


def evaluate(run: Run, qrels: Qrels, depth: int = MFR_DEPTH) -> dict[Metric, MetricResult]:
    return {
        Metric.NDCG10: ndcg_at_k(run, qrels),
        Metric.P1: precision_at_1(run, qrels),
        Metric.MFR: mfr(run, qrels, depth=depth),
    }


def _aligned_diffs(scores_a, scores_b) -> np.ndarray:
    if isinstance(scores_a, dict) or isinstance(scores_b, dict):
        if not (isinstance(scores_a, dict) and isinstance(scores_b, dict)):
            raise ValidationError("score tables must both be per-topic maps or both sequences")
        if set(scores_a) != set(scores_b):
            only_a = sorted(set(scores_a) - set(scores_b))[:3]
            only_b = sorted(set(scores_b) - set(scores_a))[:3]
            raise ValidationError(f"topic sets differ (a-only {only_a}, b-only {only_b})")
        topics = sorted(scores_a)
        a = np.array([scores_a[t] for t in topics], dtype=np.float64)
        b = np.array([scores_b[t] for t in topics], dtype=np.float64)
    else:
        if len(scores_a) != len(scores_b):
            raise ValidationError(
                f"score lists differ in length: {len(scores_a)} vs {len(scores_b)}"
            )
        a = np.asarray(scores_a, dtype=np.float64)
        b = np.asarray(scores_b, dtype=np.float64)
    return a - b


def paired_t_test(scores_a, scores_b, m: int = 1,
                  alpha: float = DEFAULT_ALPHA) -> SignificanceResult:
    """Two-sided paired Student's t-test over per-topic scores.

    Accepts aligned sequences or per-topic maps keyed by the same topics.
    Conventions: all-zero differences give t=0, p=1; zero variance with a
    nonzero mean difference gives p=0. p_adjusted applies the Bonferroni
    factor m; the significant flag tests p_adjusted against alpha.
    """
    diffs = _aligned_diffs(scores_a, scores_b)
    n = diffs.shape[0]
    if n < 2:
        raise ValidationError(f"paired t-test needs at least 2 topics, got {n}")
    mean = float(np.mean(diffs))
    sd = float(np.std(diffs, ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            t_stat, p = 0.0, 1.0
        else:
            t_stat = math.inf if mean > 0 else -math.inf
            p = 0.0
    else:
        t_stat = mean / (sd / math.sqrt(n))
        p = float(2.0 * scipy.stats.t.sf(abs(t_stat), n - 1))
    p_adj = bonferroni(p, m)
    return SignificanceResult(t_statistic=t_stat, p_value=p, p_adjusted=p_adj,
                              n=n, significant=p_adj < alpha)


def bonferroni(p: float, m: int) -> float:
    """Multiple-testing correction: m times p, capped at 1."""
    if m < 1:
        raise ValidationError(f"correction factor must be >= 1, got {m}")
    return min(1.0, m * p)


def pairwise_tests(score_tables: dict[str, dict[str, float]],
                   alpha: float = DEFAULT_ALPHA) -> list[dict]:
    """Every unordered pair of systems tested with m = number of pairs."""
    names = sorted(score_tables)
    if len(names) < 2:
        raise ValidationError("pairwise testing needs at least 2 systems")
    pairs = [(a, b) for i, a in enumerate(names) for b in names[i + 1:]]
    m = len(pairs)
    out = []
    for a, b in pairs:
        r = paired_t_test(score_tables[a], score_tables[b], m=m, alpha=alpha)
        out.append({
            "system_a": a,
            "system_b": b,
            "t_statistic": r.t_statistic,
            "p_value": r.p_value,
            "correction_factor": m,
            "p_adjusted": r.p_adjusted,
            "n": r.n,
            "significant": r.significant,
        })
    return out


def assign_folds(topics: list[str], folds: int, fold_seed: int) -> list[list[str]]:
    """Deterministic fold split: topics sorted by id, seeded shuffle, dealt
    round-robin. Every topic lands in exactly one fold."""
    if folds < 2:
        raise ValidationError(f"need at least 2 folds, got {folds}")
    if len(topics) < folds:
        raise ValidationError(f"{len(topics)} topics cannot fill {folds} folds")
    ordered = sorted(topics)
    perm = np.random.default_rng(fold_seed).permutation(len(ordered))
    shuffled = [ordered[int(i)] for i in perm]
    return [shuffled[f::folds] for f in range(folds)]


def cross_validate(grid: dict[tuple[str, int, int], dict[str, float]],
                   folds: int = 5, target_metric: Metric = Metric.NDCG10,
                   fold_seed: int = 0) -> dict:
    """Per-condition size selection by five-fold cross-validation.

    grid maps (condition, size, seed) to per-topic scores. Seeds are
    averaged per topic first; within each fold the size with the best
    training-fold mean is picked (lowest for MFR, ties to the smallest
    size), and held-out topics are scored under that size. The CV score per
    condition is the mean over all held-out topics.
    """
    if not grid:
        raise ValidationError("empty score grid")
    conditions = sorted({c for c, _, _ in grid})
    sizes = sorted({s for _, s, _ in grid})
    seeds = sorted({r for _, _, r in grid})
    for c in conditions:
        for s in sizes:
            for r in seeds:
                if (c, s, r) not in grid:
                    raise ValidationError(f"grid cell missing for condition {c!r}, size {s}")

    topic_sets = {frozenset(cell) for cell in grid.values()}
    if len(topic_sets) != 1:
        raise ValidationError("grid cells cover different topic sets")
    topics = sorted(next(iter(topic_sets)))

    # Seed-mean per (condition, size, topic) before any selection.
    seed_mean: dict[tuple[str, int], dict[str, float]] = {}
    for c in conditions:
        for s in sizes:
            seed_mean[(c, s)] = {
                t: float(np.mean([grid[(c, s, r)][t] for r in seeds])) for t in topics
            }

    fold_lists = assign_folds(topics, folds, fold_seed)
    minimize = target_metric in _MINIMIZE

    result: dict = {
        "metric": target_metric.value,
        "folds": [sorted(f) for f in fold_lists],
        "fold_seed": fold_seed,
        "conditions": {},
    }
    for c in conditions:
        held_out_scores: dict[str, float] = {}
        selected: list[int] = []
        for fold in fold_lists:
            held = set(fold)
            train = [t for t in topics if t not in held]
            best_size = None
            best_value = None
            for s in sizes:
                value = float(np.mean([seed_mean[(c, s)][t] for t in train]))
                better = (best_value is None
                          or (value < best_value if minimize else value > best_value))
                if better:
                    best_size, best_value = s, value
            selected.append(best_size)
            for t in fold:
                held_out_scores[t] = seed_mean[(c, best_size)][t]
        result["conditions"][c] = {
            "cv_score": float(np.mean([held_out_scores[t] for t in topics])),
            "selected_sizes": selected,
            "per_topic": {t: held_out_scores[t] for t in sorted(held_out_scores)},
        }
    return result
