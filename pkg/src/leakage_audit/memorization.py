"""Memorization analysis over leaked training documents.

Given a run trained with leakage and one trained without, compare where the
leaked documents land: hypothetical ranks for documents outside the
re-ranked top-100 pool, mean leaked rank and score per condition, and the
rank offset between leaked non-relevant and relevant documents. Scores for
documents missing from a run come from a sidecar re-score file.
"""

from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

from . import evaluation
from .errors import FormatError, ValidationError
from .types import Run, RunEntry

RERANK_DEPTH = 100


class Polarity(str, enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class LeakedDoc:
    topic_id: str
    doc_id: str
    polarity: Polarity


@dataclass(frozen=True)
class LeakedDocRecord:
    topic_id: str
    doc_id: str
    polarity: Polarity
    score_with: float
    score_without: float
    rank_with: int
    rank_without: int


LEAKED_DOC_COLUMNS = ["topic_id", "doc_id", "polarity"]


def parse_leaked_docs(path: str | Path) -> list[LeakedDoc]:
    """Leaked-document CSV: ``topic_id,doc_id,polarity`` with a header row."""
    docs = []
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != LEAKED_DOC_COLUMNS:
            raise FormatError(f"expected header {LEAKED_DOC_COLUMNS}, got {header}",
                              path=str(path), line=1)
        for no, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise FormatError(f"expected 3 columns, got {len(row)}", path=str(path), line=no)
            topic_id, doc_id, polarity_str = row
            if not topic_id or not doc_id:
                raise FormatError("empty topic or doc id", path=str(path), line=no)
            try:
                polarity = Polarity(polarity_str)
            except ValueError:
                raise FormatError(f"polarity must be positive or negative, got {polarity_str!r}",
                                  path=str(path), line=no)
            docs.append(LeakedDoc(topic_id=topic_id, doc_id=doc_id, polarity=polarity))
    return docs


def write_leaked_docs(docs: list[LeakedDoc], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(LEAKED_DOC_COLUMNS)
        for d in docs:
            writer.writerow([d.topic_id, d.doc_id, d.polarity.value])


def hypothetical_rank(topic_ranking: list[RunEntry], doc_id: str, doc_score: float,
                      depth: int = RERANK_DEPTH) -> int:
    """Rank the document holds, or would hold, in a canonical ranking.

    A document already present keeps its existing rank. Otherwise it is
    inserted by (score descending, doc id ascending byte order); anything
    that would land below position `depth` is clamped to depth+1.
    """
    ranking = evaluation.sort_ties(topic_ranking)
    for entry in ranking:
        if entry.doc_id == doc_id:
            # Pools longer than depth still cap at depth+1.
            return min(entry.rank, depth + 1)
    key = doc_id.encode("utf-8")
    ahead = sum(1 for e in ranking
                if e.score > doc_score or (e.score == doc_score and e.doc_id.encode("utf-8") < key))
    return min(ahead + 1, depth + 1)


class ConditionScores:
    """Score and rank lookup for one run condition, with optional re-scores
    for documents the run does not contain."""

    def __init__(self, run: Run, rescores: dict[tuple[str, str], float] | None = None,
                 depth: int = RERANK_DEPTH):
        self.run = run
        self.rescores = rescores or {}
        self.depth = depth
        self._sorted: dict[str, list[RunEntry]] = {}

    def _ranking(self, topic_id: str) -> list[RunEntry]:
        if topic_id not in self._sorted:
            entries = self.run.entries.get(topic_id)
            if entries is None:
                raise ValidationError(f"topic {topic_id!r} absent from run")
            self._sorted[topic_id] = evaluation.sort_ties(entries)
        return self._sorted[topic_id]

    def score(self, topic_id: str, doc_id: str) -> float:
        for entry in self._ranking(topic_id):
            if entry.doc_id == doc_id:
                return entry.score
        key = (topic_id, doc_id)
        if key in self.rescores:
            return self.rescores[key]
        raise ValidationError(f"no score for topic {topic_id!r} doc {doc_id!r} "
                              "(not in run, not in re-score file)")

    def rank(self, topic_id: str, doc_id: str) -> int:
        return hypothetical_rank(self._ranking(topic_id), doc_id,
                                 self.score(topic_id, doc_id), depth=self.depth)


def leaked_doc_records(with_scores: ConditionScores, without_scores: ConditionScores,
                       leaked: list[LeakedDoc]) -> list[LeakedDocRecord]:
    records = []
    for doc in sorted(leaked, key=lambda d: (d.topic_id, d.doc_id, d.polarity.value)):
        records.append(LeakedDocRecord(
            topic_id=doc.topic_id,
            doc_id=doc.doc_id,
            polarity=doc.polarity,
            score_with=with_scores.score(doc.topic_id, doc.doc_id),
            score_without=without_scores.score(doc.topic_id, doc.doc_id),
            rank_with=with_scores.rank(doc.topic_id, doc.doc_id),
            rank_without=without_scores.rank(doc.topic_id, doc.doc_id),
        ))
    return records


def _macro(values: list[float]) -> dict:
    n = len(values)
    mean = sum(values) / n
    if n < 2:
        sd = 0.0
    else:
        sd = math.sqrt(sum((v - mean) ** 2 for v in values) / (n - 1))
    return {"mean": mean, "sd": sd, "n": n}


def _per_topic_means(records: list[LeakedDocRecord], polarity: Polarity,
                     value) -> dict[str, tuple[float, float]]:
    per: dict[str, tuple[list[float], list[float]]] = {}
    for r in records:
        if r.polarity != polarity:
            continue
        w, wo = per.setdefault(r.topic_id, ([], []))
        vw, vwo = value(r)
        w.append(vw)
        wo.append(vwo)
    return {t: (sum(w) / len(w), sum(wo) / len(wo)) for t, (w, wo) in per.items()}


def mean_leaked_rank(with_scores: ConditionScores, without_scores: ConditionScores,
                     leaked: list[LeakedDoc]) -> dict:
    """Macro-averaged hypothetical rank of leaked relevant documents,
    with-leakage vs without. Topics are those carrying leaked positives."""
    records = leaked_doc_records(with_scores, without_scores, leaked)
    per = _per_topic_means(records, Polarity.POSITIVE,
                           lambda r: (float(r.rank_with), float(r.rank_without)))
    if not per:
        raise ValidationError("no leaked positive documents to aggregate")
    topics = sorted(per)
    return {
        "with": _macro([per[t][0] for t in topics]),
        "without": _macro([per[t][1] for t in topics]),
        "per_topic": {t: {"with": per[t][0], "without": per[t][1]} for t in topics},
    }


def mean_leaked_score(with_scores: ConditionScores, without_scores: ConditionScores,
                      leaked: list[LeakedDoc]) -> dict:
    """As mean_leaked_rank, but over the raw retrieval scores."""
    records = leaked_doc_records(with_scores, without_scores, leaked)
    per = _per_topic_means(records, Polarity.POSITIVE,
                           lambda r: (r.score_with, r.score_without))
    if not per:
        raise ValidationError("no leaked positive documents to aggregate")
    topics = sorted(per)
    return {
        "with": _macro([per[t][0] for t in topics]),
        "without": _macro([per[t][1] for t in topics]),
        "per_topic": {t: {"with": per[t][0], "without": per[t][1]} for t in topics},
    }


def rank_offset_delta(with_scores: ConditionScores, without_scores: ConditionScores,
                      leaked: list[LeakedDoc]) -> dict:
    """Increase of the negative-minus-positive mean-rank offset under leakage.

    Per topic: offset = mean rank of leaked negatives − mean rank of leaked
    positives, computed in each condition; delta = offset_with −
    offset_without. Topics missing either polarity are excluded with a
    warning. Positive deltas mean leakage pushed non-relevant documents
    further below relevant ones.
    """
    records = leaked_doc_records(with_scores, without_scores, leaked)
    pos = _per_topic_means(records, Polarity.POSITIVE,
                           lambda r: (float(r.rank_with), float(r.rank_without)))
    neg = _per_topic_means(records, Polarity.NEGATIVE,
                           lambda r: (float(r.rank_with), float(r.rank_without)))
    deltas: dict[str, float] = {}
    offsets: dict[str, dict[str, float]] = {}
    for topic_id in sorted(set(pos) | set(neg)):
        if topic_id not in pos or topic_id not in neg:
            missing = "positive" if topic_id not in pos else "negative"
            warnings.warn(f"topic {topic_id!r} has no leaked {missing} documents; excluded")
            continue
        offset_with = neg[topic_id][0] - pos[topic_id][0]
        offset_without = neg[topic_id][1] - pos[topic_id][1]
        deltas[topic_id] = offset_with - offset_without
        offsets[topic_id] = {
            "offset_with": offset_with,
            "offset_without": offset_without,
            "delta": deltas[topic_id],
        }
    if not deltas:
        raise ValidationError("no topic has both leaked positives and negatives")
    return {
        "delta": _macro([deltas[t] for t in sorted(deltas)]),
        "per_topic": offsets,
    }


def memorization_report(with_scores: ConditionScores, without_scores: ConditionScores,
                        leaked: list[LeakedDoc]) -> dict:
    report = {
        "mean_leaked_rank": mean_leaked_rank(with_scores, without_scores, leaked),
        "mean_leaked_score": mean_leaked_score(with_scores, without_scores, leaked),
    }
    polarities = {d.polarity for d in leaked}
    if Polarity.NEGATIVE in polarities:
        report["rank_offset_delta"] = rank_offset_delta(with_scores, without_scores, leaked)
    return report


def format_memorization_table(report: dict) -> str:
    """Aligned with/without column pairs for the three summaries."""
    lines = []
    for key, label in (("mean_leaked_rank", "Mean leaked rank"),
                       ("mean_leaked_score", "Mean leaked score")):
        block = report[key]
        lines.append(f"{label:18s}  with {block['with']['mean']:10.4f} ± {block['with']['sd']:.4f}"
                     f"  without {block['without']['mean']:10.4f} ± {block['without']['sd']:.4f}"
                     f"  (n={block['with']['n']})")
    if "rank_offset_delta" in report:
        d = report["rank_offset_delta"]["delta"]
        lines.append(f"{'Rank offset delta':18s}  {d['mean']:10.4f} ± {d['sd']:.4f}  (n={d['n']})")
    return "\n".join(lines) + "\n"
