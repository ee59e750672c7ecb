"""Readers and writers for every external file format.

Text formats (all UTF-8; invalid byte sequences are errors):

- query TSV:        ``id<TAB>text`` (exactly one TAB per line)
- query JSONL:      ``{"id", "text", "source"}`` (source optional)
- topics JSONL:     ``{"topic_id", "title", "description", "narrative", "variants"}``
- qrels:            ``topic 0 doc grade`` (whitespace separated)
- run:              ``topic Q0 doc rank score tag`` (TREC 6-column)
- training JSONL:   ``{"query_id", "query_text", "pos_doc_id", "neg_doc_id",
                       "source", "leaked", "leak_topic_id"}``
- labeling sheet:   CSV ``topic_id,query_id,field,similarity,label``,
                    label in {"", "true", "false"}
- candidates CSV:   labeling sheet plus ``variant_index`` and ``reformulation``

Binary embedding format (EMB1): magic ``EMB1``, dim as u32 LE, count as
u64 LE, then count*dim IEEE-754 float32 LE row-major. A companion ids file
names row i on line i.

Parsers reject instead of repairing: every violation raises FormatError
with the path and 1-based line number. Writers emit the canonical
serialization, so write(parse(x)) is the canonical form of x and
parse(write(y)) == y.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .types import (
    EmbeddingMatrix,
    LeakageCandidate,
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

EMB_MAGIC = b"EMB1"
EMB_HEADER = struct.Struct("<4sIQ")

SHEET_COLUMNS = ["topic_id", "query_id", "field", "similarity", "label"]
CANDIDATE_COLUMNS = [
    "topic_id",
    "query_id",
    "field",
    "variant_index",
    "similarity",
    "label",
    "reformulation",
]


def _fmt_float(x: float) -> str:
    """Canonical float serialization: shortest repr that round-trips."""
    return repr(float(x))


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _lines(path):
    """Yield (line_no, line) with the trailing newline stripped."""
    try:
        with open(path, encoding="utf-8") as f:
            for no, raw in enumerate(f, start=1):
                yield no, raw.rstrip("\r\n")
    except UnicodeDecodeError as e:
        raise FormatError(f"invalid UTF-8: {e}", path=str(path)) from e


# ---------------------------------------------------------------------------
# queries


def parse_queries(path: str | Path, format: str = "tsv",
                  default_source: Source = Source.OTHER) -> QueryCollection:
    """Parse a query collection from TSV or JSONL.

    TSV lines are ``id<TAB>text`` with exactly one TAB; text containing
    TABs must use JSONL. JSONL objects carry "id" and "text" and may carry
    "source" (msm/orcas/other); rows without one get default_source.
    """
    if format not in ("tsv", "jsonl"):
        raise FormatError(f"unknown query format {format!r} (expected tsv or jsonl)", path=str(path))
    entries: list[Query] = []
    seen: set[str] = set()
    for no, line in _lines(path):
        if format == "tsv":
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(
                    f"expected 'id<TAB>text' with exactly one TAB, got {len(parts) - 1} TABs",
                    path=str(path), line=no,
                )
            qid, text = parts
            source = default_source
        else:
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"invalid JSON: {e.msg}", path=str(path), line=no) from e
            if not isinstance(obj, dict) or "id" not in obj or "text" not in obj:
                raise FormatError('expected object with "id" and "text"', path=str(path), line=no)
            qid, text = str(obj["id"]), str(obj["text"])
            raw_source = obj.get("source")
            if raw_source is None:
                source = default_source
            else:
                try:
                    source = Source(str(raw_source).lower())
                except ValueError:
                    raise FormatError(f"unknown source {raw_source!r}", path=str(path), line=no)
            if source == Source.TEST:
                raise FormatError("query collections cannot carry source 'test'", path=str(path), line=no)
        if not qid:
            raise FormatError("empty query id", path=str(path), line=no)
        if not text.strip():
            raise FormatError(f"query {qid!r} has empty text", path=str(path), line=no)
        if qid in seen:
            raise FormatError(f"duplicate query id {qid!r}", path=str(path), line=no)
        seen.add(qid)
        entries.append(Query(query_id=qid, text=text, source=source))
    return QueryCollection(entries)


def write_queries(collection: QueryCollection, path: str | Path, format: str = "tsv") -> None:
    with open(path, "w", encoding="utf-8") as f:
        for q in collection.entries:
            if format == "tsv":
                if "\t" in q.text:
                    raise FormatError(
                        f"query {q.query_id!r} contains a TAB; use JSONL", path=str(path)
                    )
                f.write(f"{q.query_id}\t{q.text}\n")
            else:
                f.write(json.dumps(
                    {"id": q.query_id, "text": q.text, "source": q.source.value},
                    ensure_ascii=False,
                ) + "\n")


# ---------------------------------------------------------------------------
# topics


def parse_topics(path: str | Path) -> TopicSet:
    """Parse topics JSONL: one object per line with title, description,
    narrative, and a (possibly empty) list of query variants."""
    topics: list[Topic] = []
    seen: set[str] = set()
    for no, line in _lines(path):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise FormatError(f"invalid JSON: {e.msg}", path=str(path), line=no) from e
        if not isinstance(obj, dict):
            raise FormatError("expected a JSON object", path=str(path), line=no)
        missing = [k for k in ("topic_id", "title", "description", "narrative", "variants") if k not in obj]
        if missing:
            raise FormatError(f"missing keys: {', '.join(missing)}", path=str(path), line=no)
        variants = obj["variants"]
        if not isinstance(variants, list) or any(not isinstance(v, str) for v in variants):
            raise FormatError('"variants" must be a list of strings', path=str(path), line=no)
        tid = str(obj["topic_id"])
        if tid in seen:
            raise FormatError(f"duplicate topic id {tid!r}", path=str(path), line=no)
        seen.add(tid)
        if not str(obj["title"]).strip():
            raise FormatError(f"topic {tid!r} has empty title", path=str(path), line=no)
        topics.append(Topic(
            topic_id=tid,
            title=str(obj["title"]),
            description=str(obj["description"]),
            narrative=str(obj["narrative"]),
            variants=list(variants),
        ))
    return TopicSet(topics)


def write_topics(topic_set: TopicSet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t in topic_set.topics:
            f.write(json.dumps({
                "topic_id": t.topic_id,
                "title": t.title,
                "description": t.description,
                "narrative": t.narrative,
                "variants": t.variants,
            }, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# qrels


def parse_qrels(path: str | Path) -> Qrels:
    """Parse TREC qrels: ``topic 0 doc grade``, whitespace separated.

    The second column (iteration) is ignored. Grades must be integers >= 0
    and (topic, doc) keys must be unique.
    """
    judgments: dict[tuple[str, str], int] = {}
    for no, line in _lines(path):
        if not line.strip():
            raise FormatError("blank line", path=str(path), line=no)
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(f"expected 4 columns, got {len(parts)}", path=str(path), line=no)
        topic, _, doc, grade_str = parts
        try:
            grade = int(grade_str)
        except ValueError:
            raise FormatError(f"non-integer grade {grade_str!r}", path=str(path), line=no)
        if grade < 0:
            raise FormatError(f"negative grade {grade}", path=str(path), line=no)
        key = (topic, doc)
        if key in judgments:
            raise FormatError(f"duplicate judgment for topic {topic!r} doc {doc!r}", path=str(path), line=no)
        judgments[key] = grade
    return Qrels(judgments)


def write_qrels(qrels: Qrels, path: str | Path) -> None:
    """Canonical qrels serialization: sorted by (topic_id, doc_id)."""
    with open(path, "w", encoding="utf-8") as f:
        for (topic, doc) in sorted(qrels.judgments):
            f.write(f"{topic} 0 {doc} {qrels.judgments[(topic, doc)]}\n")


# ---------------------------------------------------------------------------
# runs


def parse_run(path: str | Path) -> Run:
    """Parse a TREC 6-column run file, preserving input order per topic."""
    entries: dict[str, list[RunEntry]] = {}
    seen: set[tuple[str, str]] = set()
    for no, line in _lines(path):
        parts = line.split()
        if len(parts) != 6:
            raise FormatError(f"expected 6 columns, got {len(parts)}", path=str(path), line=no)
        topic, _, doc, rank_str, score_str, tag = parts
        try:
            rank = int(rank_str)
        except ValueError:
            raise FormatError(f"non-integer rank {rank_str!r}", path=str(path), line=no)
        if rank < 1:
            raise FormatError(f"rank must be >= 1, got {rank}", path=str(path), line=no)
        try:
            score = float(score_str)
        except ValueError:
            raise FormatError(f"non-numeric score {score_str!r}", path=str(path), line=no)
        if (topic, doc) in seen:
            raise FormatError(f"duplicate doc {doc!r} for topic {topic!r}", path=str(path), line=no)
        seen.add((topic, doc))
        entries.setdefault(topic, []).append(RunEntry(doc_id=doc, rank=rank, score=score, tag=tag))
    return Run(entries)


def write_run(run: Run, path: str | Path) -> None:
    """Canonical run serialization: topics in input order, entries in input
    order, scores as shortest round-tripping repr, column 2 fixed to Q0."""
    with open(path, "w", encoding="utf-8") as f:
        for topic, topic_entries in run.entries.items():
            for e in topic_entries:
                f.write(f"{topic} Q0 {e.doc_id} {e.rank} {_fmt_float(e.score)} {e.tag}\n")


# ---------------------------------------------------------------------------
# training sets


def parse_training_set(path: str | Path) -> TrainingSet:
    pairs: list[TrainingInstance] = []
    for no, line in _lines(path):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise FormatError(f"invalid JSON: {e.msg}", path=str(path), line=no) from e
        missing = [k for k in ("query_id", "query_text", "pos_doc_id", "neg_doc_id", "source", "leaked")
                   if k not in obj]
        if missing:
            raise FormatError(f"missing keys: {', '.join(missing)}", path=str(path), line=no)
        try:
            source = Source(str(obj["source"]).lower())
        except ValueError:
            raise FormatError(f"unknown source {obj['source']!r}", path=str(path), line=no)
        if not isinstance(obj["leaked"], bool):
            raise FormatError('"leaked" must be a boolean', path=str(path), line=no)
        leak_topic = obj.get("leak_topic_id")
        try:
            pairs.append(TrainingInstance(
                query_id=str(obj["query_id"]),
                query_text=str(obj["query_text"]),
                pos_doc_id=str(obj["pos_doc_id"]),
                neg_doc_id=str(obj["neg_doc_id"]),
                source=source,
                leaked=obj["leaked"],
                leak_topic_id=None if leak_topic is None else str(leak_topic),
            ))
        except Exception as e:
            raise FormatError(str(e), path=str(path), line=no) from e
    return TrainingSet(pairs)


def write_training_set(training_set: TrainingSet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(training_set_to_jsonl(training_set))


def training_set_to_jsonl(training_set: TrainingSet) -> str:
    buf = io.StringIO()
    for p in training_set.pairs:
        buf.write(json.dumps({
            "query_id": p.query_id,
            "query_text": p.query_text,
            "pos_doc_id": p.pos_doc_id,
            "neg_doc_id": p.neg_doc_id,
            "source": p.source.value,
            "leaked": p.leaked,
            "leak_topic_id": p.leak_topic_id,
        }, ensure_ascii=False) + "\n")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# labeling sheets and candidate CSVs


def _parse_label(raw: str, path, no):
    if raw == "":
        return None
    if raw == "true":
        return True
    if raw == "false":
        return False
    raise FormatError(f"label must be '', 'true', or 'false', got {raw!r}", path=str(path), line=no)


def write_sheet(candidates: list[LeakageCandidate], path: str | Path) -> None:
    """Emit a labeling sheet: one row per candidate, label column blank
    unless the candidate already carries one."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(SHEET_COLUMNS)
        for c in candidates:
            label = "" if c.label is None else ("true" if c.label else "false")
            w.writerow([c.topic_id, c.query_id, c.field.value, _fmt_float(c.similarity), label])


def parse_sheet(path: str | Path) -> list[LeakageCandidate]:
    """Ingest a (possibly annotated) labeling sheet."""
    out: list[LeakageCandidate] = []
    try:
        with open(path, encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != SHEET_COLUMNS:
                raise FormatError(
                    f"expected header {','.join(SHEET_COLUMNS)}, got {header}", path=str(path), line=1
                )
            for no, row in enumerate(reader, start=2):
                if len(row) != len(SHEET_COLUMNS):
                    raise FormatError(f"expected {len(SHEET_COLUMNS)} columns, got {len(row)}",
                                      path=str(path), line=no)
                topic_id, query_id, field_str, sim_str, label_str = row
                try:
                    fieldv = TopicField(field_str)
                except ValueError:
                    raise FormatError(f"unknown field {field_str!r}", path=str(path), line=no)
                try:
                    sim = float(sim_str)
                except ValueError:
                    raise FormatError(f"non-numeric similarity {sim_str!r}", path=str(path), line=no)
                out.append(LeakageCandidate(
                    topic_id=topic_id, query_id=query_id, field=fieldv,
                    similarity=sim, label=_parse_label(label_str, path, no),
                ))
    except UnicodeDecodeError as e:
        raise FormatError(f"invalid UTF-8: {e}", path=str(path)) from e
    return out


def write_candidates(candidates: list[LeakageCandidate], path: str | Path) -> None:
    """Full candidate CSV with variant index, label, and reformulation."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(CANDIDATE_COLUMNS)
        for c in candidates:
            w.writerow([
                c.topic_id,
                c.query_id,
                c.field.value,
                "" if c.variant_index is None else c.variant_index,
                _fmt_float(c.similarity),
                "" if c.label is None else ("true" if c.label else "false"),
                "" if c.reformulation is None else c.reformulation.value,
            ])


def parse_candidates(path: str | Path) -> list[LeakageCandidate]:
    out: list[LeakageCandidate] = []
    try:
        with open(path, encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != CANDIDATE_COLUMNS:
                raise FormatError(
                    f"expected header {','.join(CANDIDATE_COLUMNS)}, got {header}", path=str(path), line=1
                )
            for no, row in enumerate(reader, start=2):
                if len(row) != len(CANDIDATE_COLUMNS):
                    raise FormatError(f"expected {len(CANDIDATE_COLUMNS)} columns, got {len(row)}",
                                      path=str(path), line=no)
                topic_id, query_id, field_str, vi_str, sim_str, label_str, reform_str = row
                try:
                    fieldv = TopicField(field_str)
                except ValueError:
                    raise FormatError(f"unknown field {field_str!r}", path=str(path), line=no)
                try:
                    sim = float(sim_str)
                except ValueError:
                    raise FormatError(f"non-numeric similarity {sim_str!r}", path=str(path), line=no)
                try:
                    variant_index = None if vi_str == "" else int(vi_str)
                except ValueError:
                    raise FormatError(f"non-integer variant index {vi_str!r}", path=str(path), line=no)
                try:
                    reform = None if reform_str == "" else Reformulation(reform_str)
                except ValueError:
                    raise FormatError(f"unknown reformulation {reform_str!r}", path=str(path), line=no)
                try:
                    out.append(LeakageCandidate(
                        topic_id=topic_id, query_id=query_id, field=fieldv,
                        variant_index=variant_index, similarity=sim,
                        label=_parse_label(label_str, path, no), reformulation=reform,
                    ))
                except ValidationError as e:
                    raise FormatError(str(e), path=str(path), line=no) from e
    except UnicodeDecodeError as e:
        raise FormatError(f"invalid UTF-8: {e}", path=str(path)) from e
    return out


# ---------------------------------------------------------------------------
# embedding matrices (EMB1)


def write_embeddings(matrix: EmbeddingMatrix, matrix_path: str | Path, ids_path: str | Path) -> None:
    rows = np.ascontiguousarray(matrix.rows, dtype="<f4")
    with open(matrix_path, "wb") as f:
        f.write(EMB_HEADER.pack(EMB_MAGIC, matrix.dim, len(matrix)))
        f.write(rows.tobytes(order="C"))
    with open(ids_path, "w", encoding="utf-8") as f:
        for row_id in matrix.ids:
            if "\n" in row_id or "\r" in row_id:
                raise FormatError(f"row id {row_id!r} contains a newline", path=str(ids_path))
            f.write(row_id + "\n")


def read_embeddings(matrix_path: str | Path, ids_path: str | Path,
                    mmap: bool = False) -> EmbeddingMatrix:
    """Read an EMB1 matrix plus its ids file.

    With mmap=True the payload is memory-mapped read-only instead of loaded,
    which keeps resident memory bounded for multi-million-row matrices.
    All-zero rows are rejected here so cosine scans never divide by zero.
    """
    size = Path(matrix_path).stat().st_size
    if size < EMB_HEADER.size:
        raise FormatError(f"file too small for EMB1 header ({size} bytes)", path=str(matrix_path))
    with open(matrix_path, "rb") as f:
        magic, dim, count = EMB_HEADER.unpack(f.read(EMB_HEADER.size))
        if magic != EMB_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {EMB_MAGIC!r}", path=str(matrix_path))
        if dim < 1:
            raise FormatError(f"dimension must be positive, got {dim}", path=str(matrix_path))
        expected = EMB_HEADER.size + count * dim * 4
        if size < expected:
            raise FormatError(
                f"truncated payload: file has {size} bytes, format requires {expected}",
                path=str(matrix_path),
            )
        if size > expected:
            raise FormatError(
                f"trailing bytes after payload: file has {size} bytes, format requires {expected}",
                path=str(matrix_path),
            )
        if mmap:
            rows = np.memmap(matrix_path, dtype="<f4", mode="r",
                             offset=EMB_HEADER.size, shape=(count, dim))
        else:
            rows = np.fromfile(f, dtype="<f4", count=count * dim).reshape(count, dim)

    ids: list[str] = []
    for no, line in _lines(ids_path):
        if not line:
            raise FormatError("empty row id", path=str(ids_path), line=no)
        ids.append(line)
    if len(ids) != count:
        raise FormatError(
            f"ids file has {len(ids)} rows but matrix count is {count}", path=str(ids_path)
        )

    # Zero rows can never be unit-normalized; reject them at the door.
    block = 1 << 16
    for start in range(0, count, block):
        chunk = np.asarray(rows[start:start + block], dtype=np.float32)
        zero = np.flatnonzero(~np.any(chunk != 0.0, axis=1))
        if zero.size:
            i = start + int(zero[0])
            raise FormatError(f"all-zero embedding row {ids[i]!r} (row {i})", path=str(matrix_path))
    return EmbeddingMatrix(ids=ids, rows=rows)


# ---------------------------------------------------------------------------
# sidecar files: re-scores, judged positives, leaked-document lists


def parse_rescores(path: str | Path) -> dict[tuple[str, str], float]:
    """Re-score TSV: ``topic_id<TAB>doc_id<TAB>score``, one triple per line."""
    scores: dict[tuple[str, str], float] = {}
    for no, line in _lines(path):
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"expected 3 tab-separated fields, got {len(parts)}",
                              path=str(path), line=no)
        topic_id, doc_id, score_str = parts
        if not topic_id or not doc_id:
            raise FormatError("empty topic or doc id", path=str(path), line=no)
        try:
            score = float(score_str)
        except ValueError:
            raise FormatError(f"invalid score {score_str!r}", path=str(path), line=no)
        key = (topic_id, doc_id)
        if key in scores:
            raise FormatError(f"duplicate re-score for topic {topic_id!r} doc {doc_id!r}",
                              path=str(path), line=no)
        scores[key] = score
    return scores


def write_rescores(scores: dict[tuple[str, str], float], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for (topic_id, doc_id), score in sorted(scores.items()):
            f.write(f"{topic_id}\t{doc_id}\t{_fmt_float(score)}\n")


def parse_positives(path: str | Path) -> dict[str, str]:
    """Judged-positive TSV: ``query_id<TAB>doc_id``, one positive per query."""
    positives: dict[str, str] = {}
    for no, line in _lines(path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise FormatError(f"expected 2 tab-separated fields, got {len(parts)}",
                              path=str(path), line=no)
        query_id, doc_id = parts
        if not query_id or not doc_id:
            raise FormatError("empty query or doc id", path=str(path), line=no)
        if query_id in positives:
            raise FormatError(f"duplicate positive for query {query_id!r}",
                              path=str(path), line=no)
        positives[query_id] = doc_id
    return positives


def write_positives(positives: dict[str, str], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for query_id, doc_id in sorted(positives.items()):
            f.write(f"{query_id}\t{doc_id}\n")
