"""Embedding jobs: parse input rows, encode in batches, stream EMB1 output.

Row order always equals input order. Topic inputs expand to one row per
field instance with ids of the form "topic_id#field#index": the title,
the description when non-empty, and every query variant in listed order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .emb1 import Emb1Writer
from .encoders import load_encoder
from .errors import FormatError, ModelError

DEFAULT_MODEL = "sentence-transformers/paraphrase-MiniLM-L6-v2"


@dataclass(frozen=True)
class EmbedJob:
    input_path: str
    out_matrix: str
    out_ids: str
    format: str = "tsv"
    model_name: str = DEFAULT_MODEL
    batch_size: int = 32
    normalize: bool = True
    id_field: str = "id"
    text_field: str = "text"

    def __post_init__(self):
        if self.format not in ("tsv", "jsonl"):
            raise FormatError(f"unknown input format {self.format!r} (expected tsv or jsonl)")
        if self.batch_size < 1:
            raise FormatError(f"batch size must be positive, got {self.batch_size}")


def _lines(path: str | Path):
    try:
        with open(path, encoding="utf-8") as f:
            for no, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if line.strip():
                    yield no, line
    except OSError as e:
        raise FormatError(f"cannot read input: {e.strerror}", path=str(path)) from e


def read_rows(job: EmbedJob) -> list[tuple[str, str]]:
    """(id, text) pairs in file order; ids must be unique, texts non-empty."""
    rows: list[tuple[str, str]] = []
    seen: set[str] = set()
    for no, line in _lines(job.input_path):
        if job.format == "tsv":
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(
                    f"expected 'id<TAB>text' with exactly one TAB, got {len(parts) - 1} TABs",
                    path=job.input_path, line=no)
            row_id, text = parts
        else:
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"invalid JSON: {e.msg}", path=job.input_path, line=no) from e
            if not isinstance(obj, dict) or job.id_field not in obj or job.text_field not in obj:
                raise FormatError(
                    f'expected object with "{job.id_field}" and "{job.text_field}"',
                    path=job.input_path, line=no)
            row_id, text = str(obj[job.id_field]), str(obj[job.text_field])
        if row_id in seen:
            raise FormatError(f"duplicate row id {row_id!r}", path=job.input_path, line=no)
        seen.add(row_id)
        if not text.strip():
            raise FormatError(f"empty text for row id {row_id!r}",
                              path=job.input_path, line=no)
        rows.append((row_id, text))
    if not rows:
        raise FormatError("input has no rows", path=job.input_path)
    return rows


def parse_topic_rows(path: str | Path) -> list[tuple[str, str]]:
    """One (row_id, text) per topic field instance, in file order.

    Per topic: "topic_id#title#0", then "topic_id#description#0" when the
    description is non-empty, then "topic_id#variant#i" for each variant.
    """
    rows: list[tuple[str, str]] = []
    seen: set[str] = set()
    for no, line in _lines(path):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise FormatError(f"invalid JSON: {e.msg}", path=str(path), line=no) from e
        if not isinstance(obj, dict):
            raise FormatError("expected a JSON object", path=str(path), line=no)
        missing = [k for k in ("topic_id", "title", "description", "narrative", "variants")
                   if k not in obj]
        if missing:
            raise FormatError(f"missing keys: {', '.join(missing)}", path=str(path), line=no)
        variants = obj["variants"]
        if not isinstance(variants, list) or any(not isinstance(v, str) for v in variants):
            raise FormatError('"variants" must be a list of strings', path=str(path), line=no)
        tid = str(obj["topic_id"])
        if tid in seen:
            raise FormatError(f"duplicate topic id {tid!r}", path=str(path), line=no)
        seen.add(tid)
        title = str(obj["title"])
        if not title.strip():
            raise FormatError(f"topic {tid!r} has empty title", path=str(path), line=no)

        rows.append((f"{tid}#title#0", title))
        description = str(obj["description"])
        if description.strip():
            rows.append((f"{tid}#description#0", description))
        for i, variant in enumerate(variants):
            if not variant.strip():
                raise FormatError(f"topic {tid!r} variant {i} is empty",
                                  path=str(path), line=no)
            rows.append((f"{tid}#variant#{i}", variant))
    if not rows:
        raise FormatError("input has no topics", path=str(path))
    return rows


def _export(rows: list[tuple[str, str]], job: EmbedJob) -> int:
    encoder = load_encoder(job.model_name)
    texts = [t for _, t in rows]
    ids = [i for i, _ in rows]

    # First batch fixes the dimension for the header.
    first = encoder.encode(texts[:job.batch_size], batch_size=job.batch_size)
    dim = int(first.shape[1])
    with Emb1Writer(job.out_matrix, job.out_ids, dim=dim, count=len(rows)) as writer:
        start = 0
        batch = first
        while start < len(rows):
            stop = start + batch.shape[0]
            if job.normalize:
                norms = np.linalg.norm(batch.astype(np.float64), axis=1)
                zero = np.flatnonzero(norms == 0.0)
                if zero.size:
                    raise ModelError(
                        f"encoder produced a zero vector for row id {ids[start + int(zero[0])]!r}")
                batch = (batch / norms[:, None]).astype(np.float32)
            writer.append(ids[start:stop], batch)
            start = stop
            if start < len(rows):
                batch = encoder.encode(texts[start:start + job.batch_size],
                                       batch_size=job.batch_size)
    return len(rows)


def embed_file(job: EmbedJob) -> int:
    """Embed a query file (tsv or jsonl); returns the row count written."""
    return _export(read_rows(job), job)


def embed_topics(job: EmbedJob) -> int:
    """Embed topic field instances from a topics JSONL file."""
    return _export(parse_topic_rows(job.input_path), job)
