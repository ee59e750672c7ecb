"""Format round-trips and rejection behavior for every reader/writer."""

import json
import struct

import numpy as np
import pytest

from leakage_audit import corpus_io
from leakage_audit.errors import FormatError
from leakage_audit.types import (
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


# ---------------------------------------------------------------------------
# queries


class TestQueries:
    def test_tsv_round_trip(self, tmp_path):
        collection = QueryCollection(entries=[
            Query(query_id="q1", text="lyme disease symptoms"),
            Query(query_id="q2", text="tax filing deadline"),
        ])
        path = tmp_path / "q.tsv"
        corpus_io.write_queries(collection, path, format="tsv")
        parsed = corpus_io.parse_queries(path, format="tsv")
        assert parsed == collection

    def test_tsv_requires_exactly_one_tab(self, tmp_path):
        path = tmp_path / "q.tsv"
        path.write_text("q1\tgood line\nq2 no tab here\n")
        with pytest.raises(FormatError) as exc:
            corpus_io.parse_queries(path, format="tsv")
        assert exc.value.line == 2

        path.write_text("q1\ttwo\ttabs\n")
        with pytest.raises(FormatError):
            corpus_io.parse_queries(path, format="tsv")

    def test_tsv_duplicate_id_cites_later_line(self, tmp_path):
        path = tmp_path / "q.tsv"
        path.write_text("q1\tfirst\nq2\tsecond\nq1\tagain\n")
        with pytest.raises(FormatError) as exc:
            corpus_io.parse_queries(path, format="tsv")
        assert exc.value.line == 3
        assert "q1" in str(exc.value)

    def test_tsv_rejects_empty_id_and_text(self, tmp_path):
        path = tmp_path / "q.tsv"
        path.write_text("\tno id\n")
        with pytest.raises(FormatError):
            corpus_io.parse_queries(path, format="tsv")
        path.write_text("q1\t\n")
        with pytest.raises(FormatError):
            corpus_io.parse_queries(path, format="tsv")

    def test_jsonl_round_trip_with_sources(self, tmp_path):
        collection = QueryCollection(entries=[
            Query(query_id="a", text="alpha", source=Source.MSM),
            Query(query_id="b", text="beta", source=Source.ORCAS),
            Query(query_id="c", text="gamma", source=Source.OTHER),
        ])
        path = tmp_path / "q.jsonl"
        corpus_io.write_queries(collection, path, format="jsonl")
        assert corpus_io.parse_queries(path, format="jsonl") == collection

    def test_jsonl_rejects_reserved_test_source(self, tmp_path):
        path = tmp_path / "q.jsonl"
        path.write_text('{"id": "a", "text": "alpha", "source": "test"}\n')
        with pytest.raises(FormatError) as exc:
            corpus_io.parse_queries(path, format="jsonl")
        assert exc.value.line == 1

    def test_jsonl_rejects_unknown_source(self, tmp_path):
        path = tmp_path / "q.jsonl"
        path.write_text('{"id": "a", "text": "alpha", "source": "bing"}\n')
        with pytest.raises(FormatError):
            corpus_io.parse_queries(path, format="jsonl")

    def test_invalid_utf8_is_a_format_error(self, tmp_path):
        path = tmp_path / "q.tsv"
        path.write_bytes(b"q1\t\xff\xfe broken\n")
        with pytest.raises(FormatError):
            corpus_io.parse_queries(path, format="tsv")

    def test_fixture_files_parse(self, fixtures_dir):
        tsv = corpus_io.parse_queries(fixtures_dir / "queries.tsv", format="tsv")
        jsonl = corpus_io.parse_queries(fixtures_dir / "queries.jsonl", format="jsonl")
        assert len(tsv.entries) == len(jsonl.entries) == 16
        assert jsonl.sources()["q00"] == Source.MSM


# ---------------------------------------------------------------------------
# topics


class TestTopics:
    def _topics(self):
        return TopicSet(topics=[
            Topic(topic_id="T1", title="lyme disease", description="desc one",
                  narrative="narr", variants=["lyme signs", "tick illness"]),
            Topic(topic_id="T2", title="tax filing", description="desc two",
                  narrative="", variants=[]),
        ])

    def test_round_trip(self, tmp_path):
        path = tmp_path / "topics.jsonl"
        corpus_io.write_topics(self._topics(), path)
        assert corpus_io.parse_topics(path) == self._topics()

    def test_duplicate_topic_rejected(self, tmp_path):
        path = tmp_path / "topics.jsonl"
        corpus_io.write_topics(self._topics(), path)
        line = path.read_text().splitlines()[0]
        path.write_text(line + "\n" + line + "\n")
        with pytest.raises(FormatError) as exc:
            corpus_io.parse_topics(path)
        assert exc.value.line == 2

    def test_missing_key_rejected(self, tmp_path):
        path = tmp_path / "topics.jsonl"
        path.write_text(json.dumps({"topic_id": "T1", "title": "x"}) + "\n")
        with pytest.raises(FormatError):
            corpus_io.parse_topics(path)


# ---------------------------------------------------------------------------
# qrels


class TestQrels:
    def test_round_trip_is_canonically_sorted(self, tmp_path):
        qrels = Qrels(judgments={("T2", "d1"): 0, ("T1", "d9"): 2, ("T1", "d1"): 1})
        path = tmp_path / "qrels.txt"
        corpus_io.write_qrels(qrels, path)
        assert corpus_io.parse_qrels(path) == qrels
        lines = path.read_text().splitlines()
        assert lines == ["T1 0 d1 1", "T1 0 d9 2", "T2 0 d1 0"]

    def test_column_count_enforced(self, tmp_path):
        path = tmp_path / "qrels.txt"
        path.write_text("T1 0 d1\n")
        with pytest.raises(FormatError) as exc:
            corpus_io.parse_qrels(path)
        assert exc.value.line == 1

    def test_grade_must_be_nonnegative_integer(self, tmp_path):
        path = tmp_path / "qrels.txt"
        path.write_text("T1 0 d1 -1\n")
        with pytest.raises(FormatError):
            corpus_io.parse_qrels(path)
        path.write_text("T1 0 d1 high\n")
        with pytest.raises(FormatError):
            corpus_io.parse_qrels(path)

    def test_duplicate_judgment_rejected(self, tmp_path):
        path = tmp_path / "qrels.txt"
        path.write_text("T1 0 d1 1\nT1 0 d1 2\n")
        with pytest.raises(FormatError) as exc:
            corpus_io.parse_qrels(path)
        assert exc.value.line == 2


# ---------------------------------------------------------------------------
# runs


class TestRuns:
    def _run(self):
        return Run(entries={
            "T1": [RunEntry(doc_id="d2", rank=1, score=1.5, tag="sys"),
                   RunEntry(doc_id="d1", rank=2, score=0.25, tag="sys")],
            "T2": [RunEntry(doc_id="d3", rank=1, score=-2.125, tag="sys")],
        })

    def test_round_trip_preserves_order_and_scores(self, tmp_path):
        path = tmp_path / "a.run"
        corpus_io.write_run(self._run(), path)
        assert corpus_io.parse_run(path) == self._run()

    def test_canonical_float_serialization(self, tmp_path):
        run = Run(entries={"T1": [RunEntry(doc_id="d1", rank=1, score=0.1, tag="s")]})
        path = tmp_path / "a.run"
        corpus_io.write_run(run, path)
        assert path.read_text() == "T1 Q0 d1 1 0.1 s\n"

    def test_six_columns_enforced(self, tmp_path):
        path = tmp_path / "a.run"
        path.write_text("T1 Q0 d1 1 0.5\n")
        with pytest.raises(FormatError):
            corpus_io.parse_run(path)

    def test_rank_and_score_types(self, tmp_path):
        path = tmp_path / "a.run"
        path.write_text("T1 Q0 d1 first 0.5 tag\n")
        with pytest.raises(FormatError):
            corpus_io.parse_run(path)
        path.write_text("T1 Q0 d1 0 0.5 tag\n")
        with pytest.raises(FormatError):
            corpus_io.parse_run(path)
        path.write_text("T1 Q0 d1 1 high tag\n")
        with pytest.raises(FormatError):
            corpus_io.parse_run(path)

    def test_duplicate_doc_per_topic_rejected(self, tmp_path):
        path = tmp_path / "a.run"
        path.write_text("T1 Q0 d1 1 2.0 t\nT1 Q0 d1 2 1.0 t\n")
        with pytest.raises(FormatError) as exc:
            corpus_io.parse_run(path)
        assert exc.value.line == 2

    def test_fixture_run_parses(self, fixtures_dir):
        run = corpus_io.parse_run(fixtures_dir / "sample.run")
        assert set(run.entries) == {"T1", "T2"}
        assert len(run.entries["T1"]) == 5


# ---------------------------------------------------------------------------
# training sets


class TestTrainingSets:
    def _training_set(self):
        return TrainingSet(pairs=[
            TrainingInstance(query_id="q1", query_text="alpha", pos_doc_id="d1",
                             neg_doc_id="d2", source=Source.MSM),
            TrainingInstance(query_id="q2", query_text="beta", pos_doc_id="d3",
                             neg_doc_id="d4", source=Source.ORCAS,
                             leaked=True, leak_topic_id="T9"),
        ])

    def test_round_trip(self, tmp_path):
        path = tmp_path / "train.jsonl"
        corpus_io.write_training_set(self._training_set(), path)
        assert corpus_io.parse_training_set(path) == self._training_set()

    def test_fixed_key_order(self):
        text = corpus_io.training_set_to_jsonl(self._training_set())
        first = text.splitlines()[0]
        keys = list(json.loads(first))
        assert keys == ["query_id", "query_text", "pos_doc_id", "neg_doc_id",
                        "source", "leaked", "leak_topic_id"]

    def test_leak_flag_consistency_enforced(self, tmp_path):
        path = tmp_path / "train.jsonl"
        record = {"query_id": "q1", "query_text": "a", "pos_doc_id": "d1",
                  "neg_doc_id": "d2", "source": "msm", "leaked": True,
                  "leak_topic_id": None}
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(FormatError):
            corpus_io.parse_training_set(path)

    def test_pos_equals_neg_rejected(self, tmp_path):
        path = tmp_path / "train.jsonl"
        record = {"query_id": "q1", "query_text": "a", "pos_doc_id": "d1",
                  "neg_doc_id": "d1", "source": "msm", "leaked": False,
                  "leak_topic_id": None}
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(FormatError):
            corpus_io.parse_training_set(path)


# ---------------------------------------------------------------------------
# labeling sheets and candidate files


class TestSheets:
    def _candidates(self):
        return [
            LeakageCandidate(topic_id="T1", query_id="q1", field=TopicField.TITLE,
                             similarity=0.97, label=True),
            LeakageCandidate(topic_id="T1", query_id="q2", field=TopicField.VARIANT,
                             similarity=0.85, variant_index=1, label=False),
            LeakageCandidate(topic_id="T2", query_id="q3",
                             field=TopicField.DESCRIPTION, similarity=0.91),
        ]

    def test_sheet_round_trip(self, tmp_path):
        path = tmp_path / "sheet.csv"
        corpus_io.write_sheet(self._candidates(), path)
        parsed = corpus_io.parse_sheet(path)
        assert [(c.topic_id, c.query_id, c.field, c.similarity, c.label)
                for c in parsed] == \
               [(c.topic_id, c.query_id, c.field, c.similarity, c.label)
                for c in self._candidates()]

    def test_sheet_empty_label_means_unlabeled(self, tmp_path):
        path = tmp_path / "sheet.csv"
        corpus_io.write_sheet(self._candidates(), path)
        parsed = corpus_io.parse_sheet(path)
        assert parsed[2].label is None

    def test_sheet_rejects_bad_label(self, tmp_path):
        path = tmp_path / "sheet.csv"
        path.write_text("topic_id,query_id,field,similarity,label\n"
                        "T1,q1,title,0.9,maybe\n")
        with pytest.raises(FormatError) as exc:
            corpus_io.parse_sheet(path)
        assert exc.value.line == 2

    def test_sheet_rejects_bad_header(self, tmp_path):
        path = tmp_path / "sheet.csv"
        path.write_text("topic,query,field,sim,label\nT1,q1,title,0.9,true\n")
        with pytest.raises(FormatError):
            corpus_io.parse_sheet(path)

    def test_candidates_round_trip(self, tmp_path):
        candidates = self._candidates()
        candidates[0] = LeakageCandidate(
            topic_id="T1", query_id="q1", field=TopicField.TITLE, similarity=0.97,
            label=True, reformulation=Reformulation.IDENTICAL)
        path = tmp_path / "cand.csv"
        corpus_io.write_candidates(candidates, path)
        assert corpus_io.parse_candidates(path) == candidates

    def test_candidates_reject_inconsistent_label(self, tmp_path):
        path = tmp_path / "cand.csv"
        path.write_text(
            "topic_id,query_id,field,variant_index,similarity,label,reformulation\n"
            "T1,q1,title,,0.97,true,different_topic\n")
        with pytest.raises(FormatError):
            corpus_io.parse_candidates(path)


# ---------------------------------------------------------------------------
# embeddings (EMB1)


class TestEmbeddings:
    def test_exact_byte_layout(self, tmp_path):
        rows = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], dtype=np.float32)
        matrix = EmbeddingMatrix(ids=["a", "b"], rows=rows)
        mpath, ipath = tmp_path / "m.emb", tmp_path / "m.ids"
        corpus_io.write_embeddings(matrix, mpath, ipath)
        expected = (b"EMB1" + struct.pack("<I", 3) + struct.pack("<Q", 2)
                    + rows.astype("<f4").tobytes(order="C"))
        assert mpath.read_bytes() == expected
        assert ipath.read_text() == "a\nb\n"

    def test_size_arithmetic(self, tmp_path):
        rng = np.random.default_rng(7)
        rows = rng.standard_normal((50, 64)).astype(np.float32)
        matrix = EmbeddingMatrix(ids=[f"r{i}" for i in range(50)], rows=rows)
        mpath, ipath = tmp_path / "m.emb", tmp_path / "m.ids"
        corpus_io.write_embeddings(matrix, mpath, ipath)
        assert mpath.stat().st_size == 4 + 4 + 8 + 50 * 64 * 4

    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(11)
        rows = rng.standard_normal((20, 5)).astype(np.float32)
        matrix = EmbeddingMatrix(ids=[f"r{i:02d}" for i in range(20)], rows=rows)
        mpath, ipath = tmp_path / "m.emb", tmp_path / "m.ids"
        corpus_io.write_embeddings(matrix, mpath, ipath)
        loaded = corpus_io.read_embeddings(mpath, ipath)
        assert loaded.ids == matrix.ids
        assert np.array_equal(loaded.rows, matrix.rows)

    def test_mmap_read_equals_eager_read(self, tmp_path):
        rng = np.random.default_rng(13)
        rows = rng.standard_normal((8, 4)).astype(np.float32)
        matrix = EmbeddingMatrix(ids=[f"r{i}" for i in range(8)], rows=rows)
        mpath, ipath = tmp_path / "m.emb", tmp_path / "m.ids"
        corpus_io.write_embeddings(matrix, mpath, ipath)
        eager = corpus_io.read_embeddings(mpath, ipath, mmap=False)
        lazy = corpus_io.read_embeddings(mpath, ipath, mmap=True)
        assert np.array_equal(np.asarray(lazy.rows), eager.rows)
        assert lazy.ids == eager.ids

    def _write_sample(self, tmp_path):
        rows = np.array([[1.0, 0.0], [0.5, 0.5]], dtype=np.float32)
        matrix = EmbeddingMatrix(ids=["a", "b"], rows=rows)
        mpath, ipath = tmp_path / "m.emb", tmp_path / "m.ids"
        corpus_io.write_embeddings(matrix, mpath, ipath)
        return mpath, ipath

    def test_magic_mismatch(self, tmp_path):
        mpath, ipath = self._write_sample(tmp_path)
        data = bytearray(mpath.read_bytes())
        data[:4] = b"EMB2"
        mpath.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="magic"):
            corpus_io.read_embeddings(mpath, ipath)

    def test_truncated_payload(self, tmp_path):
        mpath, ipath = self._write_sample(tmp_path)
        mpath.write_bytes(mpath.read_bytes()[:-4])
        with pytest.raises(FormatError, match="truncat"):
            corpus_io.read_embeddings(mpath, ipath)

    def test_trailing_bytes(self, tmp_path):
        mpath, ipath = self._write_sample(tmp_path)
        mpath.write_bytes(mpath.read_bytes() + b"\x00")
        with pytest.raises(FormatError, match="trailing"):
            corpus_io.read_embeddings(mpath, ipath)

    def test_ids_count_mismatch(self, tmp_path):
        mpath, ipath = self._write_sample(tmp_path)
        ipath.write_text("a\n")
        with pytest.raises(FormatError, match="ids"):
            corpus_io.read_embeddings(mpath, ipath)

    def test_empty_id_line(self, tmp_path):
        mpath, ipath = self._write_sample(tmp_path)
        ipath.write_text("a\n\n")
        with pytest.raises(FormatError):
            corpus_io.read_embeddings(mpath, ipath)

    def test_zero_row_rejected_by_name(self, tmp_path):
        rows = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=np.float32)
        matrix = EmbeddingMatrix(ids=["good", "bad"], rows=rows)
        mpath, ipath = tmp_path / "m.emb", tmp_path / "m.ids"
        corpus_io.write_embeddings(matrix, mpath, ipath)
        with pytest.raises(FormatError, match="bad"):
            corpus_io.read_embeddings(mpath, ipath)

    def test_newline_in_id_rejected_at_write(self, tmp_path):
        matrix = EmbeddingMatrix(ids=["a\nb"], rows=np.ones((1, 2), dtype=np.float32))
        with pytest.raises(FormatError):
            corpus_io.write_embeddings(matrix, tmp_path / "m.emb", tmp_path / "m.ids")

    def test_checked_in_fixture_loads(self, fixtures_dir):
        matrix = corpus_io.read_embeddings(fixtures_dir / "queries_16x8.emb",
                                           fixtures_dir / "queries_16x8.ids")
        assert matrix.rows.shape == (16, 8)
        norms = np.linalg.norm(matrix.rows.astype(np.float64), axis=1)
        assert np.allclose(norms, 1.0, atol=1e-5)


# ---------------------------------------------------------------------------
# sidecar formats


class TestSidecars:
    def test_rescores_round_trip(self, tmp_path):
        scores = {("T1", "d1"): -1.5, ("T1", "d2"): 0.25, ("T2", "d1"): 3.0}
        path = tmp_path / "rescores.tsv"
        corpus_io.write_rescores(scores, path)
        assert corpus_io.parse_rescores(path) == scores

    def test_rescores_reject_bad_rows(self, tmp_path):
        path = tmp_path / "rescores.tsv"
        path.write_text("T1\td1\n")
        with pytest.raises(FormatError):
            corpus_io.parse_rescores(path)
        path.write_text("T1\td1\thigh\n")
        with pytest.raises(FormatError):
            corpus_io.parse_rescores(path)
        path.write_text("T1\td1\t1.0\nT1\td1\t2.0\n")
        with pytest.raises(FormatError) as exc:
            corpus_io.parse_rescores(path)
        assert exc.value.line == 2

    def test_positives_round_trip(self, tmp_path):
        positives = {"q1": "d1", "q2": "d9"}
        path = tmp_path / "pos.tsv"
        corpus_io.write_positives(positives, path)
        assert corpus_io.parse_positives(path) == positives

    def test_positives_reject_duplicates(self, tmp_path):
        path = tmp_path / "pos.tsv"
        path.write_text("q1\td1\nq1\td2\n")
        with pytest.raises(FormatError) as exc:
            corpus_io.parse_positives(path)
        assert exc.value.line == 2


class TestFormatErrorShape:
    def test_message_carries_path_and_line(self, tmp_path):
        path = tmp_path / "q.tsv"
        path.write_text("bad line without tab\n")
        with pytest.raises(FormatError) as exc:
            corpus_io.parse_queries(path, format="tsv")
        assert str(path) in str(exc.value)
        assert ":1:" in str(exc.value)
