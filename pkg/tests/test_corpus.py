"""Dataset model: serialization round trips, validation, splitting, import."""

from __future__ import annotations

import dataclasses
import json

import pytest

from marketrank import corpus, synthgen
from marketrank.corpus import CorpusError

from conftest import make_dataset, make_doc, make_query


class TestRoundTrip:
    def test_minimal_file(self, tmp_path, small_dataset):
        path = tmp_path / "ds.json"
        corpus.save_dataset(small_dataset, path)
        loaded = corpus.load_dataset(path)
        assert loaded == small_dataset

    def test_generated_dataset_round_trips_exactly(self, tmp_path):
        cfg = synthgen.GenConfig(
            num_queries=12, docs_per_query=9, feature_dim=5, num_categories=8,
            tier_count=4, seed=11,
        )
        ds = synthgen.generate(cfg)
        path = tmp_path / "gen.json"
        corpus.save_dataset(ds, path)
        assert corpus.load_dataset(path) == ds

    def test_round_trip_at_large_query_scale(self, tmp_path):
        cfg = synthgen.GenConfig(
            num_queries=5000, docs_per_query=4, feature_dim=3, num_categories=6,
            tier_count=3, seed=2,
        )
        ds = synthgen.generate(cfg)
        path = tmp_path / "big.json"
        corpus.save_dataset(ds, path)
        loaded = corpus.load_dataset(path)
        assert len(loaded.queries) == 5000
        assert loaded == ds

    def test_empty_dataset_rejected_on_save(self, tmp_path, small_dataset):
        empty = dataclasses.replace(small_dataset, queries=())
        with pytest.raises(CorpusError, match="no queries"):
            corpus.save_dataset(empty, tmp_path / "x.json")

    def test_unwritable_path_raises(self, small_dataset, tmp_path):
        with pytest.raises(OSError):
            corpus.save_dataset(small_dataset, tmp_path / "nodir" / "x.json")


class TestLoadErrors:
    def test_grade_out_of_range_rejected(self, tmp_path, small_dataset):
        payload = corpus.dataset_to_json(small_dataset)
        payload["queries"][0]["docs"][0]["grade"] = 7
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(payload), encoding="utf-8")
        with pytest.raises(CorpusError, match=r"grade 7 outside \{1\.\.5\}"):
            corpus.load_dataset(path)

    def test_malformed_json_names_line(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{"feature_dim": 2,\n  "queries": [}', encoding="utf-8")
        with pytest.raises(CorpusError, match="line 2"):
            corpus.load_dataset(path)

    def test_missing_field_named(self, tmp_path, small_dataset):
        payload = corpus.dataset_to_json(small_dataset)
        del payload["queries"][1]["docs"][0]["price"]
        path = tmp_path / "missing.json"
        path.write_text(json.dumps(payload), encoding="utf-8")
        with pytest.raises(CorpusError, match="price"):
            corpus.load_dataset(path)

    def test_feature_length_mismatch_names_query_and_doc(self, tmp_path, small_dataset):
        payload = corpus.dataset_to_json(small_dataset)
        payload["queries"][0]["docs"][1]["features"] = [1.0, 2.0, 3.0]
        path = tmp_path / "mismatch.json"
        path.write_text(json.dumps(payload), encoding="utf-8")
        with pytest.raises(CorpusError, match=r"q1.*d2|d2.*q1"):
            corpus.load_dataset(path)


class TestValidate:
    def test_well_formed_dataset_has_no_violations(self, small_dataset):
        assert corpus.validate(small_dataset) == []

    def test_feature_length_violation_names_doc(self, small_dataset):
        bad_doc = make_doc("d19", features=(1.0,) * 19)
        q = make_query("q3", [(bad_doc, 3)])
        ds = dataclasses.replace(
            small_dataset,
            queries=(*small_dataset.queries, q),
            feature_dim=2,
        )
        violations = [v for v in corpus.validate(ds) if "d19" in v]
        assert len(violations) == 1
        assert "19 features" in violations[0]

    def test_topic_dist_sum_violation_names_query(self, small_dataset):
        q = make_query(
            "q_bad",
            [(make_doc("dx"), 3)],
            topic_dist={"cat_a": 0.9},
        )
        ds = dataclasses.replace(small_dataset, queries=(*small_dataset.queries, q))
        assert any("q_bad" in v and "topic_dist" in v for v in corpus.validate(ds))

    @pytest.mark.parametrize(
        "mutate, fragment",
        [
            (lambda d: {"seller_tier": 99}, "seller_tier"),
            (lambda d: {"price": -1.0}, "price"),
            (lambda d: {"taxonomy_path": ()}, "taxonomy_path"),
            (lambda d: {"taxonomy_path": ("root", "mid", "nope")}, "not in dataset"),
        ],
    )
    def test_each_document_violation_class_detected(
        self, small_dataset, mutate, fragment
    ):
        doc = small_dataset.queries[0].docs[0]
        bad = dataclasses.replace(doc, **mutate(doc))
        q0 = small_dataset.queries[0]
        judged = ((bad, q0.judged_docs[0][1]), *q0.judged_docs[1:])
        q = dataclasses.replace(q0, judged_docs=judged)
        ds = dataclasses.replace(small_dataset, queries=(q, *small_dataset.queries[1:]))
        assert any(fragment in v for v in corpus.validate(ds))

    def test_grade_violation_detected(self, small_dataset):
        q0 = small_dataset.queries[0]
        judged = ((q0.docs[0], 9), *q0.judged_docs[1:])
        q = dataclasses.replace(q0, judged_docs=judged)
        ds = dataclasses.replace(small_dataset, queries=(q, *small_dataset.queries[1:]))
        assert any("grade 9" in v for v in corpus.validate(ds))

    def test_duplicate_ids_detected(self, small_dataset):
        q0 = small_dataset.queries[0]
        dup = dataclasses.replace(small_dataset, queries=(q0, q0))
        assert any("duplicate query_id" in v for v in corpus.validate(dup))
        judged = (q0.judged_docs[0], q0.judged_docs[0])
        qd = dataclasses.replace(q0, judged_docs=judged)
        ds = dataclasses.replace(small_dataset, queries=(qd,))
        assert any("duplicate doc_id" in v for v in corpus.validate(ds))

    def test_observation_model_range_checked(self, small_dataset):
        ds = dataclasses.replace(small_dataset, observation_model=(0.5, 1.2))
        assert any("observation_model" in v for v in corpus.validate(ds))

    def test_tier_population_sum_checked(self, small_dataset):
        ds = dataclasses.replace(small_dataset, tier_population=(0.5, 0.6))
        assert any("tier_population" in v for v in corpus.validate(ds))


class TestSplit:
    def _ten_query_dataset(self):
        queries = [
            make_query(f"q{i}", [(make_doc(f"q{i}-d0"), 3), (make_doc(f"q{i}-d1"), 2)])
            for i in range(10)
        ]
        return make_dataset(queries)

    def test_exact_fractions(self):
        ds = self._ten_query_dataset()
        train, val, test = corpus.split(ds, (0.8, 0.1, 0.1), seed=7)
        assert (len(train.queries), len(val.queries), len(test.queries)) == (8, 1, 1)

    def test_deterministic_given_seed(self):
        ds = self._ten_query_dataset()
        a = corpus.split(ds, (0.8, 0.1, 0.1), seed=7)
        b = corpus.split(ds, (0.8, 0.1, 0.1), seed=7)
        assert all(x == y for x, y in zip(a, b))

    def test_different_seed_changes_assignment(self):
        ds = self._ten_query_dataset()
        a = corpus.split(ds, (0.6, 0.2, 0.2), seed=1)
        b = corpus.split(ds, (0.6, 0.2, 0.2), seed=2)
        assert any(x != y for x, y in zip(a, b))

    def test_bad_fractions_rejected(self):
        ds = self._ten_query_dataset()
        with pytest.raises(CorpusError, match="sum"):
            corpus.split(ds, (0.5, 0.5, 0.5), seed=0)

    def test_too_few_queries_rejected(self):
        queries = [make_query("q0", [(make_doc("d0"), 3)])]
        ds = make_dataset(queries)
        with pytest.raises(CorpusError, match="cannot split"):
            corpus.split(ds, (0.8, 0.1, 0.1), seed=0)

    def test_partition_property(self):
        ds = self._ten_query_dataset()
        parts = corpus.split(ds, (0.5, 0.3, 0.2), seed=13)
        ids = [set(q.query_id for q in p.queries) for p in parts]
        assert ids[0] | ids[1] | ids[2] == {q.query_id for q in ds.queries}
        assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])

    def test_every_split_nonempty_and_metadata_shared(self):
        queries = [
            make_query(f"q{i}", [(make_doc(f"q{i}-d0"), 3)]) for i in range(3)
        ]
        ds = make_dataset(queries)
        parts = corpus.split(ds, (0.8, 0.1, 0.1), seed=0)
        assert all(len(p.queries) == 1 for p in parts)
        for p in parts:
            assert p.feature_dim == ds.feature_dim
            assert p.category_set == ds.category_set
            assert p.tier_population == ds.tier_population
            assert p.observation_model == ds.observation_model


class TestLetorImport:
    def test_basic_lines(self, tmp_path):
        path = tmp_path / "in.tsv"
        path.write_text(
            "3 qid:1 1:0.5 2:1.0 #doc_a\n"
            "1 qid:1 1:0.0 2:0.25 #doc_b\n"
            "5 qid:2 1:1.0 2:0.0 #doc_c\n",
            encoding="utf-8",
        )
        ds = corpus.import_letor(path)
        assert corpus.validate(ds) == []
        assert ds.feature_dim == 2
        assert {q.query_id for q in ds.queries} == {"1", "2"}
        q1 = ds.query_index()["1"]
        assert q1.grades == (3, 1)
        assert q1.docs[0].doc_id == "doc_a"
        assert q1.docs[0].features == (0.5, 1.0)

    def test_grade_offset_for_zero_based_corpora(self, tmp_path):
        path = tmp_path / "in.tsv"
        path.write_text("0 qid:1 1:0.5 #a\n4 qid:1 1:0.1 #b\n", encoding="utf-8")
        with pytest.raises(CorpusError, match="grade 0"):
            corpus.import_letor(path)
        ds = corpus.import_letor(path, grade_offset=1)
        assert ds.query_index()["1"].grades == (1, 5)

    def test_sparse_features_filled_with_zeros(self, tmp_path):
        path = tmp_path / "in.tsv"
        path.write_text("2 qid:1 1:0.5 3:0.7 #a\n", encoding="utf-8")
        ds = corpus.import_letor(path)
        assert ds.queries[0].docs[0].features == (0.5, 0.0, 0.7)

    def test_unparseable_line_names_lineno(self, tmp_path):
        path = tmp_path / "in.tsv"
        path.write_text("3 qid:1 1:0.5 #a\nnot a letor line\n", encoding="utf-8")
        with pytest.raises(CorpusError, match=":2"):
            corpus.import_letor(path)
