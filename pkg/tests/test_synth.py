"""Synthetic databases, templated gold pairs, grouped splits, localization."""
from __future__ import annotations

import json
import sqlite3

import numpy as np
import pytest

from sqlsem.corpus import Corpus, Example, write_corpus
from sqlsem.errors import DataError
from sqlsem.exec_oracle import execute
from sqlsem.featurize import BuiltinFeaturizer, EmbeddingCache
from sqlsem.nmpnn import NmpnnConfig
from sqlsem.synth import (
    SCHEMAS,
    _grouped_split,
    augment_corpus,
    build_databases,
    build_gold_corpus,
    localization_report,
    schema_bundle,
    write_schema_bundle,
)
from sqlsem.validator import init_model, localize, prepare_example


@pytest.fixture(scope="module")
def db_paths(tmp_path_factory):
    return build_databases(str(tmp_path_factory.mktemp("toydbs")))


@pytest.fixture(scope="module")
def gold(db_paths):
    return build_gold_corpus(db_paths)


# ---------------------------------------------------------------------------
# databases


def test_build_databases_covers_every_schema(db_paths):
    assert sorted(db_paths) == sorted(SCHEMAS) == ["fleet", "school", "shop"]
    for db_id, path in db_paths.items():
        for table in SCHEMAS[db_id].tables:
            count = execute(path, f"SELECT COUNT(*) FROM {table.name}").rows[0][0]
            assert count > 0, f"{db_id}.{table.name} is empty"


def test_build_databases_is_deterministic(db_paths, tmp_path):
    again = build_databases(str(tmp_path / "again"))
    for db_id, path in db_paths.items():
        with sqlite3.connect(path) as a, sqlite3.connect(again[db_id]) as b:
            assert list(a.iterdump()) == list(b.iterdump())


def test_schema_bundle_lists_databases(tmp_path):
    bundle = schema_bundle()
    assert [d["db_id"] for d in bundle["databases"]] == ["fleet", "school", "shop"]
    path = str(tmp_path / "schemas.json")
    write_schema_bundle(path)
    loaded = json.load(open(path, encoding="utf-8"))
    assert loaded == bundle
    for entry in bundle["databases"]:
        assert entry["tables"], entry["db_id"]


# ---------------------------------------------------------------------------
# gold corpus


def test_gold_corpus_is_large_and_valid(gold, db_paths):
    assert len(gold) >= 200
    ids = [ex.id for ex in gold]
    assert len(set(ids)) == len(ids)
    for ex in gold:
        assert ex.label == 0
        assert ex.source == "gold"
        assert ex.db_id in db_paths
        assert ex.question and ex.sql


def test_gold_queries_execute(gold, db_paths):
    rng = np.random.default_rng(0)
    for index in rng.choice(len(gold), size=30, replace=False):
        ex = gold.examples[int(index)]
        result = execute(db_paths[ex.db_id], ex.sql)
        assert result.columns >= 1


def test_gold_corpus_is_seeded(db_paths, gold):
    same = build_gold_corpus(db_paths)
    assert [ex.to_dict() for ex in same] == [ex.to_dict() for ex in gold]
    other = build_gold_corpus(db_paths, seed=7)
    assert {ex.sql for ex in other} != {ex.sql for ex in gold}


def test_gold_corpus_respects_per_template(db_paths):
    small = build_gold_corpus(db_paths, per_template=2, min_pairs=10)
    assert 10 <= len(small) < len(build_gold_corpus(db_paths))


def test_gold_corpus_enforces_minimum(db_paths):
    with pytest.raises(DataError, match="need"):
        build_gold_corpus(db_paths, per_template=1, min_pairs=10_000)


# ---------------------------------------------------------------------------
# augmentation at corpus level


@pytest.fixture(scope="module")
def augmented(gold, db_paths):
    subset = Corpus(gold.examples[:12])
    return augment_corpus(subset, db_paths, seed=1, budget=3)


def test_augment_corpus_balances_labels(augmented):
    labels = [ex.label for ex in augmented]
    assert labels.count(0) == labels.count(1) > 0


def test_augment_corpus_rows_validate(augmented):
    augmented.validate()
    for ex in augmented:
        if ex.source == "ast-aug":
            assert sum(ex.sublabels.values()) == 1
            assert "/aug-" in ex.id
        else:
            assert ex.source == "gold"
            assert ex.sublabels is None


def test_augment_corpus_bytes_reproducible(gold, db_paths, tmp_path):
    subset = Corpus(gold.examples[:12])
    a, b = str(tmp_path / "a.jsonl"), str(tmp_path / "b.jsonl")
    write_corpus(augment_corpus(subset, db_paths, seed=1, budget=3), a)
    write_corpus(augment_corpus(subset, db_paths, seed=1, budget=3), b)
    assert open(a, "rb").read() == open(b, "rb").read()


# ---------------------------------------------------------------------------
# grouped split


def _groups(rows):
    return {ex.id.split("/", 1)[0] for ex in rows}


def test_grouped_split_keeps_derivation_groups_together(augmented):
    for seed in range(5):
        big, small = _grouped_split(list(augmented), 0.25,
                                    np.random.default_rng(seed))
        assert len(big) + len(small) == len(augmented)
        assert _groups(big).isdisjoint(_groups(small))
        assert small and big
        merged = sorted(ex.id for ex in big + small)
        assert merged == sorted(ex.id for ex in augmented)


def test_grouped_split_mutants_follow_gold(augmented):
    big, small = _grouped_split(list(augmented), 0.3, np.random.default_rng(2))
    side = {}
    for name, rows in (("big", big), ("small", small)):
        for ex in rows:
            side[ex.id] = name
    for ex in augmented:
        if "/aug-" in ex.id:
            gold_id = ex.id.split("/", 1)[0]
            if gold_id in side:
                assert side[ex.id] == side[gold_id]


# ---------------------------------------------------------------------------
# localization report


DIM = 16
CONFIG = NmpnnConfig(dim=DIM, t_ast=1, t_lp=1)


@pytest.fixture(scope="module")
def prepared_invalid(augmented, db_paths):
    provider = BuiltinFeaturizer(DIM)
    cache = EmbeddingCache()
    rows = [ex for ex in augmented if ex.label == 1][:10]
    return [prepare_example(ex, SCHEMAS[ex.db_id], provider, cache)
            for ex in rows]


def test_localization_report_ties_give_midrank_half(prepared_invalid):
    store = init_model(CONFIG, seed=0)
    for _, tensor in store.items():
        tensor.data[:] = 0.0  # every node scores 0.5, so rank is the midrank
    report = localization_report(store, CONFIG, prepared_invalid)
    assert report["mean_normalized_rank"] == 0.5
    assert report["n_localized"] == len(prepared_invalid)


def test_localization_report_matches_rank_oracle(prepared_invalid):
    store = init_model(CONFIG, seed=5)
    report = localization_report(store, CONFIG, prepared_invalid)
    ranks = []
    for p in prepared_invalid:
        scores = localize(store, p.h_question, p.hir, p.embeddings, CONFIG).scores
        (true_node,) = [nid for nid, v in p.example.sublabels.items() if v == 1]
        better = [v for v in scores.values() if v > scores[true_node]]
        equal = [v for v in scores.values() if v == scores[true_node]]
        rank = len(better) + (len(equal) - 1) / 2.0
        ranks.append(rank / (len(scores) - 1))
    assert report["mean_normalized_rank"] == pytest.approx(
        sum(ranks) / len(ranks), abs=1e-15)
    assert report["n_localized"] == len(ranks)


def test_localization_report_needs_invalid_rows(gold, db_paths):
    provider = BuiltinFeaturizer(DIM)
    rows = [prepare_example(ex, SCHEMAS[ex.db_id], provider, EmbeddingCache())
            for ex in gold.examples[:3]]
    store = init_model(CONFIG, seed=0)
    with pytest.raises(DataError):
        localization_report(store, CONFIG, rows)


def test_localization_report_skips_rows_without_sublabels(augmented, db_paths,
                                                          prepared_invalid):
    provider = BuiltinFeaturizer(DIM)
    cache = EmbeddingCache()
    plain_invalid = prepare_example(
        Example(id="x", db_id="shop", question="q",
                sql="SELECT name FROM item", label=1, source="llm"),
        SCHEMAS["shop"], provider, cache)
    store = init_model(CONFIG, seed=0)
    with_extra = localization_report(store, CONFIG,
                                     prepared_invalid + [plain_invalid])
    assert with_extra["n_localized"] == len(prepared_invalid)
