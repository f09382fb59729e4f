"""Self-contained synthetic benchmark: toy databases, templated pairs, and an
end-to-end train/eval run.

Everything here is seeded, so two runs in the same directory produce the same
databases, the same corpus files, and the same trained model. Questions are
phrased with the schema's own vocabulary ("category", "points", "greater
than") so the hashed bag-of-tokens featurizer has signal to work with.
"""
from __future__ import annotations

import os
import sqlite3

import numpy as np

from .augment import balance, derive_seed, generate_negatives
from .corpus import Corpus, Example, write_corpus
from .errors import DataError
from .exec_oracle import ExecError, execute
from .featurize import BuiltinFeaturizer, EmbeddingCache
from .metrics import eval_report
from .nmpnn import NmpnnConfig
from .sqlast import Schema, Table
from .validator import (
    PreparedExample,
    TrainConfig,
    init_model,
    localize,
    prepare_corpus,
    score_all,
    train,
)

_DB_CONTENT_SEED = 97  # fixed: database contents never vary with the run seed

SCHEMAS: dict[str, Schema] = {
    "shop": Schema((
        Table("products", ("product_id", "name", "category", "price", "stock"),
              ("INTEGER", "TEXT", "TEXT", "REAL", "INTEGER")),
        Table("orders", ("order_id", "product_id", "quantity", "day"),
              ("INTEGER", "INTEGER", "INTEGER", "INTEGER")),
    )),
    "school": Schema((
        Table("students", ("student_id", "name", "city", "age", "grade"),
              ("INTEGER", "TEXT", "TEXT", "INTEGER", "INTEGER")),
        Table("marks", ("mark_id", "student_id", "subject", "points"),
              ("INTEGER", "INTEGER", "TEXT", "INTEGER")),
    )),
    "fleet": Schema((
        Table("vehicles", ("vehicle_id", "model", "kind", "capacity", "year"),
              ("INTEGER", "TEXT", "TEXT", "INTEGER", "INTEGER")),
        Table("trips", ("trip_id", "vehicle_id", "distance", "hours"),
              ("INTEGER", "INTEGER", "REAL", "REAL")),
    )),
}

_CATEGORIES = ("tools", "toys", "books", "games", "snacks")
_CITIES = ("arlon", "bastogne", "charleroi", "dinant", "eupen")
_SUBJECTS = ("math", "physics", "history", "art")
_KINDS = ("van", "truck", "bus", "car")


def _create(conn: sqlite3.Connection, schema: Schema) -> None:
    for table in schema.tables:
        cols = ", ".join(f"{c} {t}" for c, t in zip(table.columns, table.types))
        conn.execute(f"CREATE TABLE {table.name} ({cols})")


# Numeric columns draw from wide ranges on purpose: constants in the corpus
# must be diverse enough that a model can only fit them by comparing the
# question's value against the query's value, not by recognizing values.
def _rows_shop(rng: np.random.Generator):
    products = [(i, f"item{i:02d}", _CATEGORIES[rng.integers(len(_CATEGORIES))],
                 round(float(rng.uniform(5, 95)), 1), int(rng.integers(0, 400)))
                for i in range(1, 61)]
    orders = [(i, int(rng.integers(1, 61)), int(rng.integers(1, 80)),
               int(rng.integers(1, 320))) for i in range(1, 181)]
    return {"products": products, "orders": orders}


def _rows_school(rng: np.random.Generator):
    students = [(i, f"pupil{i:02d}", _CITIES[rng.integers(len(_CITIES))],
                 int(rng.integers(11, 26)), int(rng.integers(1, 13)))
                for i in range(1, 61)]
    marks = [(i, int(rng.integers(1, 61)), _SUBJECTS[rng.integers(len(_SUBJECTS))],
              int(rng.integers(0, 600))) for i in range(1, 181)]
    return {"students": students, "marks": marks}


def _rows_fleet(rng: np.random.Generator):
    vehicles = [(i, f"model{i:02d}", _KINDS[rng.integers(len(_KINDS))],
                 int(rng.integers(2, 200)), int(rng.integers(1960, 2025)))
                for i in range(1, 51)]
    trips = [(i, int(rng.integers(1, 51)), round(float(rng.uniform(5, 400)), 1),
              round(float(rng.uniform(0.5, 12)), 1)) for i in range(1, 151)]
    return {"vehicles": vehicles, "trips": trips}


_ROW_BUILDERS = {"shop": _rows_shop, "school": _rows_school, "fleet": _rows_fleet}


def build_databases(directory: str) -> dict[str, str]:
    """Create (or recreate) one SQLite file per toy database; returns paths."""
    os.makedirs(directory, exist_ok=True)
    paths = {}
    for index, (db_id, schema) in enumerate(sorted(SCHEMAS.items())):
        path = os.path.join(directory, f"{db_id}.sqlite")
        if os.path.exists(path):
            os.remove(path)
        conn = sqlite3.connect(path)
        try:
            _create(conn, schema)
            rows = _ROW_BUILDERS[db_id](np.random.default_rng([_DB_CONTENT_SEED,
                                                               index]))
            for table in schema.tables:
                marks = ", ".join("?" * len(table.columns))
                conn.executemany(f"INSERT INTO {table.name} VALUES ({marks})",
                                 rows[table.name])
            conn.commit()
        finally:
            conn.close()
        paths[db_id] = path
    return paths


def schema_bundle() -> dict:
    return {"databases": [{"db_id": db_id, **schema.to_json()}
                          for db_id, schema in sorted(SCHEMAS.items())]}


def write_schema_bundle(path: str) -> None:
    import json
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema_bundle(), fh, indent=1, sort_keys=True)
        fh.write("\n")


# --- templated gold pairs ----------------------------------------------------

# (question template, sql template, {placeholder: pool name})
_TEMPLATES: dict[str, list[tuple[str, str, dict[str, str]]]] = {
    "shop": [
        ("how many products have category {cat}",
         "SELECT COUNT(*) FROM products WHERE category = '{cat}'",
         {"cat": "cat"}),
        ("average price of products with category {cat}",
         "SELECT AVG(price) FROM products WHERE category = '{cat}'",
         {"cat": "cat"}),
        ("names of products with price greater than {p}",
         "SELECT name FROM products WHERE price > {p}",
         {"p": "price"}),
        ("names of products with stock less than {s}",
         "SELECT name FROM products WHERE stock < {s}",
         {"s": "stock"}),
        ("name and price of the {k} products with lowest price",
         "SELECT name, price FROM products ORDER BY price LIMIT {k}",
         {"k": "k"}),
        ("total quantity of orders for the product named {name}",
         "SELECT SUM(orders.quantity) FROM orders JOIN products "
         "ON orders.product_id = products.product_id "
         "WHERE products.name = '{name}'",
         {"name": "name"}),
        ("product_id values with more than {c} orders",
         "SELECT product_id, COUNT(*) FROM orders GROUP BY product_id "
         "HAVING COUNT(*) > {c}",
         {"c": "cnt"}),
        ("names of products with category {cat} and price less than {p}",
         "SELECT name FROM products WHERE category = '{cat}' AND price < {p}",
         {"cat": "cat", "p": "price"}),
        ("highest price of products with stock greater than {s}",
         "SELECT MAX(price) FROM products WHERE stock > {s}",
         {"s": "stock"}),
        ("names of products ordered on day {d}",
         "SELECT products.name FROM orders JOIN products "
         "ON orders.product_id = products.product_id WHERE orders.day = {d}",
         {"d": "day"}),
        ("price of the product named {name}",
         "SELECT price FROM products WHERE name = '{name}'",
         {"name": "name"}),
        ("how many orders have quantity greater than {q}",
         "SELECT COUNT(*) FROM orders WHERE quantity > {q}",
         {"q": "qty"}),
    ],
    "school": [
        ("how many students live in the city {city}",
         "SELECT COUNT(*) FROM students WHERE city = '{city}'",
         {"city": "city"}),
        ("average age of students in grade {g}",
         "SELECT AVG(age) FROM students WHERE grade = {g}",
         {"g": "grade"}),
        ("names of students with age greater than {a}",
         "SELECT name FROM students WHERE age > {a}",
         {"a": "age"}),
        ("average points in the subject {subj}",
         "SELECT AVG(points) FROM marks WHERE subject = '{subj}'",
         {"subj": "subj"}),
        ("names of students with points greater than {n} in the subject {subj}",
         "SELECT students.name FROM marks JOIN students "
         "ON marks.student_id = students.student_id "
         "WHERE marks.subject = '{subj}' AND marks.points > {n}",
         {"subj": "subj", "n": "points"}),
        ("student_id values with average points greater than {n}",
         "SELECT student_id, COUNT(*) FROM marks GROUP BY student_id "
         "HAVING AVG(points) > {n}",
         {"n": "points"}),
        ("lowest age of students in the city {city}",
         "SELECT MIN(age) FROM students WHERE city = '{city}'",
         {"city": "city"}),
        ("names of the {k} students with highest age",
         "SELECT name FROM students ORDER BY age DESC LIMIT {k}",
         {"k": "k"}),
        ("how many students are in grade {g}",
         "SELECT COUNT(*) FROM students WHERE grade = {g}",
         {"g": "grade"}),
        ("highest points in the subject {subj}",
         "SELECT MAX(points) FROM marks WHERE subject = '{subj}'",
         {"subj": "subj"}),
    ],
    "fleet": [
        ("how many vehicles are of kind {kind}",
         "SELECT COUNT(*) FROM vehicles WHERE kind = '{kind}'",
         {"kind": "kind"}),
        ("average capacity of vehicles of kind {kind}",
         "SELECT AVG(capacity) FROM vehicles WHERE kind = '{kind}'",
         {"kind": "kind"}),
        ("models of vehicles with year greater than {y}",
         "SELECT model FROM vehicles WHERE year > {y}",
         {"y": "year"}),
        ("total distance of trips for the vehicle with model {m}",
         "SELECT SUM(trips.distance) FROM trips JOIN vehicles "
         "ON trips.vehicle_id = vehicles.vehicle_id "
         "WHERE vehicles.model = '{m}'",
         {"m": "model"}),
        ("vehicle_id values with more than {c} trips",
         "SELECT vehicle_id, COUNT(*) FROM trips GROUP BY vehicle_id "
         "HAVING COUNT(*) > {c}",
         {"c": "cnt"}),
        ("models of vehicles with capacity less than {c}",
         "SELECT model FROM vehicles WHERE capacity < {c}",
         {"c": "capacity"}),
        ("highest distance of trips with hours less than {h}",
         "SELECT MAX(distance) FROM trips WHERE hours < {h}",
         {"h": "hours"}),
        ("models of the {k} vehicles with highest year",
         "SELECT model FROM vehicles ORDER BY year DESC LIMIT {k}",
         {"k": "k"}),
        ("capacity of the vehicle with model {m}",
         "SELECT capacity FROM vehicles WHERE model = '{m}'",
         {"m": "model"}),
        ("how many trips have distance greater than {d}",
         "SELECT COUNT(*) FROM trips WHERE distance > {d}",
         {"d": "distance"}),
    ],
}


def _column_values(db_path: str, table: str, column: str) -> list:
    result = execute(db_path, f"SELECT DISTINCT {column} FROM {table}")
    return sorted(row[0] for row in result.rows if row[0] is not None)


def _inner(values: list) -> list:
    """Middle of the distribution, so comparisons select nonempty slices."""
    if len(values) < 10:
        return values
    cut = len(values) // 5
    return values[cut:-cut]


def _fmt(value) -> str:
    if isinstance(value, float) and value == int(value):
        return str(int(value))
    return str(value)


def _pools(db_id: str, db_path: str) -> dict[str, list[str]]:
    p: dict[str, list] = {"k": [3, 4, 5, 6, 7, 8], "cnt": [2, 3, 4]}
    if db_id == "shop":
        p["cat"] = list(_CATEGORIES)
        p["name"] = [r[0] for r in execute(
            db_path, "SELECT DISTINCT products.name FROM products "
                     "JOIN orders ON orders.product_id = products.product_id").rows]
        p["price"] = _inner(_column_values(db_path, "products", "price"))
        p["stock"] = _inner(_column_values(db_path, "products", "stock"))
        p["day"] = _column_values(db_path, "orders", "day")
        p["qty"] = _inner(_column_values(db_path, "orders", "quantity"))
    elif db_id == "school":
        p["city"] = list(_CITIES)
        p["subj"] = list(_SUBJECTS)
        p["grade"] = _column_values(db_path, "students", "grade")
        p["age"] = _inner(_column_values(db_path, "students", "age"))
        p["points"] = _inner(_column_values(db_path, "marks", "points"))
    elif db_id == "fleet":
        p["kind"] = list(_KINDS)
        p["model"] = [r[0] for r in execute(
            db_path, "SELECT DISTINCT vehicles.model FROM vehicles "
                     "JOIN trips ON trips.vehicle_id = vehicles.vehicle_id").rows]
        p["year"] = _inner(_column_values(db_path, "vehicles", "year"))
        p["capacity"] = _inner(_column_values(db_path, "vehicles", "capacity"))
        p["distance"] = _inner(_column_values(db_path, "trips", "distance"))
        p["hours"] = _inner(_column_values(db_path, "trips", "hours"))
    return {key: [_fmt(v) for v in vals] for key, vals in p.items()}


def _informative(db_path: str, sql: str) -> bool:
    """Gold queries must return at least one non-null cell."""
    try:
        result = execute(db_path, sql)
    except ExecError:
        return False
    return any(any(cell is not None for cell in row) for row in result.rows)


def build_gold_corpus(db_paths: dict[str, str], seed: int = 2025,
                      per_template: int = 10, min_pairs: int = 200) -> Corpus:
    """Instantiate every template with seeded draws; keep informative pairs."""
    examples: list[Example] = []
    counter = 0
    for db_index, db_id in enumerate(sorted(_TEMPLATES)):
        db_path = db_paths[db_id]
        pools = _pools(db_id, db_path)
        for t_index, (q_tpl, s_tpl, param_pools) in enumerate(_TEMPLATES[db_id]):
            rng = np.random.default_rng([seed, db_index, t_index])
            seen: set[str] = set()
            kept = 0
            for _ in range(60):
                if kept >= per_template:
                    break
                params = {name: pools[pool][rng.integers(len(pools[pool]))]
                          for name, pool in param_pools.items()}
                sql = s_tpl.format(**params)
                if sql in seen:
                    continue
                seen.add(sql)
                if not _informative(db_path, sql):
                    continue
                counter += 1
                examples.append(Example(
                    id=f"{db_id}-{counter:04d}",
                    db_id=db_id,
                    question=q_tpl.format(**params),
                    sql=sql,
                    label=0,
                    source="gold",
                ))
                kept += 1
    corpus = Corpus(examples).validate()
    if len(corpus) < min_pairs:
        raise DataError(f"only {len(corpus)} synthetic pairs; need {min_pairs}")
    return corpus


def augment_corpus(gold: Corpus, db_paths: dict[str, str], seed: int = 2025,
                   budget: int = 6, np_ratio: float = 1.0) -> Corpus:
    """Gold corpus plus execution-verified mutants, balanced to the ratio."""
    merged: list[Example] = list(gold)
    for ex in gold:
        if ex.label != 0:
            continue
        merged.extend(generate_negatives(
            ex, db_paths[ex.db_id], SCHEMAS[ex.db_id], budget=budget,
            seed=derive_seed(seed, ex.id)))
    return balance(Corpus(merged).validate(), np_ratio, seed)


# --- the end-to-end experiment ----------------------------------------------

def _group_key(example_id: str) -> str:
    """Mutants share a group with the gold example they were derived from."""
    return example_id.split("/", 1)[0]


def _grouped_split(items: list, fraction: float,
                   rng: np.random.Generator) -> tuple[list, list]:
    """Split whole derivation groups, keeping input order; returns (big, small).

    A mutant differs from its gold twin by a single token, so example-level
    splits leak near-duplicates across the boundary and measure memorization
    instead of validation. Groups must stay on one side.
    """
    groups = sorted({_group_key(ex.id) for ex in items})
    order = rng.permutation(len(groups)).tolist()
    n_small = max(1, int(round(fraction * len(groups))))
    small_groups = {groups[i] for i in order[:n_small]}
    big = [ex for ex in items if _group_key(ex.id) not in small_groups]
    small = [ex for ex in items if _group_key(ex.id) in small_groups]
    return big, small


def localization_report(store, nmpnn_config: NmpnnConfig,
                        prepared: list[PreparedExample]) -> dict:
    """Mean normalized rank of the perturbed plan node (0 best, 1 worst).

    Rank uses midranks for ties and is normalized by (n - 1); single-node
    plans carry no ranking information and are skipped.
    """
    ranks = []
    for p in prepared:
        ex = p.example
        if ex.label != 1 or not ex.sublabels:
            continue
        true_nodes = [nid for nid, v in ex.sublabels.items() if v == 1]
        if len(true_nodes) != 1:
            continue
        n = len(p.hir.plan.nodes)
        if n < 2:
            continue
        scores = localize(store, p.h_question, p.hir, p.embeddings,
                          nmpnn_config).scores
        s_true = scores[true_nodes[0]]
        above = sum(1 for v in scores.values() if v > s_true)
        ties = sum(1 for v in scores.values() if v == s_true) - 1
        ranks.append((above + ties / 2.0) / (n - 1))
    if not ranks:
        raise DataError("no localizable examples (multi-node invalid plans)")
    return {"mean_normalized_rank": float(np.mean(ranks)),
            "n_localized": len(ranks)}


def run_experiment(workdir: str, seed: int = 2025,
                   nmpnn_config: NmpnnConfig | None = None,
                   train_config: TrainConfig | None = None,
                   per_template: int = 25, budget: int = 6,
                   verbose: bool = False, return_artifacts: bool = False):
    """Build toy data, augment, train, and score a held-out test split.

    The default widths and optimizer settings are tuned for this benchmark:
    a 96-dim model with a slow-but-long AdamW schedule. Message passing keeps
    its default dropout; the fusion head trains with a lighter rate.

    Returns the report dict; with ``return_artifacts=True``, returns
    ``(report, artifacts)`` where artifacts carries the trained store, the
    model config, and the prepared test split for further inspection.
    """
    nmpnn_config = nmpnn_config or NmpnnConfig(dim=96)
    train_config = train_config or TrainConfig(seed=seed, lr=3e-3, patience=40,
                                               max_epochs=300, dropout=0.15,
                                               weight_decay=1e-3)

    db_dir = os.path.join(workdir, "databases")
    db_paths = build_databases(db_dir)
    write_schema_bundle(os.path.join(workdir, "schemas.json"))
    gold = build_gold_corpus(db_paths, seed, per_template=per_template)
    write_corpus(gold, os.path.join(workdir, "gold.jsonl"))
    corpus = augment_corpus(gold, db_paths, seed, budget=budget)
    write_corpus(corpus, os.path.join(workdir, "corpus.jsonl"))

    rest, test = _grouped_split(list(corpus), 0.2,
                                np.random.default_rng([seed, 23]))
    train_raw, val_raw = _grouped_split(rest, 0.2,
                                        np.random.default_rng([seed, 29]))

    provider = BuiltinFeaturizer(nmpnn_config.dim)
    cache = EmbeddingCache()
    train_set = prepare_corpus(Corpus(train_raw), SCHEMAS, provider, cache)
    val_set = prepare_corpus(Corpus(val_raw), SCHEMAS, provider, cache)
    prepared_test = prepare_corpus(Corpus(test), SCHEMAS, provider, cache)

    store = init_model(nmpnn_config, seed)
    result = train(train_set, val_set, store, nmpnn_config, train_config,
                   verbose=verbose)

    test_scores = score_all(result.store, prepared_test, nmpnn_config)
    test_labels = [p.example.label for p in prepared_test]
    report = eval_report(test_scores, test_labels, result.threshold)
    report.update(localization_report(result.store, nmpnn_config, prepared_test))
    report.update({
        "n_gold": len(gold),
        "n_corpus": len(corpus),
        "n_train": len(train_set),
        "n_val": len(val_set),
        "n_test": len(test),
        "best_epoch": result.best_epoch,
        "best_val_auroc": result.best_val_auroc,
        "epochs_run": len(result.history),
    })
    if return_artifacts:
        artifacts = {
            "store": result.store,
            "threshold": result.threshold,
            "nmpnn_config": nmpnn_config,
            "train_config": train_config,
            "prepared_test": prepared_test,
            "test_scores": test_scores,
        }
        return report, artifacts
    return report
