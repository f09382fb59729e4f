"""Command-line surface: ingest, augment, train, eval, validate, localize.

Exit codes: 0 success, 2 usage error (wrong flags), 3 data error, 4 embedding
provider unavailable. Failures print one JSON object to stderr:
`{"error": "<class>", "message": "<detail>"}`.
"""
from __future__ import annotations

import functools
import json
import os
import sys
from dataclasses import replace

import click

from .augment import balance, derive_seed, generate_negatives
from .config import Config, load_config
from .corpus import Corpus, Example, read_corpus, write_corpus
from .errors import DataError, SqlsemError
from .exec_oracle import GoldExecutionError, label_by_execution
from .featurize import (
    BuiltinFeaturizer,
    EmbeddingCache,
    ProviderUnavailable,
    RemoteProvider,
    embed_hir,
    embed_question,
)
from .hir import build_hir
from .metrics import eval_report
from .plan import lower
from .sqlast import Schema, parse, render
from .validator import (
    init_model,
    load_checkpoint,
    localize,
    predict,
    prepare_corpus,
    save_checkpoint,
    split_train_val,
    train as train_model,
)

_WILDCARD = None  # schema key meaning "applies to every db_id"


def _die(exc: BaseException, code: int) -> None:
    sys.stderr.write(json.dumps({"error": type(exc).__name__,
                                 "message": str(exc)}) + "\n")
    raise SystemExit(code)


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except ProviderUnavailable as exc:
            _die(exc, 4)
        except (SqlsemError, OSError, ValueError) as exc:
            _die(exc, 3)
    return wrapper


def _emit(obj: dict, out_path: str | None = None) -> None:
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    click.echo(text, nl=False)


# --- schema / database plumbing --------------------------------------------

def _load_schemas(path: str | None) -> dict:
    """One schema for all databases, or a map keyed by db_id.

    Accepts either a plain schema object `{"tables": [...]}` or a bundle
    `{"databases": [{"db_id": ..., "tables": [...]}, ...]}`.
    """
    if path is None:
        raise DataError("this command requires --schema")
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"schema {path}: invalid JSON: {exc}") from exc
    if isinstance(obj, dict) and "databases" in obj:
        extra = set(obj) - {"databases"}
        if extra:
            raise DataError(f"schema {path}: unknown top-level key(s) {sorted(extra)}")
        out: dict = {}
        for entry in obj["databases"]:
            db_id = entry.get("db_id")
            if not isinstance(db_id, str) or not db_id:
                raise DataError(f"schema {path}: database entry missing db_id")
            if db_id in out:
                raise DataError(f"schema {path}: duplicate db_id {db_id!r}")
            rest = {k: v for k, v in entry.items() if k != "db_id"}
            out[db_id] = Schema.from_json(rest)
        if not out:
            raise DataError(f"schema {path}: empty databases list")
        return out
    return {_WILDCARD: Schema.from_json(obj)}


def _schema_for(schemas: dict, db_id: str) -> Schema:
    if db_id in schemas:
        return schemas[db_id]
    if _WILDCARD in schemas:
        return schemas[_WILDCARD]
    raise DataError(f"no schema for db_id {db_id!r}")


def _only_db_id(schemas: dict, db_id: str | None) -> str:
    if db_id is not None:
        return db_id
    keys = [k for k in schemas if k is not None]
    if len(keys) == 1:
        return keys[0]
    if not keys:
        return ""  # wildcard schema: db_id is irrelevant
    raise DataError("schema bundle has several databases; pass --db-id")


def _db_path(db_arg: str | None, db_id: str) -> str:
    """--db names either one SQLite file or a directory of <db_id>.sqlite."""
    if db_arg is None:
        raise DataError("this command requires --db")
    if os.path.isdir(db_arg):
        path = os.path.join(db_arg, f"{db_id}.sqlite")
        if not os.path.exists(path):
            raise DataError(f"no database file {path} for db_id {db_id!r}")
        return path
    if not os.path.exists(db_arg):
        raise DataError(f"database {db_arg} does not exist")
    return db_arg


def _provider_for(cfg: Config, provider_url: str | None):
    if provider_url:
        cfg = replace(cfg, provider_kind="remote", provider_url=provider_url)
    return cfg.make_provider()


def _provider_from_checkpoint(ckpt, cfg: Config, provider_url: str | None):
    """Rebuild the embedding provider a checkpoint was trained with."""
    name = ckpt.provider_name
    if name.startswith("builtin-hash-"):
        try:
            dim = int(name.rsplit("-", 1)[1])
        except ValueError as exc:
            raise DataError(f"malformed provider name in checkpoint: {name!r}") from exc
        return BuiltinFeaturizer(dim)
    url = provider_url or os.environ.get("SQLSEM_PROVIDER_URL") or cfg.provider_url
    if not url:
        raise DataError(f"checkpoint was trained with {name!r}; pass --provider-url")
    provider = RemoteProvider(url, cfg.provider_timeout)
    if provider.dim != ckpt.nmpnn_config.dim:
        raise DataError(f"provider dim {provider.dim} != checkpoint dim "
                        f"{ckpt.nmpnn_config.dim}")
    return provider


def _schemas_for_corpus(corpus: Corpus, schemas: dict) -> dict[str, Schema]:
    return {ex.db_id: _schema_for(schemas, ex.db_id) for ex in corpus}


# --- commands ---------------------------------------------------------------

@click.group()
def main():
    """Semantic validation of question/SQL pairs."""


_config_opt = click.option("--config", "config_path", type=click.Path(), default=None,
                           help="JSON config file.")
_seed_opt = click.option("--seed", type=int, default=None,
                         help="Override the configured random seed.")
_schema_opt = click.option("--schema", "schema_path", type=click.Path(), default=None,
                           help="Schema JSON (single schema or db_id bundle).")
_db_opt = click.option("--db", "db_arg", type=click.Path(), default=None,
                       help="SQLite file, or directory of <db_id>.sqlite files.")
_provider_opt = click.option("--provider-url", default=None,
                             help="Remote embedding service base URL.")


@main.command()
@click.option("--in", "in_path", type=click.Path(), required=True,
              help="Input corpus (JSON Lines).")
@click.option("--out", "out_path", type=click.Path(), required=True,
              help="Normalized corpus to write.")
@click.option("--gold", "gold_path", type=click.Path(), default=None,
              help="Labeled gold corpus used to look up reference SQL "
                   "by (db_id, question) for unlabeled candidates.")
@click.option("--timeout-ms", type=int, default=5000, show_default=True)
@_schema_opt
@_db_opt
@_config_opt
@_handle_errors
def ingest(in_path, out_path, gold_path, timeout_ms, schema_path, db_arg,
           config_path):
    """Validate and normalize a corpus; label unlabeled candidates by execution.

    Lines without a label need reference SQL — either a `gold_sql` field on
    the line or a --gold corpus — plus --db to execute against. Rows whose SQL
    falls outside the supported subset are dropped and counted.
    """
    cfg = load_config(config_path)
    schemas = _load_schemas(schema_path) if schema_path else None
    gold_lookup: dict[tuple[str, str], str] = {}
    if gold_path:
        for ex in read_corpus(gold_path):
            if ex.label == 0:
                gold_lookup[(ex.db_id, ex.question)] = ex.sql

    kept: list[Example] = []
    counts = {"read": 0, "kept": 0, "labeled": 0, "dropped_unparseable": 0,
              "dropped_no_gold": 0, "dropped_not_executable": 0,
              "dropped_gold_failed": 0}
    with open(in_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            counts["read"] += 1
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{in_path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise DataError(f"{in_path}:{lineno}: each line must be an object")
            gold_sql = obj.pop("gold_sql", None)
            obj.setdefault("source", "gold" if obj.get("label") is not None else "llm")
            example = Example.from_dict(obj)

            schema = _schema_for(schemas, example.db_id) if schemas else None
            try:
                parse(example.sql, schema, strict=cfg.strict_identifiers)
            except SqlsemError:
                counts["dropped_unparseable"] += 1
                continue

            if example.label is None:
                reference = gold_sql or gold_lookup.get(
                    (example.db_id, example.question))
                if reference is None:
                    counts["dropped_no_gold"] += 1
                    continue
                db = _db_path(db_arg, example.db_id)
                try:
                    label = label_by_execution(example.sql, reference, db,
                                               timeout_ms)
                except GoldExecutionError:
                    counts["dropped_gold_failed"] += 1
                    continue
                if label is None:
                    counts["dropped_not_executable"] += 1
                    continue
                example = replace(example, label=label)
                counts["labeled"] += 1
            kept.append(example)

    counts["kept"] = len(kept)
    write_corpus(Corpus(kept), out_path)
    _emit(counts)


@main.command()
@click.option("--in", "in_path", type=click.Path(), required=True,
              help="Labeled corpus with gold (label 0) examples.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--np-ratio", type=float, default=None,
              help="Target invalid/valid ratio after balancing.")
@click.option("--budget", type=int, default=None,
              help="Max negatives kept per gold example.")
@_schema_opt
@_db_opt
@_seed_opt
@_config_opt
@_handle_errors
def augment(in_path, out_path, np_ratio, budget, schema_path, db_arg, seed,
            config_path):
    """Generate execution-verified invalid pairs by AST mutation, then balance."""
    cfg = load_config(config_path)
    seed = cfg.train.seed if seed is None else seed
    np_ratio = cfg.np_ratio if np_ratio is None else np_ratio
    budget = cfg.augment_budget if budget is None else budget
    schemas = _load_schemas(schema_path)
    corpus = read_corpus(in_path)

    merged: list[Example] = list(corpus)
    counts = {"gold": 0, "generated": 0, "skipped_gold_failed": 0,
              "skipped_unparseable": 0}
    for ex in corpus:
        if ex.label != 0:
            continue
        counts["gold"] += 1
        schema = _schema_for(schemas, ex.db_id)
        db = _db_path(db_arg, ex.db_id)
        try:
            negatives = generate_negatives(ex, db, schema, budget=budget,
                                           seed=derive_seed(seed, ex.id))
        except GoldExecutionError:
            counts["skipped_gold_failed"] += 1
            continue
        except SqlsemError:
            counts["skipped_unparseable"] += 1
            continue
        merged.extend(negatives)
        counts["generated"] += len(negatives)

    balanced = balance(Corpus(merged), np_ratio, seed)
    write_corpus(balanced, out_path)
    n_inv = sum(1 for ex in balanced if ex.label == 1)
    n_val = sum(1 for ex in balanced if ex.label == 0)
    counts.update({"written": len(balanced.examples), "invalid": n_inv,
                   "valid": n_val})
    _emit(counts)


@main.command()
@click.option("--in", "in_path", type=click.Path(), required=True,
              help="Labeled training corpus.")
@click.option("--val", "val_path", type=click.Path(), default=None,
              help="Labeled validation corpus (default: seeded 80/20 split).")
@click.option("--out", "out_path", type=click.Path(), required=True,
              help="Checkpoint file to write.")
@_schema_opt
@_provider_opt
@_seed_opt
@_config_opt
@_handle_errors
def train(in_path, val_path, out_path, schema_path, provider_url, seed,
          config_path):
    """Train the validator and write a checkpoint."""
    cfg = load_config(config_path)
    if seed is not None:
        cfg.train = replace(cfg.train, seed=seed)
    provider = _provider_for(cfg, provider_url)
    if provider.dim != cfg.nmpnn.dim:
        raise DataError(f"provider dim {provider.dim} != model dim {cfg.nmpnn.dim}")
    schemas = _load_schemas(schema_path)
    cache = EmbeddingCache()

    corpus = read_corpus(in_path)
    prepared = prepare_corpus(corpus, _schemas_for_corpus(corpus, schemas),
                              provider, cache)
    if val_path:
        val_corpus = read_corpus(val_path)
        val_set = prepare_corpus(val_corpus,
                                 _schemas_for_corpus(val_corpus, schemas),
                                 provider, cache)
        train_set = prepared
    else:
        train_set, val_set = split_train_val(prepared, cfg.train.seed)

    store = init_model(cfg.nmpnn, cfg.train.seed)
    result = train_model(train_set, val_set, store, cfg.nmpnn, cfg.train)
    meta = {
        "best_epoch": result.best_epoch,
        "best_val_auroc": result.best_val_auroc,
        "epochs_run": len(result.history),
        "n_train": len(train_set),
        "n_val": len(val_set),
    }
    save_checkpoint(out_path, result.store, cfg.nmpnn, cfg.train,
                    result.threshold, provider.name, meta)
    _emit({"checkpoint": out_path, "threshold": result.threshold, **meta})


@main.command(name="eval")
@click.option("--in", "in_path", type=click.Path(), required=True,
              help="Labeled corpus to score.")
@click.option("--checkpoint", "ckpt_path", type=click.Path(), required=True)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Also write the report JSON here.")
@_schema_opt
@_provider_opt
@_config_opt
@_handle_errors
def eval_cmd(in_path, ckpt_path, out_path, schema_path, provider_url,
             config_path):
    """Score a labeled corpus against a checkpoint and report metrics."""
    cfg = load_config(config_path)
    ckpt = load_checkpoint(ckpt_path)
    provider = _provider_from_checkpoint(ckpt, cfg, provider_url)
    schemas = _load_schemas(schema_path)
    cache = EmbeddingCache()

    corpus = read_corpus(in_path)
    prepared = prepare_corpus(corpus, _schemas_for_corpus(corpus, schemas),
                              provider, cache)
    scores = [predict(ckpt.store, p.h_question, p.hir, p.embeddings,
                      ckpt.nmpnn_config) for p in prepared]
    labels = [p.example.label for p in prepared]
    report = eval_report(scores, labels, ckpt.threshold)
    _emit(report, out_path)


def _prepare_pair(question, sql, ckpt, cfg, schema_path, db_id, provider_url):
    schemas = _load_schemas(schema_path)
    db_id = _only_db_id(schemas, db_id)
    schema = _schema_for(schemas, db_id)
    provider = _provider_from_checkpoint(ckpt, cfg, provider_url)
    ast = parse(sql, schema, strict=cfg.strict_identifiers)
    hir = build_hir(lower(ast, schema), schema)
    h_q = embed_question(provider, question, schema)
    embeddings = embed_hir(provider, hir, render(ast), schema)
    return schema, hir, h_q, embeddings


@main.command()
@click.argument("question")
@click.argument("sql")
@click.option("--checkpoint", "ckpt_path", type=click.Path(), required=True)
@click.option("--db-id", default=None,
              help="Which database the pair targets (schema bundles only).")
@_schema_opt
@_provider_opt
@_config_opt
@_handle_errors
def validate(question, sql, ckpt_path, db_id, schema_path, provider_url,
             config_path):
    """Score one question/SQL pair and print the verdict."""
    cfg = load_config(config_path)
    ckpt = load_checkpoint(ckpt_path)
    _, hir, h_q, embeddings = _prepare_pair(question, sql, ckpt, cfg,
                                            schema_path, db_id, provider_url)
    score = predict(ckpt.store, h_q, hir, embeddings, ckpt.nmpnn_config)
    _emit({
        "score": score,
        "threshold": ckpt.threshold,
        "verdict": "invalid" if score >= ckpt.threshold else "valid",
    })


@main.command(name="localize")
@click.argument("question")
@click.argument("sql")
@click.option("--checkpoint", "ckpt_path", type=click.Path(), required=True)
@click.option("--db-id", default=None,
              help="Which database the pair targets (schema bundles only).")
@click.option("--out", "out_path", type=click.Path(), default=None)
@_schema_opt
@_provider_opt
@_config_opt
@_handle_errors
def localize_cmd(question, sql, ckpt_path, db_id, out_path, schema_path,
                 provider_url, config_path):
    """Print per-plan-node invalidity scores and the most suspect sub-SQL."""
    cfg = load_config(config_path)
    ckpt = load_checkpoint(ckpt_path)
    schema, hir, h_q, embeddings = _prepare_pair(question, sql, ckpt, cfg,
                                                 schema_path, db_id,
                                                 provider_url)
    result = localize(ckpt.store, h_q, hir, embeddings, ckpt.nmpnn_config,
                      schema)
    _emit(result.payload, out_path)


if __name__ == "__main__":
    main()
