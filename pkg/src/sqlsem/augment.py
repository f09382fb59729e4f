"""Negative-pair synthesis by single-site AST mutation plus execution filtering.

Each rule produces at most one mutant per applicable site (the replacement is
a seeded draw), every mutant differs from its source in exactly one node's
text, and only mutants that execute and change the result survive. The plan
node whose attr contains the mutated site gets sublabel 1; all others 0.
"""
from __future__ import annotations

import hashlib
import logging
import sqlite3
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .corpus import Corpus, Example
from .errors import SqlsemError
from .exec_oracle import ExecError, GoldExecutionError, execute, results_equal
from .plan import LogicalPlan, lower
from .sqlast import (
    AGGREGATE_FUNCS,
    AstNode,
    Kind,
    Schema,
    SqlAst,
    parse,
    render,
    unquote_ident,
)

logger = logging.getLogger(__name__)


class NoApplicableSite(SqlsemError):
    """The rule found nothing to mutate in this statement."""


class SingleClassCorpus(SqlsemError):
    """Balancing requires both labels present."""


class MutationRule(str, Enum):
    OPERATOR_INVERSION = "operator-inversion"
    IDENTIFIER_SUBSTITUTION = "identifier-substitution"
    CONSTANT_REPLACEMENT = "constant-replacement"
    AGGREGATION_MUTATION = "aggregation-mutation"


ALL_RULES = tuple(MutationRule)

_INVERSIONS = {
    ">": "<=", "<=": ">", "<": ">=", ">=": "<",
    "=": "!=", "!=": "=", "<>": "=",
    "AND": "OR", "OR": "AND",
}


@dataclass(frozen=True)
class Mutant:
    sql: str
    rule: MutationRule
    ast_node_id: int
    lp_node_id: int
    source_id: str | None = None


def _with_text(ast: SqlAst, node_id: int, text: str) -> SqlAst:
    nodes = list(ast.nodes)
    old = nodes[node_id]
    nodes[node_id] = AstNode(old.id, old.kind, text, old.children)
    return SqlAst(ast.root, tuple(nodes))


def _condition_region_ids(ast: SqlAst) -> frozenset[int]:
    """Node ids inside WHERE/HAVING predicates and JOIN ON conditions."""
    ids: set[int] = set()
    for node in ast.walk():
        if node.kind in (Kind.WHERE, Kind.HAVING):
            ids |= ast.subtree_ids(node.children[0])
        elif node.kind is Kind.JOIN:
            ids |= ast.subtree_ids(node.children[2])
    return frozenset(ids)


def _table_bindings(ast: SqlAst) -> dict[str, str]:
    """Casefolded binding name (alias or table) -> schema table name."""
    bindings: dict[str, str] = {}
    for node in ast.walk():
        if node.kind is Kind.ALIAS:
            (child_id,) = node.children
            child = ast.node(child_id)
            if child.kind is Kind.TABLE:
                bindings[unquote_ident(node.text).casefold()] = child.text
        elif node.kind is Kind.TABLE:
            bindings.setdefault(unquote_ident(node.text).casefold(), node.text)
    return bindings


def _quote_if_needed(name: str) -> str:
    import re

    if re.fullmatch(r"[A-Za-z_][A-Za-z_0-9]*", name):
        return name
    return f"`{name}`"


def _column_pool(ast: SqlAst, node: AstNode, schema: Schema) -> list[str]:
    """Candidate replacement column names for one Column leaf."""
    bindings = _table_bindings(ast)
    text = node.text
    current: str
    if "." in text and not text.startswith(("`", '"')):
        qual, col = text.split(".", 1)
        current = unquote_ident(col).casefold()
        table_name = bindings.get(unquote_ident(qual).casefold())
        table = schema.table(table_name) if table_name else None
        if table is not None:
            return [c for c in table.columns if c.casefold() != current]
        return []
    current = unquote_ident(text).casefold()
    # unqualified: try the unique owning table first, else all bound tables
    owners = []
    for table_name in bindings.values():
        table = schema.table(table_name)
        if table is not None and current in (c.casefold() for c in table.columns):
            owners.append(table)
    pool: list[str] = []
    tables = owners if owners else [t for t in
                                    (schema.table(n) for n in bindings.values()) if t]
    for table in tables:
        for col in table.columns:
            if col.casefold() != current and col not in pool:
                pool.append(col)
    return pool


def _literal_column(ast: SqlAst, node_id: int, schema: Schema) -> tuple[str, str] | None:
    """(table, column) compared against this literal, when resolvable."""
    parent = None
    for candidate in ast.nodes:
        if node_id in candidate.children:
            parent = candidate
            break
    if parent is None or parent.kind is not Kind.BINARY_OP:
        return None
    other_id = parent.children[1] if parent.children[0] == node_id else parent.children[0]
    other = ast.node(other_id)
    if other.kind is not Kind.COLUMN:
        return None
    bindings = _table_bindings(ast)
    text = other.text
    if "." in text and not text.startswith(("`", '"')):
        qual, col = text.split(".", 1)
        table = bindings.get(unquote_ident(qual).casefold())
        return (table, unquote_ident(col)) if table else None
    col = unquote_ident(text)
    for table_name in bindings.values():
        table = schema.table(table_name)
        if table is not None and col.casefold() in (c.casefold() for c in table.columns):
            return (table_name, col)
    return None


def _distinct_values(db_path: str, table: str, column: str) -> list:
    try:
        conn = sqlite3.connect(f"file:{db_path}?mode=ro", uri=True)
        try:
            quoted_t = table.replace('"', '""')
            quoted_c = column.replace('"', '""')
            rows = conn.execute(
                f'SELECT DISTINCT "{quoted_c}" FROM "{quoted_t}" '
                f'WHERE "{quoted_c}" IS NOT NULL ORDER BY 1 LIMIT 200'
            ).fetchall()
        finally:
            conn.close()
    except sqlite3.Error:
        return []
    return [r[0] for r in rows]


def _format_literal(value) -> str:
    if isinstance(value, str):
        return "'" + value.replace("'", "''") + "'"
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)


def _literal_value(text: str):
    if text.startswith("'"):
        return text[1:-1].replace("''", "'")
    try:
        return int(text)
    except ValueError:
        return float(text)


def _sites(ast: SqlAst, rule: MutationRule, schema: Schema) -> list[AstNode]:
    condition_ids = _condition_region_ids(ast)
    sites: list[AstNode] = []
    for node in ast.nodes:  # pre-order: nodes are id-ordered
        if rule is MutationRule.OPERATOR_INVERSION:
            if node.kind is Kind.BINARY_OP and node.text.upper() in _INVERSIONS \
                    and node.id in condition_ids:
                sites.append(node)
        elif rule is MutationRule.IDENTIFIER_SUBSTITUTION:
            if node.kind in (Kind.COLUMN, Kind.TABLE):
                sites.append(node)
        elif rule is MutationRule.CONSTANT_REPLACEMENT:
            if node.kind is Kind.LITERAL and node.id in condition_ids \
                    and not node.text.startswith("("):
                sites.append(node)
        elif rule is MutationRule.AGGREGATION_MUTATION:
            if node.kind is Kind.FUNC_CALL and node.text.upper() in AGGREGATE_FUNCS:
                sites.append(node)
    return sites


def _replacement(ast: SqlAst, node: AstNode, rule: MutationRule, schema: Schema,
                 rng: np.random.Generator, db_path: str | None) -> str | None:
    if rule is MutationRule.OPERATOR_INVERSION:
        return _INVERSIONS[node.text.upper()]
    if rule is MutationRule.AGGREGATION_MUTATION:
        options = [f for f in AGGREGATE_FUNCS if f != node.text.upper()]
        return options[int(rng.integers(len(options)))]
    if rule is MutationRule.IDENTIFIER_SUBSTITUTION:
        if node.kind is Kind.TABLE:
            current = unquote_ident(node.text).casefold()
            pool = [t.name for t in schema.tables if t.name.casefold() != current]
            if not pool:
                return None
            return _quote_if_needed(pool[int(rng.integers(len(pool)))])
        pool = _column_pool(ast, node, schema)
        if not pool:
            return None
        replacement = _quote_if_needed(pool[int(rng.integers(len(pool)))])
        if "." in node.text and not node.text.startswith(("`", '"')):
            qual, _ = node.text.split(".", 1)
            return f"{qual}.{replacement}"
        return replacement
    if rule is MutationRule.CONSTANT_REPLACEMENT:
        current = _literal_value(node.text)
        if db_path is not None:
            located = _literal_column(ast, node.id, schema)
            if located is not None:
                values = [v for v in _distinct_values(db_path, located[0], located[1])
                          if v != current]
                if values:
                    return _format_literal(values[int(rng.integers(len(values)))])
        if isinstance(current, (int, float)) and not isinstance(current, bool):
            step = 1 if rng.integers(2) else -1
            return _format_literal(current + step)
        return None  # no plausible string pool without the database
    raise ValueError(f"unknown rule {rule!r}")


def mutate(ast: SqlAst, rule: MutationRule, schema: Schema, seed: int,
           db_path: str | None = None) -> list[Mutant]:
    """One mutant per applicable site; raises NoApplicableSite when none fit."""
    rng = np.random.default_rng([seed, list(MutationRule).index(rule)])
    mutants: list[Mutant] = []
    for node in _sites(ast, rule, schema):
        new_text = _replacement(ast, node, rule, schema, rng, db_path)
        if new_text is None or new_text == node.text:
            continue
        mutated = _with_text(ast, node.id, new_text)
        sql = render(mutated)
        try:
            reparsed = parse(sql, schema)
            plan = lower(reparsed, schema)
        except SqlsemError:
            continue  # mutation produced an unparseable lexeme; skip the site
        owner = plan.owner_of(node.id)
        if owner is None:
            continue
        mutants.append(Mutant(sql, rule, node.id, owner))
    if not mutants:
        raise NoApplicableSite(f"{rule.value}: no applicable site")
    return mutants


def derive_seed(seed: int, example_id: str) -> int:
    """Stable per-example seed stream, independent of corpus ordering."""
    blob = f"{seed}\x00{example_id}".encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:4], "big")


def generate_negatives(example: Example, db_path: str, schema: Schema,
                       rules=ALL_RULES, budget: int = 8,
                       seed: int = 0) -> list[Example]:
    """Execution-filtered invalid pairs derived from one gold example."""
    ast = parse(example.sql, schema)
    try:
        gold_result = execute(db_path, example.sql)
    except ExecError as exc:
        raise GoldExecutionError(f"gold query failed: {exc}") from exc

    kept: list[tuple[Mutant, LogicalPlan]] = []
    seen_sql: set[str] = set()
    for rule in rules:
        try:
            mutants = mutate(ast, rule, schema, seed, db_path)
        except NoApplicableSite:
            continue
        for mutant in mutants:
            if mutant.sql in seen_sql:
                continue
            seen_sql.add(mutant.sql)
            try:
                result = execute(db_path, mutant.sql)
            except ExecError:
                continue  # does not execute: useless as a semantic negative
            if results_equal(result, gold_result):
                continue  # same answer: not observably invalid
            plan = lower(parse(mutant.sql, schema), schema)
            kept.append((mutant, plan))

    if len(kept) > budget:
        rng = np.random.default_rng([seed, 1_000_003])
        chosen = rng.choice(len(kept), size=budget, replace=False)
        kept = [kept[i] for i in sorted(int(c) for c in chosen)]

    out = []
    for k, (mutant, plan) in enumerate(kept):
        sublabels = {n.id: (1 if n.id == mutant.lp_node_id else 0) for n in plan.nodes}
        out.append(Example(
            id=f"{example.id}/aug-{mutant.rule.value}-{mutant.ast_node_id}",
            db_id=example.db_id,
            question=example.question,
            sql=mutant.sql,
            label=1,
            source="ast-aug",
            sublabels=sublabels,
        ))
    return out


def balance(corpus: Corpus, target_ratio: float = 1.0, seed: int = 0) -> Corpus:
    """Subsample the overrepresented class toward |neg| = ratio * |pos|.

    Positives here are invalid pairs (label 1 = N), negatives-of-interest the
    valid ones (label 0 = P); the ratio is N/P. Order of survivors follows the
    input corpus, so output bytes are stable for a fixed seed.
    """
    if target_ratio <= 0:
        raise ValueError("target_ratio must be positive")
    inv_idx = [i for i, ex in enumerate(corpus) if ex.label == 1]
    val_idx = [i for i, ex in enumerate(corpus) if ex.label == 0]
    if not inv_idx or not val_idx:
        raise SingleClassCorpus("balance needs both labels present")
    rng = np.random.default_rng(seed)
    n_inv, n_val = len(inv_idx), len(val_idx)
    keep = set(range(len(corpus.examples)))
    if n_inv > target_ratio * n_val:
        want = max(1, round(target_ratio * n_val))
        drop = rng.choice(n_inv, size=n_inv - want, replace=False)
        keep -= {inv_idx[i] for i in drop.tolist()}
        n_inv = want
    elif n_inv < target_ratio * n_val:
        want = max(1, round(n_inv / target_ratio))
        if want < n_val:
            drop = rng.choice(n_val, size=n_val - want, replace=False)
            keep -= {val_idx[i] for i in drop.tolist()}
            n_val = want
    achieved = n_inv / n_val
    if abs(achieved - target_ratio) > 0.25 * target_ratio:
        logger.warning(
            "balance: corpus too small to hit ratio %.2f (achieved %.2f with "
            "%d invalid vs %d valid); proceeding unbalanced",
            target_ratio, achieved, n_inv, n_val)
    return Corpus([ex for i, ex in enumerate(corpus.examples) if i in keep])
