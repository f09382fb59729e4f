"""Hierarchical representation: the logical plan plus one expression tree per node.

Attr strings are re-parsed with the frontend's expression grammar. Multi-item
attrs (Project, Sort, Aggregate) are grouped under a synthetic list-root so
each plan node owns exactly one tree; Scan attrs become a single Table leaf
and Limit attrs a single Literal. Scalar subqueries inside an attr are kept
as opaque scalar leaves (kind Literal, text = the parenthesized sub-select):
the statement-level AST keeps the real Subquery node, but at plan level the
sub-select behaves as a scalar value.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import SqlsemError
from .plan import LogicalPlan, LpNode, LpOp, lower
from .sqlast import (
    ExprAst,
    Kind,
    Schema,
    SqlAst,
    _freeze,
    _Parser,
    _render_select,
    _T,
    parse,
    tokenize,
)


class ExprParseError(SqlsemError):
    """A plan attr failed to re-parse; indicates a lowering bug."""


@dataclass(frozen=True)
class Hir:
    plan: LogicalPlan
    asts: dict[int, ExprAst]  # lp node id -> expression tree

    def ast_for(self, lp_id: int) -> ExprAst:
        return self.asts[lp_id]


class _AttrParser(_Parser):
    """Expression parser variant that folds subqueries into scalar leaves."""

    def parse_primary(self, sub: bool) -> _T:
        t = self.peek()
        if t.type == "op" and t.value == "(" and \
                self.peek(1).type == "kw" and self.peek(1).upper == "SELECT":
            self.next()
            inner = self.parse_select()
            self.expect_op(")")
            # canonical text round-trips because attrs are rendered canonically
            text = f"({_render_select_tree(inner)})"
            return _T(Kind.LITERAL, text)
        return super().parse_primary(True)


def _render_select_tree(tree: _T) -> str:
    return _render_select(_freeze(tree), 0)


def _parse_expr_list(text: str, *, sort_keys: bool = False,
                     aliases: bool = False) -> list[_T]:
    parser = _AttrParser(tokenize(text))
    items: list[_T] = []
    while True:
        if aliases:
            item = parser.parse_select_item()
        elif sort_keys:
            item = parser.parse_order_key()
        else:
            item = parser.parse_expr(allow_subquery=True)
        items.append(item)
        if parser.at_op(","):
            parser.next()
            continue
        break
    tail = parser.peek()
    if tail.type != "eof":
        raise ExprParseError(f"trailing input in attr {text!r} at offset {tail.pos}")
    return items


def _split_group_by(text: str) -> tuple[str, str | None]:
    """Split an Aggregate attr on its top-level GROUP BY, if any."""
    toks = tokenize(text)
    depth = 0
    for i, tok in enumerate(toks):
        if tok.type == "op" and tok.value == "(":
            depth += 1
        elif tok.type == "op" and tok.value == ")":
            depth -= 1
        elif depth == 0 and tok.type == "kw" and tok.upper == "GROUP" and \
                i + 1 < len(toks) and toks[i + 1].upper == "BY":
            keys_start = toks[i + 2].pos if i + 2 < len(toks) else len(text)
            return text[: tok.pos].strip(), text[keys_start:].strip()
    return text.strip(), None


def parse_attr(op: LpOp, attr: str) -> ExprAst:
    """Parse one plan node's attr into its expression tree."""
    try:
        if op is LpOp.SCAN:
            return _freeze(_T(Kind.TABLE, attr))
        if op is LpOp.LIMIT:
            return _freeze(_T(Kind.LITERAL, attr))
        if op in (LpOp.FILTER, LpOp.JOIN):
            (item,) = _parse_expr_list(attr)
            return _freeze(item)
        if op is LpOp.PROJECT:
            items = _parse_expr_list(attr, aliases=True)
            return _freeze(_T(Kind.LIST_ROOT, "list", items))
        if op is LpOp.SORT:
            items = _parse_expr_list(attr, sort_keys=True)
            return _freeze(_T(Kind.LIST_ROOT, "list", items))
        if op is LpOp.AGGREGATE:
            aggs_text, keys_text = _split_group_by(attr)
            items: list[_T] = []
            if aggs_text:
                items.extend(_parse_expr_list(aggs_text))
            if keys_text is not None:
                items.extend(_parse_expr_list(keys_text))
            return _freeze(_T(Kind.LIST_ROOT, "list", items))
    except ExprParseError:
        raise
    except SqlsemError as exc:
        raise ExprParseError(f"attr {attr!r} for {op.value}: {exc}") from exc
    raise ExprParseError(f"unknown op {op!r}")


def build_hir(plan: LogicalPlan, schema: Schema | None = None) -> Hir:
    """Attach one parsed expression tree to every plan node."""
    asts: dict[int, ExprAst] = {}
    for node in plan.nodes:
        try:
            asts[node.id] = parse_attr(node.op, node.attr)
        except ExprParseError as exc:
            raise ExprParseError(f"lp node {node.id}: {exc}") from exc
    return Hir(plan, asts)


def hir_from_sql(sql: str, schema: Schema | None = None, *, strict: bool = False) -> Hir:
    """Parse, lower, and build the HIR in one step."""
    ast = parse(sql, schema, strict=strict)
    return build_hir(lower(ast, schema), schema)


def hir_to_json(hir: Hir) -> dict:
    """JSON shape used by golden-file checks and the debug CLI output."""
    plan = hir.plan
    return {
        "root": plan.root,
        "nodes": [
            {"id": n.id, "op": n.op.value, "attr": n.attr}
            for n in plan.nodes
        ],
        "edges": [list(e) for e in plan.edges],
        "asts": {
            str(lp_id): {
                "root": ast.root,
                "nodes": [
                    {"id": a.id, "kind": a.kind.value, "text": a.text,
                     "children": list(a.children)}
                    for a in ast.nodes
                ],
            }
            for lp_id, ast in sorted(hir.asts.items())
        },
    }
