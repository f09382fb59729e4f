"""Deterministic lowering of parsed SQL into a logical operator plan.

The lowering is purely structural (no cost model, no rewrites): Scan nodes for
the FROM sources, Joins left-deep in FROM order, a Filter for WHERE, an
Aggregate for GROUP BY plus every aggregate call the block uses, a Filter
above the Aggregate for HAVING, then Project, Sort and Limit. A node appears
only when its clause does, except Project, which is always present so every
query block has a uniform spine. Derived tables (including inlined WITH
clauses) lower recursively into subtrees feeding the outer operators.

Every node's ``attr`` is a canonical expression string that the expression
parser can re-parse; ``render_subsql`` rebuilds an executable SELECT for the
relation computed at any node, which is what execution-based checks run.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .errors import SqlsemError
from .sqlast import (
    AGGREGATE_FUNCS,
    AstNode,
    Kind,
    Schema,
    SqlAst,
    render_expr,
)


class LoweringError(SqlsemError):
    """Internal consistency failure while building a plan."""


class LpOp(str, Enum):
    SCAN = "Scan"
    FILTER = "Filter"
    JOIN = "Join"
    AGGREGATE = "Aggregate"
    PROJECT = "Project"
    SORT = "Sort"
    LIMIT = "Limit"


@dataclass(frozen=True)
class LpNode:
    id: int
    op: LpOp
    attr: str
    # structural extras: FROM alias for Scan / derived roots, join type,
    # and the split Aggregate attr used when rendering sub-SQL
    alias: str | None = None
    join_type: str | None = None
    subquery_alias: str | None = None
    agg_exprs: tuple[str, ...] = ()
    group_keys: tuple[str, ...] = ()
    # ids of the SqlAst nodes this operator owns (sublabel attribution)
    src_ids: frozenset[int] = frozenset()


@dataclass(frozen=True)
class LogicalPlan:
    """Operator DAG; edges are (input_id, consumer_id) in input order."""

    nodes: tuple[LpNode, ...]
    edges: tuple[tuple[int, int], ...]
    root: int

    def node(self, node_id: int) -> LpNode:
        return self.nodes[node_id]

    def inputs(self, node_id: int) -> tuple[int, ...]:
        return tuple(src for src, dst in self.edges if dst == node_id)

    def owner_of(self, ast_id: int) -> int | None:
        for node in self.nodes:
            if ast_id in node.src_ids:
                return node.id
        return None


class _Builder:
    def __init__(self, ast: SqlAst):
        self.ast = ast
        self.nodes: list[dict] = []
        self.edges: list[tuple[int, int]] = []

    def add(self, op: LpOp, attr: str, inputs: tuple[int, ...] = (), **extras) -> int:
        nid = len(self.nodes)
        self.nodes.append({"id": nid, "op": op, "attr": attr, **extras})
        for src in inputs:
            self.edges.append((src, nid))
        return nid

    def claim(self, nid: int, ast_ids) -> None:
        ids = self.nodes[nid].setdefault("src_ids", set())
        ids.update(ast_ids)

    def finalize(self, root: int) -> LogicalPlan:
        claimed: set[int] = set()
        nodes = []
        for spec in self.nodes:
            src = frozenset(spec.pop("src_ids", set()) - claimed)
            claimed.update(src)
            nodes.append(LpNode(src_ids=src, **spec))
        return LogicalPlan(tuple(nodes), tuple(self.edges), root)


def _clause(ast: SqlAst, select_id: int, kind: Kind) -> AstNode | None:
    for child in ast.children(select_id):
        if child.kind is kind:
            return child
    return None


def _select_items(ast: SqlAst, select_id: int) -> list[AstNode]:
    clause_kinds = (Kind.FROM, Kind.WHERE, Kind.GROUP_BY, Kind.HAVING,
                    Kind.ORDER_BY, Kind.LIMIT)
    return [c for c in ast.children(select_id) if c.kind not in clause_kinds]


def _collect_aggregates(ast: SqlAst, node_id: int, out: list[int]) -> None:
    """Aggregate-call node ids under node_id, skipping scalar subqueries."""
    node = ast.node(node_id)
    if node.kind is Kind.SUBQUERY:
        return
    if node.kind is Kind.FUNC_CALL and node.text.upper() in AGGREGATE_FUNCS:
        out.append(node_id)
        return
    for child in node.children:
        _collect_aggregates(ast, child, out)


def _lower_from(b: _Builder, node_id: int) -> int:
    ast = b.ast
    node = ast.node(node_id)
    if node.kind is Kind.TABLE:
        nid = b.add(LpOp.SCAN, node.text)
        b.claim(nid, [node.id])
        return nid
    if node.kind is Kind.ALIAS:
        (child_id,) = node.children
        child = ast.node(child_id)
        if child.kind is Kind.TABLE:
            nid = b.add(LpOp.SCAN, child.text, alias=node.text)
            b.claim(nid, [node.id, child.id])
            return nid
        if child.kind is Kind.SUBQUERY:
            inner_root = _lower_select(b, child.children[0])
            b.nodes[inner_root]["subquery_alias"] = node.text
            b.claim(inner_root, [node.id, child.id])
            return inner_root
    if node.kind is Kind.JOIN:
        left_id, right_id, cond_id = node.children
        left = _lower_from(b, left_id)
        right = _lower_from(b, right_id)
        nid = b.add(LpOp.JOIN, render_expr(ast, cond_id), (left, right),
                    join_type=node.text)
        b.claim(nid, ast.subtree_ids(cond_id) | {node.id})
        return nid
    raise LoweringError(f"unexpected FROM node kind {node.kind}")


def _lower_select(b: _Builder, select_id: int) -> int:
    ast = b.ast
    from_clause = _clause(ast, select_id, Kind.FROM)
    if from_clause is None:
        raise LoweringError("SELECT without FROM")
    current = _lower_from(b, from_clause.children[0])
    b.claim(current, [from_clause.id])

    where = _clause(ast, select_id, Kind.WHERE)
    if where is not None:
        pred = where.children[0]
        current = b.add(LpOp.FILTER, render_expr(ast, pred), (current,))
        b.claim(current, ast.subtree_ids(pred) | {where.id})

    items = _select_items(ast, select_id)
    group = _clause(ast, select_id, Kind.GROUP_BY)
    having = _clause(ast, select_id, Kind.HAVING)
    order = _clause(ast, select_id, Kind.ORDER_BY)
    limit = _clause(ast, select_id, Kind.LIMIT)

    agg_ids: list[int] = []
    for item in items:
        _collect_aggregates(ast, item.id, agg_ids)
    if having is not None:
        _collect_aggregates(ast, having.children[0], agg_ids)
    if order is not None:
        for key in order.children:
            _collect_aggregates(ast, key, agg_ids)

    if group is not None or agg_ids:
        agg_texts: list[str] = []
        agg_src: set[int] = set()
        for aid in agg_ids:
            text = render_expr(ast, aid)
            if text not in agg_texts:
                agg_texts.append(text)
            agg_src |= ast.subtree_ids(aid)
        key_texts = []
        key_src: set[int] = {group.id} if group is not None else set()
        if group is not None:
            for key in group.children:
                key_texts.append(render_expr(ast, key))
                key_src |= ast.subtree_ids(key)
        attr = ", ".join(agg_texts)
        if key_texts:
            attr = (attr + " " if attr else "") + "GROUP BY " + ", ".join(key_texts)
        current = b.add(LpOp.AGGREGATE, attr, (current,),
                        agg_exprs=tuple(agg_texts), group_keys=tuple(key_texts))
        b.claim(current, agg_src | key_src)

    if having is not None:
        pred = having.children[0]
        current = b.add(LpOp.FILTER, render_expr(ast, pred), (current,))
        b.claim(current, ast.subtree_ids(pred) | {having.id})

    item_texts = [render_expr(ast, item.id) for item in items]
    project = b.add(LpOp.PROJECT, ", ".join(item_texts), (current,))
    item_src: set[int] = {select_id}
    for item in items:
        item_src |= ast.subtree_ids(item.id)
    b.claim(project, item_src)
    current = project

    if order is not None:
        key_texts = [render_expr(ast, key) for key in order.children]
        current = b.add(LpOp.SORT, ", ".join(key_texts), (current,))
        src: set[int] = {order.id}
        for key in order.children:
            src |= ast.subtree_ids(key)
        b.claim(current, src)

    if limit is not None:
        count = ast.node(limit.children[0])
        current = b.add(LpOp.LIMIT, count.text, (current,))
        b.claim(current, {limit.id, count.id})

    return current


def lower(ast: SqlAst, schema: Schema | None = None) -> LogicalPlan:
    """Lower a parsed statement into its canonical logical plan."""
    b = _Builder(ast)
    root = _lower_select(b, ast.root)
    return b.finalize(root)


# --- sub-SQL rendering --------------------------------------------------------


def _render_from_fragment(plan: LogicalPlan, node_id: int) -> str:
    node = plan.node(node_id)
    if node.subquery_alias is not None:
        return f"({render_subsql(plan, node_id)}) AS {node.subquery_alias}"
    if node.op is LpOp.SCAN:
        return node.attr if node.alias is None else f"{node.attr} AS {node.alias}"
    if node.op is LpOp.JOIN:
        left, right = plan.inputs(node_id)
        return (
            f"{_render_from_fragment(plan, left)} {node.join_type} JOIN "
            f"{_render_from_fragment(plan, right)} ON {node.attr}"
        )
    raise LoweringError(f"node {node_id} ({node.op}) cannot appear in FROM")


def render_subsql(plan: LogicalPlan, node_id: int, schema: Schema | None = None) -> str:
    """Executable SELECT computing exactly the relation produced at node_id.

    Walks the canonical operator spine downward from the node, collecting the
    clauses present below it; cutting below Project yields ``SELECT *`` (or
    the Aggregate's keys and calls when cutting at the Aggregate/HAVING level).
    """
    select_list: str | None = None
    having: str | None = None
    aggregate: LpNode | None = None
    where: str | None = None
    order: str | None = None
    limit: str | None = None
    at_top = True
    current = plan.node(node_id)
    while True:
        if current.subquery_alias is not None and not at_top:
            from_sql = f"({render_subsql(plan, current.id)}) AS {current.subquery_alias}"
            break
        op = current.op
        if op in (LpOp.SCAN, LpOp.JOIN):
            from_sql = _render_from_fragment(plan, current.id)
            break
        (input_id,) = plan.inputs(current.id)
        if op is LpOp.LIMIT:
            limit = current.attr
        elif op is LpOp.SORT:
            order = current.attr
        elif op is LpOp.PROJECT:
            select_list = current.attr
        elif op is LpOp.AGGREGATE:
            aggregate = current
        elif op is LpOp.FILTER:
            if plan.node(input_id).op is LpOp.AGGREGATE:
                having = current.attr
            else:
                where = current.attr
        else:
            raise LoweringError(f"unexpected op {op} on the plan spine")
        current = plan.node(input_id)
        at_top = False

    if select_list is None:
        if aggregate is not None:
            select_list = ", ".join(aggregate.group_keys + aggregate.agg_exprs)
        else:
            select_list = "*"
    parts = [f"SELECT {select_list}", f"FROM {from_sql}"]
    if where is not None:
        parts.append(f"WHERE {where}")
    if aggregate is not None and aggregate.group_keys:
        parts.append("GROUP BY " + ", ".join(aggregate.group_keys))
    if having is not None:
        parts.append(f"HAVING {having}")
    if order is not None:
        parts.append(f"ORDER BY {order}")
    if limit is not None:
        parts.append(f"LIMIT {limit}")
    return " ".join(parts)


# --- debug printer ------------------------------------------------------------


def _node_label(node: LpNode) -> str:
    if node.op is LpOp.SCAN:
        table = node.attr if node.alias is None else f"{node.attr} AS {node.alias}"
        return f"LogicalTableScan(table=[[{table}]])"
    if node.op is LpOp.FILTER:
        return f"LogicalFilter(condition=[{node.attr}])"
    if node.op is LpOp.JOIN:
        join_type = (node.join_type or "inner").lower()
        return f"LogicalJoin(condition=[{node.attr}], joinType=[{join_type}])"
    if node.op is LpOp.AGGREGATE:
        group = ", ".join(node.group_keys)
        aggs = ", ".join(node.agg_exprs)
        return f"LogicalAggregate(group=[{{{group}}}], aggs=[{aggs}])"
    if node.op is LpOp.PROJECT:
        return f"LogicalProject(exprs=[{node.attr}])"
    if node.op is LpOp.SORT:
        return f"LogicalSort(sort=[{node.attr}])"
    if node.op is LpOp.LIMIT:
        return f"LogicalLimit(fetch=[{node.attr}])"
    raise LoweringError(f"unknown op {node.op}")


def format_plan(plan: LogicalPlan) -> str:
    """Indented one-node-per-line rendering of the plan, root first."""
    lines: list[str] = []

    def visit(node_id: int, depth: int) -> None:
        node = plan.node(node_id)
        label = _node_label(node)
        if node.subquery_alias is not None:
            label += f" [derived AS {node.subquery_alias}]"
        lines.append("  " * depth + label)
        for input_id in plan.inputs(node_id):
            visit(input_id, depth + 1)

    visit(plan.root, 0)
    return "\n".join(lines)
