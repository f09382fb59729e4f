"""Lowering contracts: canonical operator order, sub-SQL rendering, execution
equivalence against the seeded fixture database, and the debug printer."""
import pytest

from sqlsem.exec_oracle import execute, results_equal
from sqlsem.plan import LpOp, format_plan, lower, render_subsql
from sqlsem.sqlast import parse

from .sqlfixtures import FIXTURE_QUERIES


def _ops(plan):
    return [n.op for n in plan.nodes]


def test_minimal_lowering_shape():
    plan = lower(parse("SELECT a FROM t"))
    assert _ops(plan) == [LpOp.SCAN, LpOp.PROJECT]
    assert plan.nodes[0].attr == "t"
    assert plan.nodes[1].attr == "a"
    assert plan.root == 1


def test_filter_lowering_shape():
    plan = lower(parse("SELECT name FROM emp WHERE age > 30"))
    assert _ops(plan) == [LpOp.SCAN, LpOp.FILTER, LpOp.PROJECT]
    assert plan.nodes[1].attr == "age > 30"


def test_full_clause_order():
    plan = lower(parse(
        "SELECT dept_id, COUNT(*) FROM emp GROUP BY dept_id "
        "HAVING COUNT(*) > 2 ORDER BY dept_id LIMIT 2"))
    assert _ops(plan) == [LpOp.SCAN, LpOp.AGGREGATE, LpOp.FILTER,
                          LpOp.PROJECT, LpOp.SORT, LpOp.LIMIT]
    # HAVING becomes the Filter sitting directly above the Aggregate
    assert (1, 2) in plan.edges
    assert plan.root == 5


def test_join_is_left_deep_in_from_order():
    plan = lower(parse(
        "SELECT e.name FROM emp AS e JOIN dept AS d ON e.dept_id = d.id"))
    assert _ops(plan) == [LpOp.SCAN, LpOp.SCAN, LpOp.JOIN, LpOp.PROJECT]
    assert plan.nodes[0].attr.startswith("emp")
    assert plan.nodes[1].attr.startswith("dept")
    assert plan.inputs(2) == (0, 1)
    assert len(plan.inputs(3)) == 1


@pytest.mark.parametrize("sql", FIXTURE_QUERIES)
def test_single_root_dag(sql):
    plan = lower(parse(sql))
    consumed = {src for src, _ in plan.edges}
    roots = [n.id for n in plan.nodes if n.id not in consumed]
    assert roots == [plan.root]
    for src, dst in plan.edges:
        assert src < dst  # ids are assigned bottom-up, so data flows upward
    for node in plan.nodes:
        arity = len(plan.inputs(node.id))
        if node.op is LpOp.SCAN:
            assert arity == 0
        elif node.op is LpOp.JOIN:
            assert arity == 2
        else:
            assert arity == 1


def test_render_subsql_filter_node():
    plan = lower(parse("SELECT name FROM emp WHERE age > 30"))
    assert render_subsql(plan, 1) == "SELECT * FROM emp WHERE age > 30"
    assert render_subsql(plan, 0) == "SELECT * FROM emp"


def test_render_subsql_aggregate_over_join(company_db):
    sql = ("SELECT d.city, COUNT(*) FROM emp AS e JOIN dept AS d "
           "ON e.dept_id = d.id GROUP BY d.city")
    plan = lower(parse(sql))
    (agg_id,) = [n.id for n in plan.nodes if n.op is LpOp.AGGREGATE]
    got = execute(company_db, render_subsql(plan, agg_id))
    want = execute(company_db, sql)
    assert results_equal(got, want)


@pytest.mark.parametrize("sql", FIXTURE_QUERIES)
def test_root_subsql_execution_equivalence(sql, company_db):
    plan = lower(parse(sql))
    original = execute(company_db, sql)
    rendered = execute(company_db, render_subsql(plan, plan.root))
    assert results_equal(rendered, original)


@pytest.mark.parametrize("sql", FIXTURE_QUERIES)
def test_every_subsql_executes(sql, company_db):
    plan = lower(parse(sql))
    for node in plan.nodes:
        result = execute(company_db, render_subsql(plan, node.id))
        assert result.columns >= 1


def test_lower_is_deterministic():
    sql = FIXTURE_QUERIES[18]
    assert lower(parse(sql)) == lower(parse(sql))


def test_format_plan_style():
    text = format_plan(lower(parse(
        "SELECT dept_id, COUNT(*) FROM emp GROUP BY dept_id "
        "HAVING COUNT(*) > 2 ORDER BY dept_id LIMIT 2")))
    lines = text.splitlines()
    assert len(lines) == 6  # one node per line
    assert lines[0].startswith("LogicalLimit(")
    # two-space indent per depth, root first
    for depth, line in enumerate(lines):
        assert line.startswith("  " * depth)
        assert line.lstrip().startswith("Logical")
    assert "LogicalTableScan(table=[[emp]])" in lines[-1]


def test_derived_table_lowers_inner_plan():
    plan = lower(parse(
        "SELECT t.dept_id, t.n FROM "
        "(SELECT dept_id, COUNT(*) AS n FROM emp GROUP BY dept_id) AS t "
        "WHERE t.n > 2"))
    ops = _ops(plan)
    assert ops.count(LpOp.PROJECT) == 2  # inner SELECT list and outer one
    assert ops[0] is LpOp.SCAN and ops[-1] is LpOp.PROJECT
