"""
From SQL text to a logical plan
===============================

A statement is parsed into an expression-level AST, then lowered into a
linear chain of relational operators (Scan -> Join -> Filter -> Aggregate ->
Project -> Sort -> Limit, whichever apply). Every plan node also knows how to
print itself back as a runnable sub-query, which is what makes node-level
feedback actionable.
"""
from sqlsem import Schema, Table, format_plan, lower, parse, render, render_subsql

schema = Schema((
    Table("dept", ("id", "name", "city"), ("INTEGER", "TEXT", "TEXT")),
    Table("emp", ("id", "name", "age", "salary", "dept_id"),
          ("INTEGER", "TEXT", "INTEGER", "INTEGER", "INTEGER")),
))

sql = ("SELECT d.name, AVG(e.salary) FROM emp e JOIN dept d "
       "ON e.dept_id = d.id WHERE e.age > 30 GROUP BY d.name "
       "HAVING AVG(e.salary) > 5000 ORDER BY d.name LIMIT 3")

# -- parse: a flat, pre-order table of typed nodes ---------------------------
ast = parse(sql, schema)
print(f"parsed {len(ast.nodes)} AST nodes; root kind = {ast.node(ast.root).kind.name}")
for node in ast.nodes[:8]:
    print(f"  [{node.id:2d}] {node.kind.name:<12} {node.text!r} -> {node.children}")
print("  ...")

# render() is a fixed point: parse(render(ast)) produces the same tree
print("round trip:", render(ast) == render(parse(render(ast), schema)))

# -- lower: relational operators in execution order --------------------------
plan = lower(ast, schema)
print(f"\nlowered to {len(plan.nodes)} plan nodes (root = node {plan.root}):")
print(format_plan(plan))

# -- every node renders as a self-contained query ----------------------------
print("sub-queries, one per operator:")
for node in plan.nodes:
    print(f"  node {node.id} {node.op.value:<10} {render_subsql(plan, node.id, schema)}")
