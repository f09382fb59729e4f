"""
Manufacturing labeled negatives by mutation
===========================================

Labeled invalid pairs are expensive to collect, so they are manufactured:
take a gold (question, SQL) pair, perturb exactly one AST node (flip an
operator, swap an identifier, replace a constant with another value from the
database, change an aggregate), and keep only mutants that still execute but
return a different result. The plan node owning the mutated site is recorded,
which gives localization its ground truth for free.
"""
import sqlite3
import tempfile

from sqlsem import (
    ALL_RULES,
    Example,
    MutationRule,
    Schema,
    Table,
    execute,
    generate_negatives,
    mutate,
    parse,
)

schema = Schema((
    Table("emp", ("id", "name", "age", "salary"),
          ("INTEGER", "TEXT", "INTEGER", "INTEGER")),
))

db = tempfile.NamedTemporaryFile(suffix=".sqlite", delete=False).name
conn = sqlite3.connect(db)
conn.execute("CREATE TABLE emp (id INTEGER, name TEXT, age INTEGER, salary INTEGER)")
conn.executemany("INSERT INTO emp VALUES (?, ?, ?, ?)", [
    (1, "ada", 36, 6400), (2, "alan", 29, 5100), (3, "grace", 41, 7200),
    (4, "tony", 25, 4300), (5, "edsger", 52, 8000),
])
conn.commit()
conn.close()

sql = "SELECT name FROM emp WHERE age > 30"

# -- one rule, one site, one seeded draw ---------------------------------------
print("all mutants of:", sql)
for rule in ALL_RULES:
    try:
        mutants = mutate(parse(sql, schema), rule, schema, seed=1, db_path=db)
    except Exception as exc:
        print(f"  {rule.value:<26} ({exc})")
        continue
    for m in mutants:
        print(f"  {rule.value:<26} {m.sql}   (expression node {m.ast_node_id}, "
              f"plan node {m.lp_node_id})")

# -- execution filtering keeps only observable changes --------------------------
gold = Example(id="g1", db_id="hr", question="names of employees older than 30",
               sql=sql, label=0, source="gold")
negatives = generate_negatives(gold, db, schema, budget=8, seed=1)
gold_rows = execute(db, sql).rows
print(f"\ngold answer: {sorted(gold_rows)}")
print(f"kept {len(negatives)} execution-verified negatives:")
for neg in negatives:
    rows = execute(db, neg.sql).rows
    marked = [nid for nid, v in neg.sublabels.items() if v == 1]
    print(f"  {neg.sql}")
    print(f"    answer {sorted(rows)!s:<40} perturbed plan node: {marked[0]}")

# A mutant that happens to return the gold answer is silently discarded;
# only observably wrong statements become training negatives.
