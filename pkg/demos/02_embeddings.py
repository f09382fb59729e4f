"""
Node text embeddings
====================

Every AST and plan node is embedded from its text plus a schema context
string. The built-in featurizer is a hashed bag-of-tokens: deterministic,
dependency-free, and good enough to train against. A remote HTTP service
implementing GET /health and POST /embed can be swapped in for real
sentence embeddings without touching anything downstream.
"""
import numpy as np

from sqlsem import (
    BuiltinFeaturizer,
    EmbeddingCache,
    Schema,
    Table,
    compress_schema,
    embed_hir,
    hir_from_sql,
)

schema = Schema((
    Table("emp", ("id", "name", "age", "salary"),
          ("INTEGER", "TEXT", "INTEGER", "INTEGER")),
))

# -- schema context strings ---------------------------------------------------
# Tables and columns only; types are noise at this granularity.
print("schema context:", compress_schema(schema))

provider = BuiltinFeaturizer(dim=32)
print("provider:", provider.name, "dim:", provider.dim)

# -- deterministic, unit-norm, token-count based ------------------------------
v1 = provider.embed("ctx", "age > 30")
v2 = provider.embed("ctx", "age > 30")
v3 = provider.embed("ctx", "salary > 30")
print("reproducible:", np.array_equal(v1, v2))
print("unit norm:   ", round(float(np.linalg.norm(v1)), 12))
print("distinct text differs:", not np.array_equal(v1, v3))
# decimals hash as single tokens, so 58.4 is not the pair (58, 4)
print("'58.4' vs '58 4' differ:",
      not np.array_equal(provider.embed("", "58.4"), provider.embed("", "58 4")))

# -- one vector per (plan node, AST node) -------------------------------------
hir = hir_from_sql("SELECT name FROM emp WHERE age > 30", schema)
cache = EmbeddingCache()
vectors = embed_hir(provider, hir, "SELECT name FROM emp WHERE age > 30",
                    schema, cache)
print(f"\nembedded {len(vectors)} (plan node, expression node) pairs:")
for (lp_id, ast_id), vec in sorted(vectors.items())[:6]:
    print(f"  plan {lp_id} / expr {ast_id}: first 4 dims {np.round(vec[:4], 3)}")

# the cache makes repeated embedding free and bit-identical
again = embed_hir(provider, hir, "SELECT name FROM emp WHERE age > 30",
                  schema, cache)
print("cache round trip bit-identical:",
      all(np.array_equal(vectors[k], again[k]) for k in vectors))
