"""Independent brute-force replays used as test oracles.

Everything here is written with plain dicts and Python loops — no shared code
with the library's matrix implementation — so agreement is evidence, not
tautology.
"""
from __future__ import annotations

import math

import numpy as np

from sqlsem.hir import Hir
from sqlsem.plan import LogicalPlan, LpNode, LpOp
from sqlsem.sqlast import AstNode, ExprAst, Kind


def undirected_neighbors(ids, edges):
    nbrs = {i: set() for i in ids}
    for u, v in edges:
        if u != v:
            nbrs[u].add(v)
            nbrs[v].add(u)
    # iteration order matches stored node order, like the adjacency matrix
    index = {nid: pos for pos, nid in enumerate(ids)}
    return {i: sorted(nbrs[i], key=index.__getitem__) for i in ids}


def naive_step(h, nbrs, layer, aggregator):
    """One update h' = ReLU(h W_self + AGG(neighbors) W_nbr + bias)."""
    w_self = layer.w_self.data
    w_nbr = layer.w_nbr.data
    bias = layer.bias.data.reshape(-1)
    out = {}
    for u, vec in h.items():
        around = nbrs[u]
        if not around:
            agg = np.zeros_like(vec)
        elif aggregator == "mean-linear":
            agg = np.zeros_like(vec)
            for v in around:
                agg = agg + h[v]
            agg = agg / len(around)
        else:  # single-head attention over the neighborhood
            a = layer.attn.data.reshape(-1)
            d = vec.size
            logits = []
            for v in around:
                score = float(a[:d] @ vec + a[d:] @ h[v])
                logits.append(score if score > 0.0 else 0.2 * score)
            peak = max(logits)
            weights = [math.exp(s - peak) for s in logits]
            total = sum(weights)
            agg = np.zeros_like(vec)
            for w, v in zip(weights, around):
                agg = agg + (w / total) * h[v]
        out[u] = np.maximum(vec @ w_self + agg @ w_nbr + bias, 0.0)
    return out


def naive_pool(vectors, mode):
    stacked = np.stack(vectors)
    return stacked.mean(axis=0) if mode == "mean" else stacked.sum(axis=0)


def naive_encode_sql(hir, embeddings, params, config):
    """Step-by-step nested message passing, one tree at a time."""
    lp_init = {}
    for node in hir.plan.nodes:
        ast = hir.asts[node.id]
        ids = [n.id for n in ast.nodes]
        edges = [(n.id, c) for n in ast.nodes for c in n.children]
        nbrs = undirected_neighbors(ids, edges)
        h = {n.id: np.asarray(embeddings[(node.id, n.id)], dtype=np.float64)
             for n in ast.nodes}
        for layer in params.ast_layers:
            h = naive_step(h, nbrs, layer, config.aggregator)
        lp_init[node.id] = naive_pool([h[i] for i in ids], config.pooling)

    ids = [n.id for n in hir.plan.nodes]
    nbrs = undirected_neighbors(ids, hir.plan.edges)
    h = lp_init
    for layer in params.lp_layers:
        h = naive_step(h, nbrs, layer, config.aggregator)
    h_sql = naive_pool([h[i] for i in ids], config.pooling)
    return h_sql, h


def random_hir(rng: np.random.Generator, max_lp: int = 5, max_ast: int = 6):
    """A random plan DAG with a random expression tree per node."""
    n_lp = int(rng.integers(1, max_lp + 1))
    ops = list(LpOp)
    lp_nodes = tuple(LpNode(id=i, op=ops[int(rng.integers(len(ops)))], attr="x")
                     for i in range(n_lp))
    edges = [(int(rng.integers(0, i)), i) for i in range(1, n_lp)]
    if n_lp >= 3 and rng.random() < 0.4:  # extra edge: DAG, not just a tree
        a, b = sorted(rng.choice(n_lp, size=2, replace=False).tolist())
        if (a, b) not in edges:
            edges.append((a, b))
    plan = LogicalPlan(lp_nodes, tuple(edges), root=n_lp - 1)

    asts = {}
    for i in range(n_lp):
        n_ast = int(rng.integers(1, max_ast + 1))
        children = {j: [] for j in range(n_ast)}
        for j in range(1, n_ast):
            children[int(rng.integers(0, j))].append(j)
        nodes = tuple(AstNode(id=j, kind=Kind.LITERAL, text="x",
                              children=tuple(children[j]))
                      for j in range(n_ast))
        asts[i] = ExprAst(root=0, nodes=nodes)
    return Hir(plan, asts)


def random_embeddings(hir: Hir, dim: int, rng: np.random.Generator):
    return {(node.id, ast_node.id): rng.normal(0.0, 1.0, dim)
            for node in hir.plan.nodes
            for ast_node in hir.asts[node.id].nodes}
