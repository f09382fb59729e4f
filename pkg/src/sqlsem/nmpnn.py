"""Nested message passing: expression trees first, then the plan graph.

Each update is ``h' = ReLU(h W_self + AGG(neighbors) W_nbr + bias)`` with
undirected neighborhoods at both levels and separate parameters per level and
per step. AGG is the neighbor mean by default; the opt-in ``gat`` aggregator
replaces it with a single-head attention-weighted sum. The states of every
expression tree pool into that plan node's initial vector, and the final plan
states pool into the statement vector.

States for one graph live in an n x d matrix whose row order is the stored
node order, so mean-mode outputs are bit-identical under node-id relabeling.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import ParamStore, Tensor
from .errors import SqlsemError
from .hir import Hir
from .sqlast import ExprAst


class DimMismatch(SqlsemError):
    """A vector's dimension disagrees with the configured model width."""


class EmptyGraph(SqlsemError):
    """Pooling over zero nodes is undefined."""


_POOLINGS = ("mean", "sum")
_AGGREGATORS = ("mean-linear", "gat")


@dataclass(frozen=True)
class NmpnnConfig:
    t_ast: int = 2
    t_lp: int = 2
    dim: int = 64
    pooling: str = "mean"
    aggregator: str = "mean-linear"
    dropout: float = 0.3

    def __post_init__(self):
        if self.t_ast < 1 or self.t_lp < 1:
            raise ValueError("t_ast and t_lp must be at least 1")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.pooling not in _POOLINGS:
            raise ValueError(f"pooling must be one of {_POOLINGS}")
        if self.aggregator not in _AGGREGATORS:
            raise ValueError(f"aggregator must be one of {_AGGREGATORS}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


@dataclass(frozen=True)
class MpnnLayerParams:
    w_self: Tensor  # d x d
    w_nbr: Tensor   # d x d
    bias: Tensor    # 1 x d
    attn: Tensor | None = None  # 1 x 2d, gat mode only


@dataclass(frozen=True)
class NodeGraph:
    """Undirected graph; node order is structural and drives summation order."""

    nodes: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        known = set(self.nodes)
        if len(known) != len(self.nodes):
            raise ValueError("duplicate node ids")
        for u, v in self.edges:
            if u not in known or v not in known:
                raise ValueError(f"edge ({u}, {v}) references unknown node")

    @staticmethod
    def from_tree(ast: ExprAst) -> "NodeGraph":
        nodes = tuple(n.id for n in ast.nodes)
        edges = tuple((n.id, c) for n in ast.nodes for c in n.children)
        return NodeGraph(nodes, edges)

    @staticmethod
    def from_plan(plan) -> "NodeGraph":
        return NodeGraph(tuple(n.id for n in plan.nodes), tuple(plan.edges))

    def adjacency_mask(self) -> np.ndarray:
        index = {nid: i for i, nid in enumerate(self.nodes)}
        n = len(self.nodes)
        mask = np.zeros((n, n), dtype=bool)
        for u, v in self.edges:
            if u == v:
                continue
            mask[index[u], index[v]] = True
            mask[index[v], index[u]] = True
        return mask

    def mean_adjacency(self) -> np.ndarray:
        mask = self.adjacency_mask().astype(np.float64)
        degrees = mask.sum(axis=1, keepdims=True)
        # isolated nodes keep a zero row: their AGG term is the zero vector
        return np.divide(mask, degrees, out=np.zeros_like(mask), where=degrees > 0.0)


def init_layer_params(store: ParamStore, prefix: str, config: NmpnnConfig,
                      rng: np.random.Generator) -> MpnnLayerParams:
    """Identity-dominant start: each layer begins close to `h + 0.5·nbr`.

    Keeping the update near the identity preserves the provider's feature
    space at initialization (so the fusion head sees meaningful overlap from
    step one) while the noise leaves room to learn rotations.
    """
    d = config.dim
    noise = 0.1 / np.sqrt(d)
    w_self = store.add(f"{prefix}.w_self",
                       np.eye(d) + rng.normal(0.0, noise, (d, d)))
    w_nbr = store.add(f"{prefix}.w_nbr",
                      0.5 * np.eye(d) + rng.normal(0.0, noise, (d, d)))
    bias = store.add(f"{prefix}.bias", np.zeros((1, d)))
    attn = None
    if config.aggregator == "gat":
        attn = store.add(f"{prefix}.attn",
                         rng.normal(0.0, 1.0 / np.sqrt(d), (1, 2 * d)))
    return MpnnLayerParams(w_self, w_nbr, bias, attn)


@dataclass(frozen=True)
class NmpnnParams:
    ast_layers: tuple[MpnnLayerParams, ...]
    lp_layers: tuple[MpnnLayerParams, ...]


def init_nmpnn_params(store: ParamStore, config: NmpnnConfig,
                      rng: np.random.Generator) -> NmpnnParams:
    ast_layers = tuple(init_layer_params(store, f"ast.{t}", config, rng)
                       for t in range(config.t_ast))
    lp_layers = tuple(init_layer_params(store, f"lp.{t}", config, rng)
                      for t in range(config.t_lp))
    return NmpnnParams(ast_layers, lp_layers)


def params_from_store(store: ParamStore, config: NmpnnConfig) -> NmpnnParams:
    def layer(prefix: str) -> MpnnLayerParams:
        attn = store[f"{prefix}.attn"] if f"{prefix}.attn" in store else None
        return MpnnLayerParams(store[f"{prefix}.w_self"], store[f"{prefix}.w_nbr"],
                               store[f"{prefix}.bias"], attn)

    return NmpnnParams(
        tuple(layer(f"ast.{t}") for t in range(config.t_ast)),
        tuple(layer(f"lp.{t}") for t in range(config.t_lp)),
    )


def _aggregate(h: Tensor, layer: MpnnLayerParams, mean_adj: np.ndarray,
               mask: np.ndarray, config: NmpnnConfig) -> Tensor:
    if config.aggregator == "mean-linear" or layer.attn is None:
        return ag.matmul(Tensor(mean_adj), h)
    d = config.dim
    n = h.shape[0]
    left = ag.matmul(h, _attn_half(layer.attn, 0, d))
    right = ag.matmul(h, _attn_half(layer.attn, d, 2 * d))
    ones_row = Tensor(np.ones((1, n)))
    scores = ag.add(ag.matmul(left, ones_row),
                    _transpose_col(ag.matmul(right, ones_row)))
    weights = ag.masked_softmax_rows(ag.leaky_relu(scores), mask)
    return ag.matmul(weights, h)


def _attn_half(attn: Tensor, start: int, stop: int) -> Tensor:
    """Column slice of the attention vector, transposed to d x 1."""
    out = ag.Tensor(attn.data[:, start:stop].T.copy())
    out.requires_grad = attn.requires_grad
    if attn.requires_grad:
        out._prev = (attn,)

        def backward():
            grad = np.zeros_like(attn.data)
            grad[:, start:stop] = out.grad.T
            attn._accumulate(grad)

        out._backward = backward
    return out


def _transpose_col(x: Tensor) -> Tensor:
    out = ag.Tensor(x.data.T.copy())
    out.requires_grad = x.requires_grad
    if x.requires_grad:
        out._prev = (x,)

        def backward():
            x._accumulate(out.grad.T)

        out._backward = backward
    return out


def _pass_matrix(h: Tensor, graph: NodeGraph, layers, config: NmpnnConfig,
                 *, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    mean_adj = graph.mean_adjacency()
    mask = graph.adjacency_mask()
    for layer in layers:
        agg = _aggregate(h, layer, mean_adj, mask, config)
        pre = ag.add(ag.add(ag.matmul(h, layer.w_self), ag.matmul(agg, layer.w_nbr)),
                     layer.bias)
        h = ag.relu(pre)
        if train and config.dropout > 0.0:
            if rng is None:
                raise ValueError("training mode needs an rng for dropout")
            h = ag.dropout(h, config.dropout, rng)
    return h


def _stack_init(graph: NodeGraph, init: dict[int, np.ndarray | Tensor],
                dim: int) -> Tensor:
    rows = []
    for nid in graph.nodes:
        if nid not in init:
            raise DimMismatch(f"missing initial vector for node {nid}")
        vec = init[nid]
        arr = vec.data if isinstance(vec, Tensor) else np.asarray(vec, dtype=np.float64)
        arr = arr.reshape(1, -1)
        if arr.shape[1] != dim:
            raise DimMismatch(f"node {nid} has dim {arr.shape[1]}, expected {dim}")
        rows.append(arr)
    if not rows:
        raise EmptyGraph("graph has no nodes")
    return Tensor(np.concatenate(rows, axis=0))


def ast_pass(graph: NodeGraph, init: dict[int, np.ndarray | Tensor],
             layers, config: NmpnnConfig, *, train: bool = False,
             rng: np.random.Generator | None = None) -> dict[int, Tensor]:
    """Run message passing over one graph; returns final per-node states."""
    h0 = _stack_init(graph, init, config.dim)
    h = _pass_matrix(h0, graph, layers, config, train=train, rng=rng)
    return {nid: ag.row(h, i) for i, nid in enumerate(graph.nodes)}


def pool(states: dict[int, Tensor] | Tensor, mode: str) -> Tensor:
    """Combine node states into one vector (elementwise mean or sum)."""
    if mode not in _POOLINGS:
        raise ValueError(f"pooling must be one of {_POOLINGS}")
    if isinstance(states, Tensor):
        matrix = states
        if matrix.shape[0] == 0:
            raise EmptyGraph("pool over zero nodes")
    else:
        if not states:
            raise EmptyGraph("pool over zero nodes")
        matrix = ag.concat_rows(list(states.values()))
    return ag.mean_rows(matrix) if mode == "mean" else ag.sum_rows(matrix)


def encode_sql(hir: Hir, embeddings: dict[tuple[int, int], np.ndarray],
               params: NmpnnParams, config: NmpnnConfig, *, train: bool = False,
               rng: np.random.Generator | None = None
               ) -> tuple[Tensor, dict[int, Tensor]]:
    """Encode a HIR into (statement vector, final per-plan-node states).

    The expression trees share per-step weights, so they run as disjoint
    blocks of one combined graph; per-tree pooling is then a single
    segment-pooling matmul instead of one pass and one pool per tree.
    """
    plan = hir.plan
    if not plan.nodes:
        raise EmptyGraph("plan has no nodes")
    init: dict[int, np.ndarray] = {}
    edges: list[tuple[int, int]] = []
    bounds: list[tuple[int, int]] = []
    total = 0
    for node in plan.nodes:
        ast = hir.asts[node.id]
        if not ast.nodes:
            raise EmptyGraph(f"plan node {node.id} has an empty expression tree")
        index = {ast_node.id: total + i for i, ast_node in enumerate(ast.nodes)}
        for ast_node in ast.nodes:
            key = (node.id, ast_node.id)
            if key not in embeddings:
                raise DimMismatch(f"missing embedding for {key}")
            init[index[ast_node.id]] = embeddings[key]
        edges.extend((index[n.id], index[c])
                     for n in ast.nodes for c in n.children)
        bounds.append((total, total + len(ast.nodes)))
        total += len(ast.nodes)
    graph = NodeGraph(tuple(range(total)), tuple(edges))
    h0 = _stack_init(graph, init, config.dim)
    h_ast = _pass_matrix(h0, graph, params.ast_layers, config, train=train, rng=rng)
    seg = np.zeros((len(bounds), total))
    for j, (start, stop) in enumerate(bounds):
        seg[j, start:stop] = 1.0 / (stop - start) if config.pooling == "mean" else 1.0
    h_lp0 = ag.matmul(Tensor(seg), h_ast)
    lp_graph = NodeGraph.from_plan(plan)
    h_lp = _pass_matrix(h_lp0, lp_graph, params.lp_layers, config, train=train, rng=rng)
    h_sql = pool(h_lp, config.pooling)
    lp_states = {node.id: ag.row(h_lp, i) for i, node in enumerate(plan.nodes)}
    return h_sql, lp_states
