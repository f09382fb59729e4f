"""Nested encoder contracts: hand-checked updates, permutation invariance,
reduction to nested pooling under identity weights, and agreement with the
brute-force replay oracle on random graphs."""
import numpy as np
import pytest

from sqlsem.autograd import ParamStore, Tensor
from sqlsem.hir import Hir, hir_from_sql
from sqlsem.nmpnn import (
    DimMismatch,
    EmptyGraph,
    MpnnLayerParams,
    NmpnnConfig,
    NmpnnParams,
    NodeGraph,
    ast_pass,
    encode_sql,
    init_nmpnn_params,
    params_from_store,
    pool,
)
from sqlsem.plan import LogicalPlan, LpNode, LpOp
from sqlsem.sqlast import AstNode, ExprAst, Kind

from .oracles import naive_encode_sql, random_embeddings, random_hir


def _layer(w_self, w_nbr, bias, attn=None):
    return MpnnLayerParams(Tensor(w_self), Tensor(w_nbr), Tensor(bias),
                           None if attn is None else Tensor(attn))


def _const_params(config, w_self, w_nbr, bias):
    d = config.dim
    layer = lambda: _layer(np.full((d, d), 0.0) + np.asarray(w_self),
                           np.full((d, d), 0.0) + np.asarray(w_nbr),
                           np.full((1, d), 0.0) + np.asarray(bias))
    return NmpnnParams(tuple(layer() for _ in range(config.t_ast)),
                       tuple(layer() for _ in range(config.t_lp)))


def _single_node_hir(op=LpOp.SCAN):
    plan = LogicalPlan((LpNode(id=0, op=op, attr="t"),), (), root=0)
    ast = ExprAst(root=0, nodes=(AstNode(0, Kind.TABLE, "t", ()),))
    return Hir(plan, {0: ast})


def test_config_validation():
    with pytest.raises(ValueError):
        NmpnnConfig(t_ast=0)
    with pytest.raises(ValueError):
        NmpnnConfig(dim=0)
    with pytest.raises(ValueError):
        NmpnnConfig(pooling="max")
    with pytest.raises(ValueError):
        NmpnnConfig(aggregator="sum")
    with pytest.raises(ValueError):
        NmpnnConfig(dropout=1.0)


def test_path_hand_update():
    """Two connected nodes, d=1, unit weights: both states become 4."""
    graph = NodeGraph((0, 1), ((0, 1),))
    config = NmpnnConfig(t_ast=1, t_lp=1, dim=1, dropout=0.0)
    layers = (_layer([[1.0]], [[1.0]], [[0.0]]),)
    out = ast_pass(graph, {0: np.array([1.0]), 1: np.array([3.0])},
                   layers, config)
    assert out[0].data.tolist() == [[4.0]]
    assert out[1].data.tolist() == [[4.0]]


def test_single_node_identity_is_relu():
    graph = NodeGraph((0,), ())
    config = NmpnnConfig(t_ast=1, t_lp=1, dim=2, dropout=0.0)
    layers = (_layer(np.eye(2), np.zeros((2, 2)), np.zeros((1, 2))),)
    out = ast_pass(graph, {0: np.array([-1.0, 2.0])}, layers, config)
    assert out[0].data.tolist() == [[0.0, 2.0]]


def test_star_leaf_permutation_symmetry():
    """Permuting identical leaves around a hub leaves every state unchanged."""
    graph = NodeGraph((0, 1, 2, 3), ((0, 1), (0, 2), (0, 3)))
    config = NmpnnConfig(t_ast=2, t_lp=1, dim=2, dropout=0.0)
    rng = np.random.default_rng(3)
    store = ParamStore()
    params = init_nmpnn_params(store, config, rng)
    leaves = [np.array([1.0, -0.5]), np.array([0.25, 2.0]), np.array([-1.0, 0.5])]
    hub = np.array([0.5, 0.5])
    base = ast_pass(graph, {0: hub, 1: leaves[0], 2: leaves[1], 3: leaves[2]},
                    params.ast_layers, config)
    swapped = ast_pass(graph, {0: hub, 1: leaves[2], 2: leaves[0], 3: leaves[1]},
                       params.ast_layers, config)
    # the hub sees the same neighbor multiset either way
    assert np.array_equal(base[0].data, swapped[0].data)


def test_pool_examples():
    states = {0: Tensor([[1.0, 2.0]]), 1: Tensor([[3.0, 4.0]])}
    assert pool(states, "mean").data.tolist() == [[2.0, 3.0]]
    assert pool(states, "sum").data.tolist() == [[4.0, 6.0]]
    only = {7: Tensor([[5.0, 6.0]])}
    assert pool(only, "mean").data.tolist() == [[5.0, 6.0]]
    with pytest.raises(EmptyGraph):
        pool({}, "mean")
    with pytest.raises(ValueError):
        pool(states, "max")


def test_sum_pool_equals_mean_times_n():
    rng = np.random.default_rng(5)
    states = {i: Tensor(rng.normal(size=(1, 3))) for i in range(4)}
    mean = pool(states, "mean").data
    total = pool(states, "sum").data
    assert np.allclose(total, mean * 4)


def test_single_node_plan_identity_weights():
    """h_sql = ReLU(ReLU(embedding)) when both levels are one identity step."""
    hir = _single_node_hir()
    config = NmpnnConfig(t_ast=1, t_lp=1, dim=3, dropout=0.0)
    params = _const_params(config, np.eye(3), np.zeros((3, 3)), np.zeros(3))
    emb = {(0, 0): np.array([-1.0, 0.5, 2.0])}
    h_sql, lp_states = encode_sql(hir, emb, params, config)
    assert h_sql.data.tolist() == [[0.0, 0.5, 2.0]]
    assert set(lp_states) == {0}
    assert np.array_equal(lp_states[0].data, h_sql.data)


def test_three_node_chain_hand_replay():
    """d=1, all-ones weights, zero bias; replayed by hand on a chain plan."""
    plan = LogicalPlan((LpNode(0, LpOp.SCAN, "t"),
                        LpNode(1, LpOp.FILTER, "x"),
                        LpNode(2, LpOp.PROJECT, "x")),
                       ((0, 1), (1, 2)), root=2)
    ast = ExprAst(root=0, nodes=(AstNode(0, Kind.LITERAL, "x", ()),))
    hir = Hir(plan, {0: ast, 1: ast, 2: ast})
    config = NmpnnConfig(t_ast=1, t_lp=1, dim=1, dropout=0.0)
    params = _const_params(config, [[1.0]], [[1.0]], [0.0])
    emb = {(0, 0): np.array([1.0]), (1, 0): np.array([2.0]),
           (2, 0): np.array([3.0])}
    # AST level: isolated single nodes, unit self weight -> unchanged.
    # LP level: h0 = [1, 2, 3]; ends get their one neighbor, middle the mean:
    #   h'_0 = 1 + 2 = 3;  h'_1 = 2 + (1+3)/2 = 4;  h'_2 = 3 + 2 = 5
    h_sql, lp_states = encode_sql(hir, emb, params, config)
    assert [lp_states[i].data[0, 0] for i in range(3)] == [3.0, 4.0, 5.0]
    assert h_sql.data[0, 0] == pytest.approx(4.0)  # mean of 3,4,5


def test_output_shape_contract():
    hir = hir_from_sql("SELECT name FROM emp WHERE age > 30")
    config = NmpnnConfig(dim=8, dropout=0.0)
    store = ParamStore()
    params = init_nmpnn_params(store, config, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    emb = {(n.id, a.id): rng.normal(size=8)
           for n in hir.plan.nodes for a in hir.asts[n.id].nodes}
    h_sql, lp_states = encode_sql(hir, emb, params, config)
    assert h_sql.shape == (1, 8)
    assert set(lp_states) == {n.id for n in hir.plan.nodes}
    assert all(t.shape == (1, 8) for t in lp_states.values())


def test_relabeling_invariance_mean_mode():
    """Shifting every node id (same structure) gives bit-identical h_sql."""
    rng = np.random.default_rng(11)
    config = NmpnnConfig(t_ast=2, t_lp=2, dim=4, dropout=0.0)
    store = ParamStore()
    params = init_nmpnn_params(store, config, rng)

    def build(offset):
        nodes = (LpNode(0 + offset, LpOp.SCAN, "t"),
                 LpNode(1 + offset, LpOp.PROJECT, "x"))
        plan = LogicalPlan(nodes, ((0 + offset, 1 + offset),), root=1 + offset)
        ast = ExprAst(root=0, nodes=(
            AstNode(0, Kind.BINARY_OP, ">", (1, 2)),
            AstNode(1, Kind.COLUMN, "age", ()),
            AstNode(2, Kind.LITERAL, "30", ()),
        ))
        hir = Hir(plan, {0 + offset: ast, 1 + offset: ast})
        gen = np.random.default_rng(99)
        emb = {(n.id, a.id): gen.normal(size=4)
               for n in plan.nodes for a in hir.asts[n.id].nodes}
        return hir, emb

    base_hir, base_emb = build(0)
    moved_hir, moved_emb = build(10)
    h_base, _ = encode_sql(base_hir, base_emb, params, config)
    h_moved, _ = encode_sql(moved_hir, moved_emb, params, config)
    assert np.array_equal(h_base.data, h_moved.data)


def test_identity_params_reduce_to_nested_pooling():
    """W_self=I, W_nbr=0, bias=0 on nonnegative embeddings: pure pooling."""
    rng = np.random.default_rng(17)
    hir = random_hir(rng)
    config = NmpnnConfig(t_ast=2, t_lp=2, dim=3, dropout=0.0)
    params = _const_params(config, np.eye(3), np.zeros((3, 3)), np.zeros(3))
    emb = {key: np.abs(vec)
           for key, vec in random_embeddings(hir, 3, rng).items()}
    h_sql, _ = encode_sql(hir, emb, params, config)
    per_node = [np.mean([emb[(n.id, a.id)] for a in hir.asts[n.id].nodes], axis=0)
                for n in hir.plan.nodes]
    assert np.allclose(h_sql.data[0], np.mean(per_node, axis=0), atol=1e-12)


def test_brute_force_oracle_equivalence():
    """200 random graphs: matrix implementation vs step-by-step replay."""
    rng = np.random.default_rng(20250814)
    worst = 0.0
    for i in range(200):
        dim = int(rng.integers(1, 5))
        config = NmpnnConfig(
            t_ast=int(rng.integers(1, 4)),
            t_lp=int(rng.integers(1, 4)),
            dim=dim,
            pooling="mean" if rng.random() < 0.5 else "sum",
            aggregator="mean-linear" if rng.random() < 0.7 else "gat",
            dropout=0.0,
        )
        hir = random_hir(rng)
        emb = random_embeddings(hir, dim, rng)
        store = ParamStore()
        params = init_nmpnn_params(store, config, rng)
        h_sql, lp_states = encode_sql(hir, emb, params, config)
        want_sql, want_states = naive_encode_sql(hir, emb, params, config)
        worst = max(worst, float(np.max(np.abs(h_sql.data[0] - want_sql))))
        for node in hir.plan.nodes:
            diff = np.abs(lp_states[node.id].data[0] - want_states[node.id])
            worst = max(worst, float(np.max(diff)))
    assert worst <= 1e-12


def test_missing_and_wrong_dim_embeddings():
    hir = _single_node_hir()
    config = NmpnnConfig(t_ast=1, t_lp=1, dim=3, dropout=0.0)
    params = _const_params(config, np.eye(3), np.zeros((3, 3)), np.zeros(3))
    with pytest.raises(DimMismatch):
        encode_sql(hir, {}, params, config)
    with pytest.raises(DimMismatch):
        encode_sql(hir, {(0, 0): np.ones(2)}, params, config)


def test_empty_plan_raises():
    plan = LogicalPlan((), (), root=0)
    config = NmpnnConfig(dim=2, dropout=0.0)
    params = _const_params(config, np.eye(2), np.zeros((2, 2)), np.zeros(2))
    with pytest.raises(EmptyGraph):
        encode_sql(Hir(plan, {}), {}, params, config)


def test_params_round_trip_through_store():
    config = NmpnnConfig(dim=4, aggregator="gat")
    store = ParamStore()
    created = init_nmpnn_params(store, config, np.random.default_rng(2))
    loaded = params_from_store(store, config)
    for built, read in zip(created.ast_layers + created.lp_layers,
                           loaded.ast_layers + loaded.lp_layers):
        assert built.w_self is read.w_self
        assert built.attn is read.attn


def test_graph_validation():
    with pytest.raises(ValueError):
        NodeGraph((0, 0), ())
    with pytest.raises(ValueError):
        NodeGraph((0, 1), ((0, 5),))
