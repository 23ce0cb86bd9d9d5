import numpy as np
import pytest

from skingraph import tensor as T
from skingraph.graph import (
    AGGREGATOR_ORDER,
    DegreeStats,
    Graph,
    MagcConfig,
    MagcLayer,
    NeighbourhoodKind,
    SCALER_ORDER,
    add_self_loops_for_isolated,
    aggregate,
    compute_degree_stats,
    edge_message,
    magc_forward,
    magc_pre_mlp,
    scale,
    scaler_value,
)
from skingraph.nn import Linear

MT = NeighbourhoodKind.MESH_TOPOLOGY


def star_graph(leaf_values, center_value=0.0):
    """Leaves feed one center node; every node gets in-edges via self-loops."""
    n = len(leaf_values) + 1
    edges = np.array([[i + 1, 0] for i in range(len(leaf_values))])
    edges = add_self_loops_for_isolated(edges, n)
    g = Graph(n, {MT: edges})
    feats = np.array([[center_value]] + [[v] for v in leaf_values], dtype=float)
    return g, T.Tensor(feats)


def test_edge_message_examples():
    v = np.array([2.0, -1.0, 0.5])
    assert np.array_equal(edge_message(v, v), np.concatenate([v, np.zeros(3)]))
    msg = edge_message(np.array([3.0, 4.0]), np.array([1.0, 0.0]))
    assert np.array_equal(msg, [1.0, 0.0, 2.0, 4.0])
    for f_width in (1, 2, 7):
        m = edge_message(np.zeros(f_width), np.zeros(f_width))
        assert m.shape == (2 * f_width,)
    with pytest.raises(ValueError):
        edge_message(np.zeros(2), np.zeros(3))


def test_aggregate_two_point_statistics():
    msgs = np.array([[1.0, 3.0], [3.0, 1.0]])
    assert np.array_equal(aggregate(msgs, "max"), [3.0, 3.0])
    assert np.array_equal(aggregate(msgs, "min"), [1.0, 1.0])
    assert np.array_equal(aggregate(msgs, "mean"), [2.0, 2.0])
    assert np.array_equal(aggregate(msgs, "std"), [1.0, 1.0])


def test_aggregate_singleton_and_empty():
    single = np.array([[5.0, -2.0]])
    for which in ("max", "min", "mean"):
        assert np.array_equal(aggregate(single, which), [5.0, -2.0])
    assert np.array_equal(aggregate(single, "std"), [0.0, 0.0])
    with pytest.raises(ValueError, match="empty neighbourhood"):
        aggregate(np.zeros((0, 2)), "mean")


def test_aggregate_permutation_invariance():
    rng = np.random.default_rng(0)
    msgs = rng.normal(size=(10, 6))
    for which in AGGREGATOR_ORDER:
        base = aggregate(msgs, which)
        for _ in range(20):
            perm = rng.permutation(10)
            assert np.allclose(aggregate(msgs[perm], which), base, atol=1e-9)


def test_scaler_identities():
    for d in (1, 2, 5, 33):
        assert scaler_value(d, float(d), "identity") == 1.0
        assert abs(scaler_value(d, float(d), "amplification") - 1.0) < 1e-12
        assert abs(scaler_value(d, float(d), "attenuation") - 1.0) < 1e-12
    assert abs(scaler_value(15, 3.0, "amplification") - 2.0) < 1e-12
    assert abs(scaler_value(15, 3.0, "attenuation") - 0.5) < 1e-12
    for d in (1, 4, 9, 100):
        amp = scaler_value(d, 6.0, "amplification")
        att = scaler_value(d, 6.0, "attenuation")
        assert abs(amp * att - 1.0) < 1e-12
    agg = np.array([1.0, -2.0])
    assert np.array_equal(scale(agg, 15, 3.0, "amplification"), agg * 2.0)


def test_mean_identity_config_matches_brute_force():
    # oracle: per node, average concat(x_dst, x_src - x_dst) over in-edges
    rng = np.random.default_rng(1)
    n = 9
    edges = []
    for dst in range(n):
        for src in rng.choice(n, size=rng.integers(1, 7), replace=False):
            edges.append([src, dst])
    edges = np.asarray(edges)
    x = rng.normal(size=(n, 3))
    g = Graph(n, {MT: add_self_loops_for_isolated(edges, n)})
    cfg = MagcConfig(aggregators=("mean",), scalers=("identity",), out_width=6)

    pre = magc_pre_mlp(g, MT, T.Tensor(x), cfg, d_train=3.0).data
    full = g.edge_sets[MT]
    for i in range(n):
        incoming = full[full[:, 1] == i]
        msgs = np.stack(
            [np.concatenate([x[i], x[s] - x[i]]) for s in incoming[:, 0]]
        )
        assert np.array_equal(pre[i], msgs.mean(axis=0))


def test_mean_identity_forward_with_identity_weights():
    g, x = star_graph([1.0, 3.0], center_value=2.0)
    cfg = MagcConfig(aggregators=("mean",), scalers=("identity",), out_width=2)
    linear = Linear(2, 2, np.random.default_rng(0))
    linear.weight.data[...] = np.eye(2)
    linear.bias.data[...] = 0.0
    out = magc_forward(g, MT, x, cfg, linear, d_train=2.0).data
    # center: messages concat(2, leaf-2) for leaves {1,3}: mean = (2, 0)
    assert np.array_equal(out[0], [2.0, 0.0])


def test_full_config_pre_mlp_width():
    g, x = star_graph([1.0, 2.0, 3.0])
    cfg = MagcConfig(out_width=4)
    pre = magc_pre_mlp(g, MT, x, cfg, d_train=2.0)
    assert pre.data.shape == (4, 12 * 2 * 1)
    assert cfg.pre_mlp_width(5) == 12 * 10


def test_cardinality_discrimination():
    # equal means, different sizes: std and scaler blocks must differ
    g2, x2 = star_graph([1.0, 3.0], center_value=0.5)
    g3, x3 = star_graph([1.0, 2.0, 3.0], center_value=0.5)
    cfg = MagcConfig(out_width=4)
    d_train = 2.5
    pre2 = magc_pre_mlp(g2, MT, x2, cfg, d_train).data[0]
    pre3 = magc_pre_mlp(g3, MT, x3, cfg, d_train).data[0]

    width = 2  # message width for F=1
    blocks2 = pre2.reshape(len(AGGREGATOR_ORDER), len(SCALER_ORDER), width)
    blocks3 = pre3.reshape(len(AGGREGATOR_ORDER), len(SCALER_ORDER), width)
    # mean x identity agrees (same neighbourhood mean)
    mean_i, iden_i = AGGREGATOR_ORDER.index("mean"), SCALER_ORDER.index("identity")
    assert np.allclose(blocks2[mean_i, iden_i], blocks3[mean_i, iden_i], atol=1e-12)
    # std block differs
    std_i = AGGREGATOR_ORDER.index("std")
    assert np.abs(blocks2[std_i, iden_i] - blocks3[std_i, iden_i]).max() > 1e-6
    # scaled mean blocks differ (degree 2 vs 3)
    amp_i = SCALER_ORDER.index("amplification")
    assert np.abs(blocks2[mean_i, amp_i] - blocks3[mean_i, amp_i]).max() > 1e-6


def test_magc_edge_permutation_invariance():
    rng = np.random.default_rng(2)
    n = 12
    edges = []
    for dst in range(n):
        for src in rng.choice(n, size=rng.integers(1, 6), replace=False):
            edges.append([src, dst])
    edges = np.asarray(edges)
    x = T.Tensor(rng.normal(size=(n, 4)))
    cfg = MagcConfig(out_width=5)
    layer = MagcLayer(4, cfg, np.random.default_rng(3))

    base = magc_forward(Graph(n, {MT: edges}), MT, x, cfg, layer.linear, 3.0).data
    for _ in range(5):
        perm = rng.permutation(len(edges))
        g = Graph(n, {MT: edges[perm]})
        out = magc_forward(g, MT, x, cfg, layer.linear, 3.0).data
        assert np.allclose(out, base, atol=1e-9)


def test_magc_locality():
    # chain 0 -> 1 -> 2: perturbing node 0 must not change node 2's row
    edges = np.array([[0, 1], [1, 2], [0, 0]])
    x = np.random.default_rng(4).normal(size=(3, 2))
    cfg = MagcConfig(out_width=3)
    layer = MagcLayer(2, cfg, np.random.default_rng(5))
    g = Graph(3, {MT: edges})
    base = magc_forward(g, MT, T.Tensor(x), cfg, layer.linear, 2.0).data
    x2 = x.copy()
    x2[0] += 1.0
    out = magc_forward(g, MT, T.Tensor(x2), cfg, layer.linear, 2.0).data
    assert not np.allclose(out[0], base[0])
    assert not np.allclose(out[1], base[1])
    assert np.array_equal(out[2], base[2])


def test_magc_gradient_against_finite_differences():
    rng = np.random.default_rng(6)
    n = 5
    edges = add_self_loops_for_isolated(
        np.array([[1, 0], [2, 0], [3, 0], [0, 1], [2, 1], [4, 2], [1, 4]]), n
    )
    g = Graph(n, {MT: edges})
    x = rng.normal(size=(n, 3))
    cfg = MagcConfig(out_width=4)
    layer = MagcLayer(3, cfg, np.random.default_rng(7))
    w = rng.normal(size=(n, 4))

    def loss():
        out = magc_forward(g, MT, T.Tensor(x), cfg, layer.linear, 2.0)
        return T.tsum(T.mul(out, w))

    loss().backward()
    for name, p in layer.parameters():
        def f(pv, p=p):
            keep = p.data.copy()
            p.data[...] = pv
            val = loss().item()
            p.data[...] = keep
            return val

        oracle = T.finite_difference_gradient(f, p.data.copy(), h=1e-5)
        denom = np.maximum(np.abs(oracle), 1.0)
        assert (np.abs(p.grad - oracle) / denom).max() < 1e-4, name


def test_empty_neighbourhood_rejected_without_self_loop():
    g = Graph(3, {MT: np.array([[0, 1], [1, 2]])})
    with pytest.raises(ValueError, match="empty neighbourhood"):
        g.wiring(MT)


def test_degree_stats():
    triangle = np.array([[0, 1], [1, 0], [1, 2], [2, 1], [0, 2], [2, 0]])
    g1 = Graph(3, {MT: triangle})
    stats = compute_degree_stats([g1], [MT])
    assert stats.get(MT) == 2.0

    # mean degree 4 on three nodes: 12 directed edges
    rng = np.random.default_rng(8)
    edges4 = np.array([[s, d] for d in range(3) for s in rng.integers(0, 3, 4)])
    g2 = Graph(3, {MT: edges4})
    stats2 = compute_degree_stats([g1, g2], [MT])
    assert stats2.get(MT) == 3.0


def test_degree_stats_missing_kind_message():
    stats = DegreeStats(values={})
    with pytest.raises(KeyError, match="compute_degree_stats"):
        stats.get(MT)
    with pytest.raises(ValueError, match="empty training split"):
        compute_degree_stats([], [MT])


def test_config_validation():
    with pytest.raises(ValueError):
        MagcConfig(aggregators=())
    with pytest.raises(ValueError):
        MagcConfig(scalers=("identity", "bogus"))
    with pytest.raises(ValueError):
        MagcConfig(edge_fn="sum")
    cfg = MagcConfig(aggregators=("std", "max"), scalers=("attenuation", "identity"))
    assert cfg.aggregators == ("max", "std")  # canonical order
    assert cfg.scalers == ("identity", "attenuation")
