import math

import numpy as np
import pytest

from skingraph import tensor as T
from skingraph.nn import Linear, Mlp, MlpSpec, kl_loss, mlp_forward, uniform_init


def test_identity_layer_is_identity():
    mlp = Mlp(3, MlpSpec(layer_widths=(3,), activation=("none",)), np.random.default_rng(0))
    mlp.layers[0].weight.data[...] = np.eye(3)
    mlp.layers[0].bias.data[...] = 0.0
    x = np.random.default_rng(1).normal(size=(5, 3))
    out = mlp_forward(mlp, T.Tensor(x)).data
    assert np.array_equal(out, x)


def test_eval_mode_ignores_dropout_seed():
    spec = MlpSpec(layer_widths=(4, 4), dropout_before=(0.5, 0.5))
    mlp = Mlp(4, spec, np.random.default_rng(0))
    x = T.Tensor(np.random.default_rng(2).normal(size=(6, 4)))
    a = mlp_forward(mlp, x, training=False).data
    b = mlp_forward(mlp, x, training=False, rng=np.random.default_rng(77)).data
    assert np.array_equal(a, b)


def test_head_shape_matches_widths():
    k = 5
    mlp = Mlp(64, MlpSpec(layer_widths=(64, 32, k)), np.random.default_rng(0))
    out = mlp_forward(mlp, T.Tensor(np.zeros((7, 64))))
    assert out.data.shape == (7, k)


def test_shape_mismatch_rejected():
    mlp = Mlp(4, MlpSpec(layer_widths=(2,)), np.random.default_rng(0))
    with pytest.raises(ValueError):
        mlp_forward(mlp, T.Tensor(np.zeros((3, 5))))


def test_uniform_init_bound():
    w = uniform_init(np.random.default_rng(0), 30, 50)
    bound = math.sqrt(6.0 / 80.0)
    assert np.abs(w).max() <= bound
    assert np.abs(w).max() > 0.5 * bound


def test_mlp_gradient_against_finite_differences():
    # 3-layer MLP, per-coordinate central differences at h=1e-5
    rng = np.random.default_rng(3)
    mlp = Mlp(4, MlpSpec(layer_widths=(6, 5, 3)), rng)
    x = rng.normal(size=(8, 4))
    target = rng.normal(size=(8, 3))

    def loss_value():
        out = mlp_forward(mlp, T.Tensor(x))
        diff = T.sub(out, target)
        return T.tsum(T.mul(diff, diff))

    loss_value().backward()
    for name, p in mlp.parameters():
        def f(pv, p=p):
            keep = p.data.copy()
            p.data[...] = pv
            val = loss_value().item()
            p.data[...] = keep
            return val

        oracle = T.finite_difference_gradient(f, p.data.copy(), h=1e-5)
        denom = np.maximum(np.abs(oracle), 1.0)
        err = np.abs(p.grad - oracle) / denom
        assert err.max() < 1e-4, "%s: %.3e" % (name, err.max())


def test_kl_zero_when_equal():
    target = np.array([[0.3, 0.7], [0.5, 0.5]])
    mask = np.ones_like(target)
    loss = kl_loss(target, T.Tensor(target), mask)
    assert abs(loss.item()) < 1e-9


def test_kl_known_value():
    # direct evaluation of sum p * log(p/q)
    target = np.array([[0.5, 0.5]])
    pred = np.array([[0.25, 0.75]])
    expected = 0.5 * math.log(0.5 / 0.25) + 0.5 * math.log(0.5 / 0.75)
    loss = kl_loss(target, T.Tensor(pred), np.ones_like(target))
    assert abs(loss.item() - expected) < 1e-9
    assert abs(expected - 0.14384) < 5e-6


def test_kl_masked_rows_excluded():
    target = np.array([[0.5, 0.5], [0.2, 0.8]])
    pred = np.array([[0.25, 0.75], [0.2, 0.8]])
    mask = np.array([[1.0, 1.0], [0.0, 0.0]])
    only_first = kl_loss(target, T.Tensor(pred), mask)
    full_first = kl_loss(target[:1], T.Tensor(pred[:1]), mask[:1])
    assert abs(only_first.item() - full_first.item()) < 1e-12

    with pytest.raises(ValueError, match="no valid rows"):
        kl_loss(target, T.Tensor(pred), np.zeros_like(mask))


def test_kl_rejects_negative_entries():
    target = np.array([[1.1, -0.1]])
    with pytest.raises(ValueError):
        kl_loss(target, T.Tensor(np.array([[0.5, 0.5]])), np.ones((1, 2)))


def test_kl_nonnegative_random_distributions():
    rng = np.random.default_rng(4)
    for _ in range(50):
        t = rng.random((3, 4))
        t /= t.sum(axis=1, keepdims=True)
        q = rng.random((3, 4))
        q /= q.sum(axis=1, keepdims=True)
        loss = kl_loss(t, T.Tensor(q), np.ones_like(t))
        assert loss.item() >= -1e-12


def test_kl_gradient_against_finite_differences():
    rng = np.random.default_rng(5)
    t = rng.random((4, 3))
    t /= t.sum(axis=1, keepdims=True)
    q = rng.random((4, 3))
    q /= q.sum(axis=1, keepdims=True)
    mask = np.ones_like(t)
    mask[2] = 0.0
    pred = T.Tensor(q, requires_grad=True)
    kl_loss(t, pred, mask).backward()

    def f(qv):
        mt = mask * t
        n_valid = (mask > 0).any(axis=1).sum()
        return float((mt * (np.log(t + 1e-12) - np.log(qv + 1e-12))).sum() / n_valid)

    oracle = T.finite_difference_gradient(f, q.copy(), h=1e-6)
    assert np.abs(pred.grad - oracle).max() < 1e-4
