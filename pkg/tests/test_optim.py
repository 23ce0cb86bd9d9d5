import numpy as np
import pytest

from skingraph.optim import RAdam
from skingraph.tensor import Tensor


def test_zero_gradient_zero_decay_is_identity():
    p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    opt = RAdam([("p", p)], learning_rate=1e-2, weight_decay=0.0)
    before = p.data.copy()
    for _ in range(10):
        opt.step()
    assert np.array_equal(p.data, before)
    assert opt.step_count == 10


def test_quadratic_convergence():
    # f(w) = (w - 3)^2, convex; run the optimizer and check the iterate
    w = Tensor(np.array([0.0]), requires_grad=True)
    opt = RAdam([("w", w)], learning_rate=1e-2, weight_decay=0.0)
    for _ in range(2000):
        w.zero_grad()
        w.grad[...] = 2.0 * (w.data - 3.0)
        opt.step()
    assert abs(w.data[0] - 3.0) < 1e-2


def test_default_hyperparameters():
    p = Tensor(np.zeros(1), requires_grad=True)
    opt = RAdam([("p", p)])
    assert opt.learning_rate == 1e-4
    assert opt.weight_decay == 1e-4
    assert opt.beta1 == 0.9
    assert opt.beta2 == 0.999


def test_non_finite_gradient_names_parameter():
    p = Tensor(np.zeros(2), requires_grad=True)
    opt = RAdam([("stage2.weight", p)])
    p.grad[...] = [1.0, np.nan]
    with pytest.raises(FloatingPointError, match="stage2.weight"):
        opt.step()


def test_decoupled_weight_decay_shrinks_params():
    p = Tensor(np.array([10.0]), requires_grad=True)
    opt = RAdam([("p", p)], learning_rate=1e-2, weight_decay=0.1)
    opt.step()  # zero gradient, decay only
    assert np.allclose(p.data, 10.0 * (1.0 - 1e-2 * 0.1))


def test_update_is_deterministic():
    def run():
        rng = np.random.default_rng(3)
        p = Tensor(rng.normal(size=5), requires_grad=True)
        opt = RAdam([("p", p)], learning_rate=1e-3)
        for i in range(50):
            p.zero_grad()
            p.grad[...] = np.sin(p.data + i)
            opt.step()
        return p.data.copy()

    assert np.array_equal(run(), run())


def test_moment_shapes_track_parameters():
    a = Tensor(np.zeros((2, 3)), requires_grad=True)
    b = Tensor(np.zeros(4), requires_grad=True)
    opt = RAdam([("a", a), ("b", b)])
    assert opt.first_moment[0].shape == (2, 3)
    assert opt.second_moment[1].shape == (4,)
