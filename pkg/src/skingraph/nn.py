"""Linear layers, MLP stacks and the masked KL-divergence loss."""

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, add, as_tensor, dropout, log, matmul, mul, relu, scale, tsum

LOG_EPS = 1e-12


def uniform_init(rng, fan_in, fan_out):
    """Uniform in +-sqrt(6 / (fan_in + fan_out))."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Linear:
    """y = x @ W + b with W drawn from the uniform fan init."""

    def __init__(self, in_width, out_width, rng, bias=True):
        self.in_width = int(in_width)
        self.out_width = int(out_width)
        self.weight = Tensor(uniform_init(rng, in_width, out_width), requires_grad=True)
        self.bias = Tensor(np.zeros(out_width), requires_grad=True) if bias else None

    def __call__(self, x):
        y = matmul(as_tensor(x), self.weight)
        if self.bias is not None:
            y = add(y, self.bias)
        return y

    def parameters(self):
        params = [("weight", self.weight)]
        if self.bias is not None:
            params.append(("bias", self.bias))
        return params


@dataclass(frozen=True)
class MlpSpec:
    """Per-layer output widths, activations and dropout placement.

    layer_widths are output widths; the input width comes from the data.
    activation entries are "relu" or "none"; dropout_before gives the
    keep-out probability applied to each layer's input at train time.
    """

    layer_widths: tuple
    activation: tuple = None
    dropout_before: tuple = None

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if not widths or any(w <= 0 for w in widths):
            raise ValueError("layer widths must be positive, got %r" % (widths,))
        object.__setattr__(self, "layer_widths", widths)
        act = self.activation
        if act is None:
            act = ("relu",) * len(widths)
        act = tuple(act)
        if len(act) != len(widths) or any(a not in ("relu", "none") for a in act):
            raise ValueError("bad activation spec %r" % (act,))
        object.__setattr__(self, "activation", act)
        drop = self.dropout_before
        if drop is None:
            drop = (0.0,) * len(widths)
        drop = tuple(float(p) for p in drop)
        if len(drop) != len(widths) or any(not 0.0 <= p <= 1.0 for p in drop):
            raise ValueError("dropout probabilities must lie in [0, 1]")
        object.__setattr__(self, "dropout_before", drop)


class Mlp:
    """Stack of Linear layers following an MlpSpec."""

    def __init__(self, in_width, spec, rng):
        self.spec = spec
        self.layers = []
        width = in_width
        for out_width in spec.layer_widths:
            self.layers.append(Linear(width, out_width, rng))
            width = out_width
        self.out_width = width

    def __call__(self, x, training=False, rng=None):
        return mlp_forward(self, x, training=training, rng=rng)

    def parameters(self):
        params = []
        for i, layer in enumerate(self.layers):
            for name, p in layer.parameters():
                params.append(("layer%d.%s" % (i, name), p))
        return params


def mlp_forward(mlp, x, training=False, rng=None):
    """Apply linear -> activation per layer, with train-time dropout.

    Dropout uses inverted scaling, so evaluation needs no rescale.
    """
    x = as_tensor(x)
    if x.data.ndim != 2 or x.data.shape[1] != mlp.layers[0].in_width:
        raise ValueError(
            "expected input [N, %d], got %r" % (mlp.layers[0].in_width, x.data.shape)
        )
    spec = mlp.spec
    for layer, act, p in zip(mlp.layers, spec.activation, spec.dropout_before):
        if p > 0.0 and training:
            if rng is None:
                raise ValueError("training-mode dropout needs an rng")
            x = dropout(x, p, rng, training=True)
        x = layer(x)
        if act == "relu":
            x = relu(x)
    return x


def kl_loss(target, predicted, mask):
    """Mean over valid rows of sum_slots mask * target * log(target/predicted).

    target and mask are constants; gradients flow into predicted only.
    Rows whose mask is entirely zero are excluded from the mean.
    """
    predicted = as_tensor(predicted)
    target = np.asarray(target, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if target.shape != predicted.data.shape or mask.shape != target.shape:
        raise ValueError("target, predicted and mask must share one shape")
    if (target < 0.0).any() or (predicted.data < 0.0).any():
        raise ValueError("distributions must be non-negative")
    row_valid = (mask > 0.0).any(axis=-1)
    n_valid = int(row_valid.sum())
    if n_valid == 0:
        raise ValueError("no valid rows")
    mt = mask * target
    const_term = float((mt * np.log(target + LOG_EPS)).sum())
    cross = tsum(mul(log(add(predicted, LOG_EPS)), mt))
    return scale(add(-cross, const_term), 1.0 / n_valid)
