"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records its inputs and a backward closure, so calling
``backward()`` on a scalar loss walks the recorded graph once and
accumulates exact chain-rule gradients into the participating leaves.
Everything is float64 and deterministic: fixed reduction orders, no
threading, no in-place mutation of recorded values.
"""

import numpy as np

from . import _kernels


class Tensor:
    """N-d float64 array that participates in gradient recording.

    Leaves created with ``requires_grad=True`` carry a zero-initialised
    ``grad`` buffer; ``backward()`` accumulates into it. Intermediate
    results keep ``grad=None`` and are only used transiently.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable leaf's grad.

        Only defined for scalar tensors (a loss value).
        """
        if self.data.size != 1:
            raise ValueError(
                "backward requires a scalar loss, got shape %r" % (self.data.shape,)
            )
        order = _topo_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is not None:
                for parent, pg in zip(node._parents, node._backward(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    key = id(parent)
                    held = grads.get(key)
                    grads[key] = pg if held is None else held + pg
            elif node.grad is not None:
                node.grad += g

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def __repr__(self):
        return "Tensor(shape=%r, requires_grad=%r)" % (self.shape, self.requires_grad)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _op(data, parents, backward):
    out = object.__new__(Tensor)
    out.data = data
    out.requires_grad = True
    out.grad = None
    out._parents = parents
    out._backward = backward
    return out


def _topo_order(root):
    """Root-first topological order over the gradient-carrying subgraph."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        nid = id(node)
        if nid in visited:
            continue
        visited.add(nid)
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


def _unbroadcast(g, shape):
    """Reduce gradient g back to the pre-broadcast shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data
    if not (a.requires_grad or b.requires_grad):
        return Tensor(data)

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _op(data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data
    if not (a.requires_grad or b.requires_grad):
        return Tensor(data)

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _op(data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data
    if not (a.requires_grad or b.requires_grad):
        return Tensor(data)

    def backward(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _op(data, (a, b), backward)


def neg(a):
    a = as_tensor(a)
    if not a.requires_grad:
        return Tensor(-a.data)
    return _op(-a.data, (a,), lambda g: (-g,))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-d operands")
    data = a.data @ b.data
    if not (a.requires_grad or b.requires_grad):
        return Tensor(data)

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _op(data, (a, b), backward)


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0.0
    data = np.where(mask, a.data, 0.0)
    if not a.requires_grad:
        return Tensor(data)
    return _op(data, (a,), lambda g: (g * mask,))


def log(a):
    a = as_tensor(a)
    data = np.log(a.data)
    if not a.requires_grad:
        return Tensor(data)
    return _op(data, (a,), lambda g: (g / a.data,))


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)
    if not a.requires_grad:
        return Tensor(data)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gx = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gx, a.data.shape).copy(),)

    return _op(np.asarray(data), (a,), backward)


def scale(a, c):
    """Multiply by a python float (no extra graph node for the constant)."""
    a = as_tensor(a)
    c = float(c)
    data = a.data * c
    if not a.requires_grad:
        return Tensor(data)
    return _op(data, (a,), lambda g: (g * c,))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    if not any(t.requires_grad for t in tensors):
        return Tensor(data)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _op(data, tuple(tensors), backward)


def gather_rows(a, idx):
    """Select rows a[idx]; backward scatter-adds into the source rows.

    The scatter accumulates strictly in edge order (compiled kernel), so
    repeated runs produce identical bits.
    """
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError("gather_rows expects a 2-d tensor")
    idx = np.asarray(idx, dtype=np.int64)
    data = a.data[idx]
    if not a.requires_grad:
        return Tensor(data)
    n_rows = a.data.shape[0]
    return _op(data, (a,), lambda g: (_kernels.scatter_add(g, idx, n_rows),))


def dropout(a, p, rng, training):
    """Inverted dropout: train-time scaling by 1/(1-p), identity at eval."""
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must be in [0, 1), got %r" % (p,))
    a = as_tensor(a)
    if not training or p == 0.0:
        return a
    mask = (rng.random(a.data.shape) >= p) / (1.0 - p)
    return mul(a, mask)


def masked_softmax(logits, mask):
    """Row-wise softmax restricted to slots where mask is nonzero.

    Masked slots come out exactly 0; rows with an all-zero mask come out
    as all zeros. mask is a constant (no gradient flows into it).
    """
    logits = as_tensor(logits)
    mask = np.asarray(mask, dtype=np.float64)
    valid = mask > 0.0
    z = np.where(valid, logits.data, -np.inf)
    zmax = z.max(axis=-1, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    e = np.exp(z - zmax)
    e = np.where(valid, e, 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    p = e / np.where(denom > 0.0, denom, 1.0)
    if not logits.requires_grad:
        return Tensor(p)

    def backward(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - inner),)

    return _op(p, (logits,), backward)


def segment_mean(x, starts, counts, seg_ids):
    """Per-segment mean over contiguous row segments of x.

    Sums run sequentially in row (edge-list) order, so the result equals
    a per-segment brute-force accumulation bit for bit.
    """
    x = as_tensor(x)
    counts_col = counts[:, None].astype(np.float64)
    data = _kernels.segment_sum(x.data, starts, counts) / counts_col
    if not x.requires_grad:
        return Tensor(data)

    def backward(g):
        return ((g / counts_col)[seg_ids],)

    return _op(data, (x,), backward)


def _segment_extremum(x, starts, counts, seg_ids, largest):
    x = as_tensor(x)
    data = _kernels.segment_extremum(x.data, starts, counts, largest)
    if not x.requires_grad:
        return Tensor(data)

    def backward(g):
        ties = (x.data == data[seg_ids]).astype(np.float64)
        tie_counts = _kernels.segment_sum(ties, starts, counts)
        return (ties * (g / tie_counts)[seg_ids],)

    return _op(data, (x,), backward)


def segment_max(x, starts, counts, seg_ids):
    """Per-segment max; tied slots split the gradient evenly."""
    return _segment_extremum(x, starts, counts, seg_ids, True)


def segment_min(x, starts, counts, seg_ids):
    return _segment_extremum(x, starts, counts, seg_ids, False)


def segment_std(x, starts, counts, seg_ids):
    """Per-segment population standard deviation (two-pass).

    The two-pass form keeps constant segments at exactly 0 (no
    cancellation noise). Singleton segments give exactly 0 too; the
    gradient there is the zero subgradient, so degree-1 neighbourhoods
    stay finite.
    """
    x = as_tensor(x)
    counts_col = counts[:, None].astype(np.float64)
    mean = _kernels.segment_sum(x.data, starts, counts) / counts_col
    centered = x.data - mean[seg_ids]
    var = _kernels.segment_sum(centered * centered, starts, counts) / counts_col
    std = np.sqrt(var)
    if not x.requires_grad:
        return Tensor(std)

    # treat numerically-degenerate segments (std at roundoff scale) as
    # flat: 1/std would amplify pure cancellation noise into O(1) junk
    active = std > 1e-12

    def backward(g):
        safe = np.where(active, counts_col * std, 1.0)
        coeff = np.where(active, g, 0.0) / safe
        return (coeff[seg_ids] * centered,)

    return _op(std, (x,), backward)


def reduce_max_rows(a):
    """Max-pool over axis 0, keepdims; ties split the gradient evenly."""
    a = as_tensor(a)
    data = a.data.max(axis=0, keepdims=True)
    if not a.requires_grad:
        return Tensor(data)

    def backward(g):
        ties = (a.data == data).astype(np.float64)
        return (ties * (g / ties.sum(axis=0, keepdims=True)),)

    return _op(data, (a,), backward)


def reduce_mean_rows(a):
    a = as_tensor(a)
    n = a.data.shape[0]
    return scale(tsum(a, axis=0, keepdims=True), 1.0 / n)


def broadcast_rows(a, n):
    """Tile a [1, F] row to [n, F]; backward sums the rows back."""
    a = as_tensor(a)
    if a.data.shape[0] != 1:
        raise ValueError("broadcast_rows expects a single-row tensor")
    data = np.broadcast_to(a.data, (n,) + a.data.shape[1:]).copy()
    if not a.requires_grad:
        return Tensor(data)
    return _op(data, (a,), lambda g: (g.sum(axis=0, keepdims=True),))


def finite_difference_gradient(f, x, h=1e-5):
    """Central-difference gradient of scalar f at ndarray x.

    Independent oracle for checking backward(); f must not mutate x.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        hi = f(x)
        flat[i] = keep - h
        lo = f(x)
        flat[i] = keep
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad
