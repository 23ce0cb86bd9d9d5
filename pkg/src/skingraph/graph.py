"""Typed graphs and the multi-aggregator graph convolution (MAGC).

A layer computes one message per directed edge, reduces each node's
incoming messages with several aggregators (max, min, mean, std),
rescales every aggregation with logarithmic degree scalers, and fuses
the concatenated blocks through a linear + ReLU. Block order is fixed:
aggregators major (max, min, mean, std), scalers minor (identity,
amplification, attenuation). Checkpoints depend on that order.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import _kernels
from .nn import Linear
from .tensor import (
    Tensor,
    _op,
    as_tensor,
    concat,
    gather_rows,
    mul,
    relu,
    segment_max,
    segment_mean,
    segment_min,
    segment_std,
    sub,
)

AGGREGATOR_ORDER = ("max", "min", "mean", "std")
SCALER_ORDER = ("identity", "amplification", "attenuation")

MESH_VERTEX = 0
SKELETON_JOINT = 1


class NeighbourhoodKind(str, Enum):
    MESH_TOPOLOGY = "mesh_topology"
    MESH_RADIUS = "mesh_radius"
    SKELETON_TOPOLOGY = "skeleton_topology"
    BINDING = "binding"


class _Wiring:
    """Per-(graph, kind) edge layout: in-edges grouped by destination.

    Edges are stably sorted by destination so segment reductions run on
    contiguous blocks in original edge order, keeping reductions
    deterministic for any input edge ordering of the same multiset.
    """

    def __init__(self, edges, node_count):
        src = edges[:, 0]
        dst = edges[:, 1]
        counts = np.bincount(dst, minlength=node_count).astype(np.int64)
        if (counts == 0).any():
            missing = int(np.flatnonzero(counts == 0)[0])
            raise ValueError(
                "empty neighbourhood: node %d has no incoming edges "
                "(insert a self-loop)" % missing
            )
        order = np.argsort(dst, kind="stable")
        self.src = src[order]
        self.counts = counts
        self.starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
        self.seg_ids = np.repeat(np.arange(node_count, dtype=np.int64), counts)
        self.degrees = counts


class Graph:
    """Typed nodes plus directed edge lists keyed by neighbourhood kind."""

    def __init__(self, node_count, edge_sets, node_kind=None):
        self.node_count = int(node_count)
        self.edge_sets = {}
        for kind, edges in edge_sets.items():
            kind = NeighbourhoodKind(kind)
            edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
            if edges.size and (edges.min() < 0 or edges.max() >= self.node_count):
                raise ValueError("edge endpoint out of range for kind %s" % kind.value)
            self.edge_sets[kind] = edges
        if node_kind is None:
            node_kind = np.full(self.node_count, MESH_VERTEX, dtype=np.int8)
        self.node_kind = np.asarray(node_kind, dtype=np.int8)
        self.features = None
        self._wiring = {}

    def wiring(self, kind):
        kind = NeighbourhoodKind(kind)
        w = self._wiring.get(kind)
        if w is None:
            if kind not in self.edge_sets:
                raise KeyError("graph has no %s edges" % kind.value)
            w = _Wiring(self.edge_sets[kind], self.node_count)
            self._wiring[kind] = w
        return w

    def in_degrees(self, kind):
        return self.wiring(kind).degrees


def add_self_loops_for_isolated(edges, node_count):
    """Append (i, i) for every node with no incoming edge."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    counts = np.bincount(edges[:, 1], minlength=node_count)
    isolated = np.flatnonzero(counts == 0)
    if isolated.size == 0:
        return edges
    loops = np.stack([isolated, isolated], axis=1)
    return np.concatenate([edges, loops], axis=0)


@dataclass
class DegreeStats:
    """Mean in-degree of the training split, one value per edge kind."""

    values: dict
    source: str = "computed"

    def get(self, kind):
        kind = NeighbourhoodKind(kind)
        value = self.values.get(kind.value)
        if value is None:
            raise KeyError(
                "no d_train recorded for kind %r: run compute_degree_stats on "
                "the training split or load stats from a checkpoint" % kind.value
            )
        if value <= 0.0:
            raise ValueError("d_train must be positive, got %r" % value)
        return float(value)

    def as_dict(self):
        return dict(self.values)


def compute_degree_stats(graphs, kinds):
    """Arithmetic mean in-degree over all nodes of all graphs, per kind."""
    graphs = list(graphs)
    if not graphs:
        raise ValueError("empty training split")
    values = {}
    for kind in kinds:
        kind = NeighbourhoodKind(kind)
        degrees = np.concatenate([g.in_degrees(kind) for g in graphs])
        values[kind.value] = float(degrees.mean())
    return DegreeStats(values=values, source="computed")


@dataclass(frozen=True)
class MagcConfig:
    """Which aggregators and scalers a MAGC layer combines."""

    aggregators: tuple = AGGREGATOR_ORDER
    scalers: tuple = SCALER_ORDER
    out_width: int = 0
    edge_fn: str = "concat_diff"

    def __post_init__(self):
        aggs = tuple(a for a in AGGREGATOR_ORDER if a in set(self.aggregators))
        scals = tuple(s for s in SCALER_ORDER if s in set(self.scalers))
        if not aggs or len(aggs) != len(set(self.aggregators)):
            raise ValueError("unknown or empty aggregator set %r" % (self.aggregators,))
        if not scals or len(scals) != len(set(self.scalers)):
            raise ValueError("unknown or empty scaler set %r" % (self.scalers,))
        if self.edge_fn not in ("concat_diff", "diff"):
            raise ValueError("unknown edge function %r" % (self.edge_fn,))
        object.__setattr__(self, "aggregators", aggs)
        object.__setattr__(self, "scalers", scals)

    @property
    def n_blocks(self):
        return len(self.aggregators) * len(self.scalers)

    def message_width(self, feature_width):
        return 2 * feature_width if self.edge_fn == "concat_diff" else feature_width

    def pre_mlp_width(self, feature_width):
        return self.n_blocks * self.message_width(feature_width)


def edge_message(x_src, x_dst, edge_fn="concat_diff"):
    """Message sent along one edge: concat(central, neighbour - central).

    x_dst is the central (receiving) node. The asymmetric offset follows
    the edge-convolution convention; "diff" keeps only the offset.
    """
    x_src = np.asarray(x_src, dtype=np.float64)
    x_dst = np.asarray(x_dst, dtype=np.float64)
    if x_src.shape != x_dst.shape:
        raise ValueError("feature widths differ: %r vs %r" % (x_src.shape, x_dst.shape))
    if edge_fn == "diff":
        return x_src - x_dst
    return np.concatenate([x_dst, x_src - x_dst])


def aggregate(messages, which):
    """Reduce a [M, E] stack of messages to [E] with one aggregator."""
    messages = np.asarray(messages, dtype=np.float64)
    if messages.ndim != 2 or messages.shape[0] == 0:
        raise ValueError("empty neighbourhood")
    if which == "max":
        return messages.max(axis=0)
    if which == "min":
        return messages.min(axis=0)
    if which == "mean":
        return messages.mean(axis=0)
    if which == "std":
        return messages.std(axis=0)
    raise ValueError("unknown aggregator %r" % (which,))


def scaler_value(degree, d_train, which):
    """Logarithmic degree scaler, shifted by +1 to stay finite at degree 1."""
    if degree < 1:
        raise ValueError("degree must be >= 1, got %r" % (degree,))
    if d_train <= 0.0:
        raise ValueError("d_train must be positive, got %r" % (d_train,))
    if which == "identity":
        return 1.0
    amp = np.log(degree + 1.0) / np.log(d_train + 1.0)
    if which == "amplification":
        return float(amp)
    if which == "attenuation":
        return float(1.0 / amp)
    raise ValueError("unknown scaler %r" % (which,))


def scale(aggregated, degree, d_train, which):
    """Apply one degree scaler to an aggregated message vector."""
    return np.asarray(aggregated, dtype=np.float64) * scaler_value(degree, d_train, which)


def _scaler_column(degrees, d_train, which):
    if which == "identity":
        return None
    amp = np.log(degrees + 1.0) / np.log(d_train + 1.0)
    col = amp if which == "amplification" else 1.0 / amp
    return col[:, None]


def magc_messages(graph, kind, x, edge_fn="concat_diff"):
    """All edge messages for one kind, rows grouped by destination node."""
    w = graph.wiring(kind)
    x = as_tensor(x)
    x_src = gather_rows(x, w.src)
    x_dst = gather_rows(x, w.seg_ids)
    offset = sub(x_src, x_dst)
    if edge_fn == "diff":
        return offset
    return concat([x_dst, offset], axis=1)


_SEGMENT_AGG = {
    "max": segment_max,
    "min": segment_min,
    "mean": segment_mean,
    "std": segment_std,
}


def magc_pre_mlp(graph, kind, x, cfg, d_train):
    """Concatenation of every aggregator x scaler block, before the MLP."""
    w = graph.wiring(kind)
    messages = magc_messages(graph, kind, x, cfg.edge_fn)
    degrees = w.degrees.astype(np.float64)
    blocks = []
    for agg in cfg.aggregators:
        reduced = _SEGMENT_AGG[agg](messages, w.starts, w.counts, w.seg_ids)
        for scaler in cfg.scalers:
            col = _scaler_column(degrees, d_train, scaler)
            blocks.append(reduced if col is None else mul(reduced, col))
    return concat(blocks, axis=1)


def magc_forward(graph, kind, x, cfg, linear, d_train):
    """One MAGC layer: messages -> aggregate -> scale -> fuse (linear+ReLU).

    Runs the fused implementation; it computes exactly the same function
    as relu(linear(magc_pre_mlp(...))) but aggregates the two message
    halves separately and applies the fusion weights block by block, so
    the wide concatenation never materializes. The central-feature half
    of every message is constant per neighbourhood, which turns its
    max / min into the node feature itself and its std into zero.
    """
    return _fused_magc(graph, kind, x, cfg, linear.weight, linear.bias, d_train)


def _fused_magc(graph, kind, x, cfg, weight, bias, d_train):
    w = graph.wiring(kind)
    x = as_tensor(x)
    xd = x.data
    n_nodes, feat = xd.shape
    out_width = weight.data.shape[1]
    if weight.data.shape[0] != cfg.pre_mlp_width(feat):
        raise ValueError(
            "fusion weights expect width %d, input gives %d"
            % (weight.data.shape[0], cfg.pre_mlp_width(feat))
        )
    concat_mode = cfg.edge_fn == "concat_diff"
    msg_width = cfg.message_width(feat)
    counts_col = w.counts[:, None].astype(np.float64)
    degrees = w.degrees.astype(np.float64)

    x_src = xd[w.src]
    x_dst = xd[w.seg_ids]
    offset = x_src - x_dst

    aggs = cfg.aggregators
    has_max = "max" in aggs
    has_min = "min" in aggs
    has_mean = "mean" in aggs
    has_std = "std" in aggs
    need_meanstd = has_mean or has_std
    n_rows = len(offset)
    empty2 = np.empty((0, 0))
    out_max = np.empty((n_nodes, feat)) if has_max else empty2
    out_min = np.empty((n_nodes, feat)) if has_min else empty2
    out_mean = np.empty((n_nodes, feat)) if need_meanstd else empty2
    out_std = np.empty((n_nodes, feat)) if need_meanstd else empty2
    centered = np.empty((n_rows, feat)) if need_meanstd else empty2
    _kernels.magc_reduce_forward(
        offset, w.starts, w.counts, has_max, has_min, need_meanstd,
        out_max, out_min, out_mean, centered, out_std,
    )
    off_reduced = {}
    if has_max:
        off_reduced["max"] = out_max
    if has_min:
        off_reduced["min"] = out_min
    if has_mean:
        off_reduced["mean"] = out_mean
    if has_std:
        off_reduced["std"] = out_std
    first_reduced = {}
    if concat_mode:
        for agg in aggs:
            if agg == "std":
                first_reduced[agg] = None  # constant half: std is zero
            elif agg == "mean":
                first_reduced[agg] = (
                    _kernels.segment_sum(x_dst, w.starts, w.counts) / counts_col
                )
            else:
                first_reduced[agg] = xd

    scaler_cols = {
        s: _scaler_column(degrees, d_train, s) for s in cfg.scalers
    }

    pre = np.broadcast_to(bias.data, (n_nodes, out_width)).copy() \
        if bias is not None else np.zeros((n_nodes, out_width))
    wd = weight.data
    for ai, agg in enumerate(aggs):
        for si, scaler in enumerate(cfg.scalers):
            row = (ai * len(cfg.scalers) + si) * msg_width
            if concat_mode:
                term = off_reduced[agg] @ wd[row + feat:row + 2 * feat]
                if first_reduced[agg] is not None:
                    term += first_reduced[agg] @ wd[row:row + feat]
            else:
                term = off_reduced[agg] @ wd[row:row + feat]
            col = scaler_cols[scaler]
            pre += term if col is None else col * term
    mask = pre > 0.0
    data = np.where(mask, pre, 0.0)

    parents = [p for p in (x, weight, bias) if p is not None]
    if not any(p.requires_grad for p in parents):
        return Tensor(data)

    def backward(g):
        g0 = g * mask
        gs = {
            s: g0 if col is None else col * g0
            for s, col in scaler_cols.items()
        }
        d_weight = np.zeros_like(wd) if weight.requires_grad else None
        d_first = {}
        d_off = {}
        for ai, agg in enumerate(aggs):
            for si, scaler in enumerate(cfg.scalers):
                row = (ai * len(cfg.scalers) + si) * msg_width
                g_s = gs[scaler]
                off_rows = slice(row + feat, row + 2 * feat) if concat_mode \
                    else slice(row, row + feat)
                if d_weight is not None:
                    d_weight[off_rows] = off_reduced[agg].T @ g_s
                if x.requires_grad:
                    held = d_off.get(agg)
                    grad = g_s @ wd[off_rows].T
                    d_off[agg] = grad if held is None else held + grad
                if concat_mode and first_reduced[agg] is not None:
                    if d_weight is not None:
                        d_weight[row:row + feat] = first_reduced[agg].T @ g_s
                    if x.requires_grad:
                        held = d_first.get(agg)
                        grad = g_s @ wd[row:row + feat].T
                        d_first[agg] = grad if held is None else held + grad
        d_x = None
        if x.requires_grad:
            d_offset = np.empty_like(offset)
            _kernels.magc_reduce_backward(
                offset, w.starts, w.counts,
                has_max, out_max, d_off.get("max", empty2),
                has_min, out_min, d_off.get("min", empty2),
                has_mean, d_off.get("mean", empty2),
                has_std, centered, out_std, d_off.get("std", empty2),
                d_offset,
            )
            d_x = _kernels.scatter_add(d_offset, w.src, n_nodes)
            d_x -= _kernels.segment_sum(d_offset, w.starts, w.counts)
            # the constant half reduces to the node feature itself (max,
            # min, mean alike), so its gradient routes through unchanged
            for upstream in d_first.values():
                d_x += upstream
        grads = [d_x, d_weight, g0.sum(axis=0) if bias is not None else None]
        return tuple(g for p, g in zip((x, weight, bias), grads) if p is not None)

    return _op(data, tuple(parents), backward)


class MagcLayer:
    """MAGC with its fusion weights bound to one input width."""

    def __init__(self, in_width, cfg, rng):
        self.cfg = cfg
        self.in_width = int(in_width)
        self.linear = Linear(cfg.pre_mlp_width(in_width), cfg.out_width, rng)

    def __call__(self, graph, kind, x, d_train):
        if x.data.shape[1] != self.in_width:
            raise ValueError(
                "MAGC expects width %d, got %r" % (self.in_width, x.data.shape)
            )
        return magc_forward(graph, kind, x, self.cfg, self.linear, d_train)

    def parameters(self):
        return [("fuse.%s" % n, p) for n, p in self.linear.parameters()]
