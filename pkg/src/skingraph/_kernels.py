"""Compiled segment/scatter kernels.

All reductions run strictly sequentially in row order, so results are
reproducible bit for bit and segment means match a per-node brute-force
accumulation exactly.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def seg_sum(x, starts, counts, out):
    n = starts.shape[0]
    width = x.shape[1]
    for s in range(n):
        base = starts[s]
        for e in range(counts[s]):
            row = base + e
            for f in range(width):
                out[s, f] += x[row, f]


@numba.njit(cache=True)
def seg_max(x, starts, counts, out):
    n = starts.shape[0]
    width = x.shape[1]
    for s in range(n):
        base = starts[s]
        for f in range(width):
            out[s, f] = x[base, f]
        for e in range(1, counts[s]):
            row = base + e
            for f in range(width):
                if x[row, f] > out[s, f]:
                    out[s, f] = x[row, f]


@numba.njit(cache=True)
def seg_min(x, starts, counts, out):
    n = starts.shape[0]
    width = x.shape[1]
    for s in range(n):
        base = starts[s]
        for f in range(width):
            out[s, f] = x[base, f]
        for e in range(1, counts[s]):
            row = base + e
            for f in range(width):
                if x[row, f] < out[s, f]:
                    out[s, f] = x[row, f]


@numba.njit(cache=True)
def scatter_sum(x, idx, out):
    rows, width = x.shape
    for e in range(rows):
        t = idx[e]
        for f in range(width):
            out[t, f] += x[e, f]


@numba.njit(cache=True)
def magc_reduce_forward(x, starts, counts, do_max, do_min, do_meanstd,
                        out_max, out_min, out_mean, centered, out_std):
    """All aggregator forwards in two row sweeps per segment.

    Per-feature accumulation visits rows in ascending order, matching the
    sequential seg_sum semantics bit for bit.
    """
    n = starts.shape[0]
    width = x.shape[1]
    hi = np.empty(width)
    lo = np.empty(width)
    acc = np.empty(width)
    for s in range(n):
        base = starts[s]
        c = counts[s]
        for f in range(width):
            v = x[base, f]
            hi[f] = v
            lo[f] = v
            acc[f] = v
        for e in range(1, c):
            row = base + e
            for f in range(width):
                v = x[row, f]
                if v > hi[f]:
                    hi[f] = v
                if v < lo[f]:
                    lo[f] = v
                acc[f] += v
        if do_max:
            for f in range(width):
                out_max[s, f] = hi[f]
        if do_min:
            for f in range(width):
                out_min[s, f] = lo[f]
        if do_meanstd:
            for f in range(width):
                out_mean[s, f] = acc[f] / c
                acc[f] = 0.0
            for e in range(c):
                row = base + e
                for f in range(width):
                    d = x[row, f] - out_mean[s, f]
                    centered[row, f] = d
                    acc[f] += d * d
            for f in range(width):
                out_std[s, f] = np.sqrt(acc[f] / c)


@numba.njit(cache=True)
def magc_reduce_backward(offset, starts, counts,
                         has_max, out_max, up_max,
                         has_min, out_min, up_min,
                         has_mean, up_mean,
                         has_std, centered, out_std, up_std,
                         d_offset):
    """Route the aggregator upstream gradients back to the offsets.

    Max / min split evenly across ties; std uses the zero subgradient
    when the segment deviation is at roundoff scale.
    """
    width = offset.shape[1]
    tie_max = np.empty(width)
    tie_min = np.empty(width)
    g_mean = np.empty(width)
    g_std = np.empty(width)
    for s in range(starts.shape[0]):
        base = starts[s]
        c = counts[s]
        if has_max or has_min:
            for f in range(width):
                tie_max[f] = 0.0
                tie_min[f] = 0.0
            for e in range(c):
                row = base + e
                for f in range(width):
                    if has_max and offset[row, f] == out_max[s, f]:
                        tie_max[f] += 1.0
                    if has_min and offset[row, f] == out_min[s, f]:
                        tie_min[f] += 1.0
            for f in range(width):
                if has_max:
                    tie_max[f] = up_max[s, f] / tie_max[f]
                if has_min:
                    tie_min[f] = up_min[s, f] / tie_min[f]
        for f in range(width):
            g_mean[f] = up_mean[s, f] / c if has_mean else 0.0
            if has_std and out_std[s, f] > 1e-12:
                g_std[f] = up_std[s, f] / (c * out_std[s, f])
            else:
                g_std[f] = 0.0
        for e in range(c):
            row = base + e
            for f in range(width):
                g = g_mean[f]
                if has_std:
                    g += g_std[f] * centered[row, f]
                if has_max and offset[row, f] == out_max[s, f]:
                    g += tie_max[f]
                if has_min and offset[row, f] == out_min[s, f]:
                    g += tie_min[f]
                d_offset[row, f] = g


def segment_sum(x, starts, counts, n_out=None):
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.zeros((len(starts) if n_out is None else n_out, x.shape[1]))
    seg_sum(x, starts, counts, out)
    return out


def segment_extremum(x, starts, counts, largest):
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty((len(starts), x.shape[1]))
    (seg_max if largest else seg_min)(x, starts, counts, out)
    return out


def scatter_add(x, idx, n_rows):
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.zeros((n_rows, x.shape[1]))
    scatter_sum(x, np.ascontiguousarray(idx, dtype=np.int64), out)
    return out
