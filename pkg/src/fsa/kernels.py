"""Compiled kernels for sampling, aggregation, gather and gradient scatter.

Bitwise contract: every parallel loop writes a disjoint set of output rows
and does its per-row work sequentially, so results never depend on the
worker count.  The uint64 RNG arithmetic mirrors fsa.rng exactly.
"""

from __future__ import annotations

import numpy as np

from . import parallel  # noqa: F401  (raises the numba thread cap first)
from numba import njit, prange

U64 = np.uint64

_GOLDEN = U64(0x9E3779B97F4A7C15)
_MIX1 = U64(0xBF58476D1CE4E5B9)
_MIX2 = U64(0x94D049BB133111EB)
_ROOT_MULT = U64(0xBF58476D1CE4E5B9)
_HOP_MULT = U64(0x94D049BB133111EB)
_INDEX_MULT = U64(0xD6E8FEB86659FD93)
_ONE = U64(1)


@njit(inline="always")
def _splitmix(z):
    z = (z ^ (z >> U64(30))) * _MIX1
    z = (z ^ (z >> U64(27))) * _MIX2
    return z ^ (z >> U64(31))


@njit(inline="always")
def _xorshift(x):
    x = x ^ (x << U64(13))
    x = x ^ (x >> U64(7))
    x = x ^ (x << U64(17))
    return x


@njit(inline="always")
def _derive(base_seed, root, hop, index):
    z = base_seed + _GOLDEN * (
        _ONE + U64(root) * _ROOT_MULT + U64(hop) * _HOP_MULT + U64(index) * _INDEX_MULT
    )
    s = _splitmix(z)
    if s == U64(0):
        s = _GOLDEN
    return s


@njit(inline="always")
def _reservoir_into(rowptr, col, node, k, state, out):
    # Vitter's Algorithm R over the CSR neighbor list; returns the take count.
    start = np.int64(rowptr[node])
    deg = np.int64(rowptr[node + 1]) - start
    if deg <= k:
        for i in range(deg):
            out[i] = col[start + i]
        return deg
    for i in range(k):
        out[i] = col[start + i]
    for i in range(k, deg):
        state = _xorshift(state)
        j = np.int64(state % U64(i + 1))
        if j < k:
            out[j] = col[start + i]
    return np.int64(k)


@njit(cache=True)
def derive_state(base_seed, root, hop, index):
    return _derive(base_seed, root, hop, index)


@njit(cache=True)
def xorshift_steps(state, n, out):
    for i in range(n):
        state = _xorshift(state)
        out[i] = state


# ---------------------------------------------------------------------------
# sampling stages (shared by the fused operator and the unfused baseline)
# ---------------------------------------------------------------------------

@njit(parallel=True, cache=True)
def sample_1hop(rowptr, col, seeds, k, base_seed, samples, takes):
    B = seeds.shape[0]
    for i in prange(B):
        row = samples[i]
        st = _derive(base_seed, i, 0, 0)
        take = _reservoir_into(rowptr, col, seeds[i], k, st, row)
        for j in range(take, k):
            row[j] = -1
        takes[i] = take


@njit(parallel=True, cache=True)
def sample_2hop(rowptr, col, seeds, k1, k2, base_seed, s1, s2, take1, take2):
    B = seeds.shape[0]
    for r in prange(B):
        u_row = s1[r]
        st = _derive(base_seed, r, 1, 0)
        t1 = _reservoir_into(rowptr, col, seeds[r], k1, st, u_row)
        for j in range(t1, k1):
            u_row[j] = -1
        take1[r] = t1
        for j in range(t1):
            w_row = s2[r, j]
            st2 = _derive(base_seed, r, 2, j)
            t2 = _reservoir_into(rowptr, col, u_row[j], k2, st2, w_row)
            for l in range(t2, k2):
                w_row[l] = -1
            take2[r, j] = t2
        for j in range(t1, k1):
            take2[r, j] = 0
            w_row = s2[r, j]
            for l in range(k2):
                w_row[l] = -1


# ---------------------------------------------------------------------------
# fused forward: sample + accumulate in one pass, no gathered feature block
# ---------------------------------------------------------------------------

@njit(parallel=True, cache=True)
def fused_1hop(rowptr, col, X, seeds, k, base_seed, save, samples, takes, out):
    B, D = out.shape
    for i in prange(B):
        if save:
            row = samples[i]
        else:
            row = np.empty(k, np.int32)
        st = _derive(base_seed, i, 0, 0)
        take = _reservoir_into(rowptr, col, seeds[i], k, st, row)
        if save:
            for j in range(take, k):
                row[j] = -1
            takes[i] = take
        acc = np.zeros_like(out[i])
        for j in range(take):
            xrow = X[row[j]]
            for d in range(D):
                acc[d] += xrow[d]
        den = np.empty_like(acc[:1])
        den[0] = max(np.int64(1), take)
        for d in range(D):
            out[i, d] = acc[d] / den[0]


@njit(parallel=True, cache=True)
def fused_2hop(rowptr, col, X, seeds, k1, k2, base_seed, save, s1, s2, take1, take2, out):
    B, D = out.shape
    for r in prange(B):
        if save:
            u_row = s1[r]
        else:
            u_row = np.empty(k1, np.int32)
        st = _derive(base_seed, r, 1, 0)
        t1 = _reservoir_into(rowptr, col, seeds[r], k1, st, u_row)
        if save:
            for j in range(t1, k1):
                u_row[j] = -1
            take1[r] = t1
        acc = np.zeros_like(out[r])
        acc2 = np.zeros_like(out[r])
        den = np.empty_like(acc[:2])
        w_local = np.empty(k2, np.int32)
        for j in range(t1):
            if save:
                w_row = s2[r, j]
            else:
                w_row = w_local
            st2 = _derive(base_seed, r, 2, j)
            t2 = _reservoir_into(rowptr, col, u_row[j], k2, st2, w_row)
            if save:
                for l in range(t2, k2):
                    w_row[l] = -1
                take2[r, j] = t2
            for d in range(D):
                acc2[d] = 0
            for l in range(t2):
                xrow = X[w_row[l]]
                for d in range(D):
                    acc2[d] += xrow[d]
            den[0] = max(np.int64(1), t2)
            for d in range(D):
                acc[d] += acc2[d] / den[0]
        if save:
            for j in range(t1, k1):
                take2[r, j] = 0
                w_row = s2[r, j]
                for l in range(k2):
                    w_row[l] = -1
        den[1] = max(np.int64(1), t1)
        for d in range(D):
            out[r, d] = acc[d] / den[1]


# ---------------------------------------------------------------------------
# baseline stages: gather materialized blocks, then aggregate from them
# ---------------------------------------------------------------------------

@njit(parallel=True, cache=True)
def gather_rows(X, ids, out):
    T, D = out.shape
    for t in prange(T):
        v = ids[t]
        if v < 0:
            for d in range(D):
                out[t, d] = 0
        else:
            xrow = X[v]
            for d in range(D):
                out[t, d] = xrow[d]


@njit(parallel=True, cache=True)
def agg_1hop_block(gathered, takes, k, out):
    B, D = out.shape
    for i in prange(B):
        take = takes[i]
        acc = np.zeros_like(out[i])
        for j in range(take):
            grow = gathered[i * k + j]
            for d in range(D):
                acc[d] += grow[d]
        den = np.empty_like(acc[:1])
        den[0] = max(np.int64(1), np.int64(take))
        for d in range(D):
            out[i, d] = acc[d] / den[0]


@njit(parallel=True, cache=True)
def partials_2hop_block(gathered, take1, take2, k1, k2, partials):
    BK1, D = partials.shape
    for rj in prange(BK1):
        r = rj // k1
        j = rj % k1
        if j >= take1[r]:
            for d in range(D):
                partials[rj, d] = 0
            continue
        acc2 = np.zeros_like(partials[rj])
        for l in range(take2[r, j]):
            grow = gathered[rj * k2 + l]
            for d in range(D):
                acc2[d] += grow[d]
        den = np.empty_like(acc2[:1])
        den[0] = max(np.int64(1), np.int64(take2[r, j]))
        for d in range(D):
            partials[rj, d] = acc2[d] / den[0]


@njit(parallel=True, cache=True)
def partials_2hop_dedup(gathered_uniq, remap, take1, take2, k1, k2, partials):
    BK1, D = partials.shape
    for rj in prange(BK1):
        r = rj // k1
        j = rj % k1
        if j >= take1[r]:
            for d in range(D):
                partials[rj, d] = 0
            continue
        acc2 = np.zeros_like(partials[rj])
        for l in range(take2[r, j]):
            grow = gathered_uniq[remap[rj * k2 + l]]
            for d in range(D):
                acc2[d] += grow[d]
        den = np.empty_like(acc2[:1])
        den[0] = max(np.int64(1), np.int64(take2[r, j]))
        for d in range(D):
            partials[rj, d] = acc2[d] / den[0]


@njit(parallel=True, cache=True)
def agg_2hop_from_partials(partials, take1, k1, out):
    B, D = out.shape
    for r in prange(B):
        acc = np.zeros_like(out[r])
        for j in range(take1[r]):
            prow = partials[r * k1 + j]
            for d in range(D):
                acc[d] += prow[d]
        den = np.empty_like(acc[:1])
        den[0] = max(np.int64(1), np.int64(take1[r]))
        for d in range(D):
            out[r, d] = acc[d] / den[0]


# ---------------------------------------------------------------------------
# backward: deterministic scatter via a target-major inverted index
# ---------------------------------------------------------------------------

@njit(cache=True)
def invert_targets(ids, num_nodes):
    # Counting sort of valid sample slots by target node.  Buckets keep slot
    # order ascending, which fixes the gradient accumulation order.
    T = ids.shape[0]
    offsets = np.zeros(num_nodes + 1, np.int64)
    total = 0
    for t in range(T):
        v = ids[t]
        if v >= 0:
            offsets[v + 1] += 1
            total += 1
    num_touched = 0
    for v in range(num_nodes):
        if offsets[v + 1] > 0:
            num_touched += 1
        offsets[v + 1] += offsets[v]
    touched = np.empty(num_touched, np.int64)
    ti = 0
    for v in range(num_nodes):
        if offsets[v + 1] > offsets[v]:
            touched[ti] = v
            ti += 1
    cursor = offsets[:-1].copy()
    order = np.empty(total, np.int64)
    for t in range(T):
        v = ids[t]
        if v >= 0:
            order[cursor[v]] = t
            cursor[v] += 1
    return touched, offsets, order


@njit(parallel=True, cache=True)
def scatter_from_grad(grad_out, denom_flat, stride, touched, offsets, order, out):
    D = grad_out.shape[1]
    for ui in prange(touched.shape[0]):
        v = touched[ui]
        for pos in range(offsets[v], offsets[v + 1]):
            t = order[pos]
            i = t // stride
            for d in range(D):
                out[v, d] += grad_out[i, d] / denom_flat[t]


@njit(parallel=True, cache=True)
def expand_grad(grad_out, ids, denom_flat, stride, d_gathered):
    T, D = d_gathered.shape
    for t in prange(T):
        if ids[t] < 0:
            for d in range(D):
                d_gathered[t, d] = 0
        else:
            i = t // stride
            for d in range(D):
                d_gathered[t, d] = grad_out[i, d] / denom_flat[t]


@njit(parallel=True, cache=True)
def scatter_from_block(d_gathered, touched, offsets, order, out):
    D = d_gathered.shape[1]
    for ui in prange(touched.shape[0]):
        v = touched[ui]
        for pos in range(offsets[v], offsets[v + 1]):
            t = order[pos]
            for d in range(D):
                out[v, d] += d_gathered[t, d]


def warmup(dtype=np.float64) -> None:
    """Compile every kernel for the given feature dtype (once per process)."""
    rowptr = np.array([0, 2, 3, 4], np.int32)
    col = np.array([1, 2, 0, 0], np.int32)
    X = np.ones((3, 2), dtype)
    seeds = np.array([0, 1], np.int64)
    out = np.zeros((2, 2), dtype)
    s1 = np.empty((2, 2), np.int32)
    t1 = np.empty(2, np.int32)
    sample_1hop(rowptr, col, seeds, 2, U64(1), s1, t1)
    fused_1hop(rowptr, col, X, seeds, 2, U64(1), True, s1, t1, out)
    fused_1hop(rowptr, col, X, seeds, 2, U64(1), False, s1, t1, out)
    s2 = np.empty((2, 2, 2), np.int32)
    t2 = np.empty((2, 2), np.int32)
    sample_2hop(rowptr, col, seeds, 2, 2, U64(1), s1, s2, t1, t2)
    fused_2hop(rowptr, col, X, seeds, 2, 2, U64(1), True, s1, s2, t1, t2, out)
    fused_2hop(rowptr, col, X, seeds, 2, 2, U64(1), False, s1, s2, t1, t2, out)
    gathered = np.zeros((4, 2), dtype)
    gather_rows(X, s1.reshape(-1).astype(np.int32), gathered)
    agg_1hop_block(gathered, t1, 2, out)
    partials = np.zeros((4, 2), dtype)
    flat = s2.reshape(-1)
    gathered2 = np.zeros((8, 2), dtype)
    gather_rows(X, flat, gathered2)
    partials_2hop_block(gathered2, t1, t2, 2, 2, partials)
    uniq, remap = np.unique(np.maximum(flat, 0), return_inverse=True)
    gu = np.ascontiguousarray(X[uniq])
    partials_2hop_dedup(gu, np.where(flat < 0, -1, remap).astype(np.int64), t1, t2, 2, 2, partials)
    agg_2hop_from_partials(partials, t1, 2, out)
    touched, offsets, order = invert_targets(flat, 3)
    denom = np.ones(flat.shape[0], dtype)
    grad = np.zeros((3, 2), dtype)
    scatter_from_grad(out, denom, 4, touched, offsets, order, grad)
    dg = np.zeros((8, 2), dtype)
    expand_grad(out, flat, denom, 4, dg)
    scatter_from_block(dg, touched, offsets, order, grad)
    derive_state(U64(1), 0, 0, 0)
    xorshift_steps(U64(1), 1, np.empty(1, np.uint64))
