"""Fused neighbor sampling + mean aggregation, with exact replay backward.

The forward ops draw up to ``k`` neighbors per seed (uniform, without
replacement, Algorithm R) and accumulate the feature mean in the same pass —
no gathered feature block ever exists.  With ``save_indices`` the sampled IDs
are emitted (−1 padded) so the backward can replay them and scatter
``grad / k_eff`` into a dense gradient buffer; without it the op is
forward-only and a backward request returns zeros.

All ops are bitwise deterministic for a fixed ``base_seed``, independent of
the worker count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from . import kernels
from .graph import CsrGraph, SeedBatch
from .meter import MemoryMeter
from .parallel import get_workers
from .rng import MASK64, RngStream

FEATURE_DTYPES = (np.float32, np.float64)

__all__ = [
    "SampledIndices1",
    "SampledIndices2",
    "fused_1hop_forward",
    "fused_1hop_backward",
    "fused_2hop_forward",
    "fused_2hop_backward",
    "sample_neighbors_reservoir",
]


@dataclass
class SampledIndices1:
    """Per-seed sampled neighbor IDs (−1 padded) and take counts."""

    samples: np.ndarray  # int32, (B, k)
    takes: np.ndarray    # int32, (B,)

    @property
    def fanout(self) -> int:
        return self.samples.shape[1]

    def valid_pairs(self) -> int:
        return int(self.takes.sum())


@dataclass
class SampledIndices2:
    """Two-hop sampled IDs: s1 is (B, k1), s2 is (B, k1, k2), both −1 padded.

    Effective counts are not stored; they are recomputed from the −1 pattern,
    which is exactly what the backward normalizes by.
    """

    s1: np.ndarray
    s2: np.ndarray

    @property
    def fanouts(self) -> Tuple[int, int]:
        return self.s1.shape[1], self.s2.shape[2]

    def take1(self) -> np.ndarray:
        return (self.s1 >= 0).sum(axis=1).astype(np.int32)

    def take2(self) -> np.ndarray:
        return (self.s2 >= 0).sum(axis=2).astype(np.int32)

    def valid_pairs(self) -> int:
        return int((self.s1 >= 0).sum() + (self.s2 >= 0).sum())


def _as_seed_array(seeds: Union[SeedBatch, np.ndarray], num_nodes: int) -> np.ndarray:
    arr = seeds.seeds if isinstance(seeds, SeedBatch) else np.ascontiguousarray(seeds, dtype=np.int64)
    if arr.ndim != 1 or len(arr) == 0:
        raise ValueError("seed batch must be a non-empty 1-D array")
    if arr.min() < 0 or arr.max() >= num_nodes:
        raise ValueError(f"seed out of range for graph with {num_nodes} nodes")
    return arr


def _check_features(graph: CsrGraph, X: np.ndarray) -> np.ndarray:
    if X.ndim != 2 or X.shape[0] != graph.num_nodes:
        raise ValueError(f"features must be ({graph.num_nodes}, D), got {X.shape}")
    if X.dtype.type not in FEATURE_DTYPES:
        raise ValueError(f"features must be float32 or float64, got {X.dtype}")
    if not X.flags.c_contiguous:
        raise ValueError("features must be C-contiguous")
    return X


def _seed_u64(base_seed: int) -> np.uint64:
    return np.uint64(int(base_seed) & MASK64)


def fused_1hop_forward(
    graph: CsrGraph,
    X: np.ndarray,
    seeds: Union[SeedBatch, np.ndarray],
    k: int,
    base_seed: int,
    save_indices: bool = True,
    meter: Optional[MemoryMeter] = None,
) -> Tuple[np.ndarray, Optional[SampledIndices1]]:
    """Sample up to ``k`` neighbors per seed and return their feature means.

    Seeds with degree <= k take their whole neighborhood (CSR order);
    isolated seeds produce a zero row with take 0.  Returns ``(out, indices)``
    with ``indices`` None unless ``save_indices``.
    """
    X = _check_features(graph, X)
    seed_arr = _as_seed_array(seeds, graph.num_nodes)
    if k < 1:
        raise ValueError("fanout k must be >= 1")
    B = len(seed_arr)
    out = np.empty((B, X.shape[1]), dtype=X.dtype)
    if save_indices:
        samples = np.empty((B, k), dtype=np.int32)
        takes = np.empty(B, dtype=np.int32)
        scratch = _thread_scratch_bytes(X, k, 0)
    else:
        samples = np.empty((1, k), dtype=np.int32)
        takes = np.empty(1, dtype=np.int32)
        scratch = _thread_scratch_bytes(X, k, 0) + get_workers() * k * 4
    if meter is not None:
        meter.track(out)
        if save_indices:
            meter.track(samples, takes)
    with _maybe_scope(meter, scratch):
        kernels.fused_1hop(
            graph.rowptr, graph.col, X, seed_arr, k, _seed_u64(base_seed),
            save_indices, samples, takes, out,
        )
    if not save_indices:
        return out, None
    return out, SampledIndices1(samples=samples, takes=takes)


def fused_2hop_forward(
    graph: CsrGraph,
    X: np.ndarray,
    roots: Union[SeedBatch, np.ndarray],
    k1: int,
    k2: int,
    base_seed: int,
    save_indices: bool = True,
    meter: Optional[MemoryMeter] = None,
) -> Tuple[np.ndarray, Optional[SampledIndices2]]:
    """Nested two-hop sampled mean: per root, mean over first-hop samples of
    the mean over their second-hop samples.  −1 slots are skipped and each
    mean divides by the effective (realized) count."""
    X = _check_features(graph, X)
    seed_arr = _as_seed_array(roots, graph.num_nodes)
    if k1 < 1 or k2 < 1:
        raise ValueError("fanouts must be >= 1")
    B = len(seed_arr)
    out = np.empty((B, X.shape[1]), dtype=X.dtype)
    if save_indices:
        s1 = np.empty((B, k1), dtype=np.int32)
        s2 = np.empty((B, k1, k2), dtype=np.int32)
        take1 = np.empty(B, dtype=np.int32)
        take2 = np.empty((B, k1), dtype=np.int32)
        scratch = _thread_scratch_bytes(X, 0, 0) + take1.nbytes + take2.nbytes
    else:
        s1 = np.empty((1, k1), dtype=np.int32)
        s2 = np.empty((1, 1, k2), dtype=np.int32)
        take1 = np.empty(1, dtype=np.int32)
        take2 = np.empty((1, 1), dtype=np.int32)
        scratch = _thread_scratch_bytes(X, k1, k2)
    if meter is not None:
        meter.track(out)
        if save_indices:
            meter.track(s1, s2)
    with _maybe_scope(meter, scratch):
        kernels.fused_2hop(
            graph.rowptr, graph.col, X, seed_arr, k1, k2, _seed_u64(base_seed),
            save_indices, s1, s2, take1, take2, out,
        )
    if not save_indices:
        return out, None
    return out, SampledIndices2(s1=s1, s2=s2)


def fused_1hop_backward(
    grad_out: np.ndarray,
    indices: Optional[SampledIndices1],
    num_nodes: int,
    out: Optional[np.ndarray] = None,
    meter: Optional[MemoryMeter] = None,
) -> np.ndarray:
    """Replay saved indices: grad[v] += grad_out[i] / max(1, take_i).

    ``indices=None`` (forward ran without saving) yields an all-zero buffer.
    Accumulation per target row follows ascending (seed, slot) order, so the
    result is bitwise reproducible for any worker count.
    """
    grad_out = _check_grad(grad_out)
    buf = _grad_buffer(grad_out, num_nodes, out, meter)
    if indices is None:
        return buf
    samples, takes = indices.samples, indices.takes
    if samples.shape[0] != grad_out.shape[0]:
        raise ValueError("grad_out batch size does not match saved indices")
    if takes.min() < 0:
        raise ValueError("negative take count")
    if samples.max() >= num_nodes:
        raise ValueError("saved index out of range")
    k = indices.fanout
    denom = np.maximum(takes, 1).astype(grad_out.dtype)
    denom_flat = np.repeat(denom, k)
    ids_flat = samples.reshape(-1)
    touched, offsets, order = kernels.invert_targets(ids_flat, num_nodes)
    with _maybe_scope(meter, denom_flat.nbytes + touched.nbytes + offsets.nbytes + order.nbytes):
        kernels.scatter_from_grad(grad_out, denom_flat, k, touched, offsets, order, buf)
    return buf


def fused_2hop_backward(
    grad_out: np.ndarray,
    indices: Optional[SampledIndices2],
    num_nodes: int,
    out: Optional[np.ndarray] = None,
    meter: Optional[MemoryMeter] = None,
) -> np.ndarray:
    """Two-hop replay: grad[w] += grad_out[r] / (k1_eff(r) * k2_eff(r, j)).

    Effective counts come from the −1 pattern of the saved indices, matching
    the forward's denominators exactly (the adjoint of the implemented
    forward, also when degrees fall short of the fanouts).
    """
    grad_out = _check_grad(grad_out)
    buf = _grad_buffer(grad_out, num_nodes, out, meter)
    if indices is None:
        return buf
    s1, s2 = indices.s1, indices.s2
    if s1.shape[0] != grad_out.shape[0]:
        raise ValueError("grad_out batch size does not match saved indices")
    if s2.max() >= num_nodes:
        raise ValueError("saved index out of range")
    k1, k2 = indices.fanouts
    t1 = np.maximum(indices.take1(), 1).astype(np.int64)
    t2 = np.maximum(indices.take2(), 1).astype(np.int64)
    denom_flat = np.repeat((t1[:, None] * t2).reshape(-1), k2).astype(grad_out.dtype)
    ids_flat = s2.reshape(-1)
    touched, offsets, order = kernels.invert_targets(ids_flat, num_nodes)
    with _maybe_scope(meter, denom_flat.nbytes + touched.nbytes + offsets.nbytes + order.nbytes):
        kernels.scatter_from_grad(grad_out, denom_flat, k1 * k2, touched, offsets, order, buf)
    return buf


def sample_neighbors_reservoir(
    graph: CsrGraph, u: int, k: int, stream: RngStream
) -> Tuple[np.ndarray, int]:
    """Reference Algorithm R over u's neighbor list (pure Python).

    The compiled samplers reproduce this bit for bit; it exists as the
    readable single-node form and as the cross-check used by the tests.
    """
    if u < 0 or u >= graph.num_nodes:
        raise ValueError(f"node {u} out of range")
    if k < 1:
        raise ValueError("fanout k must be >= 1")
    neigh = graph.neighbors(u)
    deg = len(neigh)
    if deg <= k:
        return neigh.copy(), deg
    reservoir = neigh[:k].copy()
    for i in range(k, deg):
        j = stream.uniform_index(i + 1)
        if j < k:
            reservoir[j] = neigh[i]
    return reservoir, k


def _check_grad(grad_out: np.ndarray) -> np.ndarray:
    if grad_out.ndim != 2:
        raise ValueError("grad_out must be 2-D (B, D)")
    if grad_out.dtype.type not in FEATURE_DTYPES:
        raise ValueError("grad_out must be float32 or float64")
    return np.ascontiguousarray(grad_out)


def _grad_buffer(grad_out, num_nodes, out, meter) -> np.ndarray:
    if out is not None:
        if out.shape != (num_nodes, grad_out.shape[1]) or out.dtype != grad_out.dtype:
            raise ValueError("gradient buffer has wrong shape or dtype")
        out.fill(0)
        return out
    buf = np.zeros((num_nodes, grad_out.shape[1]), dtype=grad_out.dtype)
    if meter is not None:
        meter.track(buf)
    return buf


def _thread_scratch_bytes(X: np.ndarray, k1: int, k2: int) -> int:
    # per-worker accumulators (and index scratch when indices are not saved)
    elem = X.dtype.itemsize
    return get_workers() * ((k1 + k2) * 4 + (2 * X.shape[1] + 3) * elem)


def _maybe_scope(meter: Optional[MemoryMeter], nbytes: int):
    if meter is None:
        return MemoryMeter().scope(0)
    return meter.scope(nbytes)
