"""Unfused comparator: sample, materialize blocks, gather features, aggregate.

Same reservoir sampler, same derived streams, same accumulation order as the
fused operator — the only difference is that this pipeline materializes the
sampled-ID blocks and gathered feature tensors between the stages, which is
precisely the memory and bandwidth cost fusion removes.  Outputs are bitwise
equal to the fused ops at both element widths.

Every transient tensor is registered with the supplied meter; arrays that are
returned (the block and the output) stay registered until the caller
untracks them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np

from . import kernels
from .fused import _as_seed_array, _check_features, _check_grad, _grad_buffer, _maybe_scope, _seed_u64
from .graph import CsrGraph, SeedBatch
from .meter import MemoryMeter

__all__ = ["MaterializedBlock", "baseline_1hop_forward", "baseline_forward", "baseline_backward"]


@dataclass
class MaterializedBlock:
    """The baseline's intermediate tensors: hop IDs plus gathered features.

    For one-hop blocks ``ids2``/``take2`` are None and ``gathered`` holds the
    (B*k, D) first-hop gather.  In dedup mode the dense gather is replaced by
    ``uniq_features`` (one row per distinct sampled node) and ``uniq_remap``
    mapping flat sample slots into it (−1 for padding).
    """

    ids1: np.ndarray
    take1: np.ndarray
    ids2: Optional[np.ndarray] = None
    take2: Optional[np.ndarray] = None
    gathered: Optional[np.ndarray] = None
    uniq_features: Optional[np.ndarray] = None
    uniq_remap: Optional[np.ndarray] = None

    def arrays(self) -> List[np.ndarray]:
        """Every live array, for meter bookkeeping."""
        return [
            a
            for a in (self.ids1, self.take1, self.ids2, self.take2,
                      self.gathered, self.uniq_features, self.uniq_remap)
            if a is not None
        ]

    def valid_pairs(self) -> int:
        pairs = int(self.take1.sum())
        if self.take2 is not None:
            pairs += int(self.take2.sum())
        return pairs


def baseline_1hop_forward(
    graph: CsrGraph,
    X: np.ndarray,
    seeds: Union[SeedBatch, np.ndarray],
    k: int,
    base_seed: int,
    meter: Optional[MemoryMeter] = None,
) -> Tuple[np.ndarray, MaterializedBlock]:
    """sample -> materialize (B*k, D) gather -> aggregate; one-hop baseline."""
    X = _check_features(graph, X)
    seed_arr = _as_seed_array(seeds, graph.num_nodes)
    if k < 1:
        raise ValueError("fanout k must be >= 1")
    B, D = len(seed_arr), X.shape[1]

    ids1 = np.empty((B, k), dtype=np.int32)
    take1 = np.empty(B, dtype=np.int32)
    _track(meter, ids1, take1)
    kernels.sample_1hop(graph.rowptr, graph.col, seed_arr, k, _seed_u64(base_seed), ids1, take1)

    gathered = np.empty((B * k, D), dtype=X.dtype)
    _track(meter, gathered)
    kernels.gather_rows(X, ids1.reshape(-1), gathered)

    out = np.empty((B, D), dtype=X.dtype)
    _track(meter, out)
    kernels.agg_1hop_block(gathered, take1, k, out)
    return out, MaterializedBlock(ids1=ids1, take1=take1, gathered=gathered)


def baseline_forward(
    graph: CsrGraph,
    X: np.ndarray,
    seeds: Union[SeedBatch, np.ndarray],
    k1: int,
    k2: int,
    base_seed: int,
    meter: Optional[MemoryMeter] = None,
    dedup: bool = False,
) -> Tuple[np.ndarray, MaterializedBlock]:
    """Two-hop unfused pipeline.

    Stage 1 samples with the same streams as the fused op; stage 2
    materializes the hop-ID tensors and the gathered second-hop features
    (deduplicated across seeds when ``dedup``); stage 3 computes the nested
    mean from the materialized tensors only.
    """
    X = _check_features(graph, X)
    seed_arr = _as_seed_array(seeds, graph.num_nodes)
    if k1 < 1 or k2 < 1:
        raise ValueError("fanouts must be >= 1")
    B, D = len(seed_arr), X.shape[1]

    s1 = np.empty((B, k1), dtype=np.int32)
    s2 = np.empty((B, k1, k2), dtype=np.int32)
    take1 = np.empty(B, dtype=np.int32)
    take2 = np.empty((B, k1), dtype=np.int32)
    _track(meter, s1, s2, take1, take2)
    kernels.sample_2hop(
        graph.rowptr, graph.col, seed_arr, k1, k2, _seed_u64(base_seed), s1, s2, take1, take2
    )

    flat = s2.reshape(-1)
    block = MaterializedBlock(ids1=s1, take1=take1, ids2=s2, take2=take2)
    out = np.empty((B, D), dtype=X.dtype)
    partials = np.empty((B * k1, D), dtype=X.dtype)

    if dedup:
        valid = flat[flat >= 0]
        uniq, inv = np.unique(valid, return_inverse=True)
        remap = np.full(flat.shape[0], -1, dtype=np.int64)
        remap[flat >= 0] = inv
        uniq_features = np.empty((len(uniq), D), dtype=X.dtype)
        _track(meter, uniq_features, remap)
        kernels.gather_rows(X, uniq.astype(np.int32), uniq_features)
        block.uniq_features = uniq_features
        block.uniq_remap = remap
        _track(meter, out)
        with _maybe_scope(meter, partials.nbytes + valid.nbytes + uniq.nbytes + inv.nbytes):
            kernels.partials_2hop_dedup(uniq_features, remap, take1, take2, k1, k2, partials)
            kernels.agg_2hop_from_partials(partials, take1, k1, out)
    else:
        gathered = np.empty((B * k1 * k2, D), dtype=X.dtype)
        _track(meter, gathered)
        kernels.gather_rows(X, flat, gathered)
        block.gathered = gathered
        _track(meter, out)
        with _maybe_scope(meter, partials.nbytes):
            kernels.partials_2hop_block(gathered, take1, take2, k1, k2, partials)
            kernels.agg_2hop_from_partials(partials, take1, k1, out)
    return out, block


def baseline_backward(
    grad_out: np.ndarray,
    block: MaterializedBlock,
    num_nodes: int,
    out: Optional[np.ndarray] = None,
    meter: Optional[MemoryMeter] = None,
) -> np.ndarray:
    """Adjoint of the materialized pipeline.

    Expands the upstream gradient into a per-slot gradient block (the mirror
    image of the forward's gathered features), then scatter-adds it into the
    node-gradient buffer in ascending slot order per target — bitwise the
    same result as the fused replay backward.
    """
    grad_out = _check_grad(grad_out)
    buf = _grad_buffer(grad_out, num_nodes, out, meter)
    if block.ids2 is not None:
        ids_flat = block.ids2.reshape(-1)
        k1 = block.ids1.shape[1]
        k2 = block.ids2.shape[2]
        stride = k1 * k2
        t1 = np.maximum(block.take1, 1).astype(np.int64)
        t2 = np.maximum(block.take2, 1).astype(np.int64)
        denom_flat = np.repeat((t1[:, None] * t2).reshape(-1), k2).astype(grad_out.dtype)
    else:
        ids_flat = block.ids1.reshape(-1)
        stride = block.ids1.shape[1]
        denom_flat = np.repeat(np.maximum(block.take1, 1).astype(grad_out.dtype), stride)
    if block.ids1.shape[0] != grad_out.shape[0]:
        raise ValueError("grad_out batch size does not match block")
    if ids_flat.max() >= num_nodes:
        raise ValueError("block index out of range")
    touched, offsets, order = kernels.invert_targets(ids_flat, num_nodes)
    d_gathered = np.empty((ids_flat.shape[0], grad_out.shape[1]), dtype=grad_out.dtype)
    extra = denom_flat.nbytes + touched.nbytes + offsets.nbytes + order.nbytes
    with _maybe_scope(meter, d_gathered.nbytes + extra):
        kernels.expand_grad(grad_out, ids_flat, denom_flat, stride, d_gathered)
        kernels.scatter_from_block(d_gathered, touched, offsets, order, buf)
    return buf


def _track(meter: Optional[MemoryMeter], *arrays: np.ndarray) -> None:
    if meter is not None:
        meter.track(*arrays)
