"""Randomized correctness suites behind the ``fsa verify`` / ``fsa grad-check``
commands: fused-vs-baseline equivalence, saved-index replay, sampling
distinctness, worker-count determinism, and finite-difference gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .baseline import baseline_1hop_forward, baseline_backward, baseline_forward
from .fused import (
    SampledIndices1,
    SampledIndices2,
    fused_1hop_backward,
    fused_1hop_forward,
    fused_2hop_backward,
    fused_2hop_forward,
)
from .graph import CsrGraph, SeedBatch, build_csr
from .parallel import get_workers, set_workers
from .train import init_train_state, train_step

__all__ = [
    "VerifyReport",
    "random_instance",
    "replay_mean_1hop",
    "replay_mean_2hop",
    "equivalence_suite",
    "worker_determinism_suite",
    "grad_check_suite",
]


@dataclass
class VerifyReport:
    ok: bool
    trials: int
    message: str
    counterexample: Optional[str] = None


def random_instance(rng: np.random.Generator, max_n: int, max_d: int,
                    max_fanout: int = 8, max_batch: int = 32):
    """One random (graph, X, seeds, k1, k2, base_seed) test case."""
    n = int(rng.integers(2, max_n + 1))
    m = int(rng.integers(1, 3 * n))
    edges = rng.integers(0, n, size=(m, 2))
    graph = build_csr(edges, n, make_undirected=bool(rng.integers(0, 2)))
    d = int(rng.integers(1, max_d + 1))
    X = rng.standard_normal((n, d))
    batch = int(rng.integers(1, max_batch + 1))
    seeds = rng.integers(0, n, size=batch)
    k1 = int(rng.integers(1, max_fanout + 1))
    k2 = int(rng.integers(1, max_fanout + 1))
    base_seed = int(rng.integers(0, 2**62))
    return graph, X, seeds, k1, k2, base_seed


def replay_mean_1hop(X: np.ndarray, idx: SampledIndices1) -> np.ndarray:
    """Recompute the forward means directly from saved indices (slot order)."""
    B, _ = idx.samples.shape
    out = np.zeros((B, X.shape[1]), dtype=X.dtype)
    for i in range(B):
        take = int(idx.takes[i])
        acc = np.zeros(X.shape[1], dtype=X.dtype)
        for j in range(take):
            acc = acc + X[idx.samples[i, j]]
        out[i] = acc / max(1, take)
    return out


def replay_mean_2hop(X: np.ndarray, idx: SampledIndices2) -> np.ndarray:
    B, k1, _ = idx.s2.shape
    out = np.zeros((B, X.shape[1]), dtype=X.dtype)
    for r in range(B):
        valid_u = [j for j in range(k1) if idx.s1[r, j] >= 0]
        acc = np.zeros(X.shape[1], dtype=X.dtype)
        for j in valid_u:
            ws = [w for w in idx.s2[r, j] if w >= 0]
            acc2 = np.zeros(X.shape[1], dtype=X.dtype)
            for w in ws:
                acc2 = acc2 + X[w]
            acc = acc + acc2 / max(1, len(ws))
        out[r] = acc / max(1, len(valid_u))
    return out


def _bitwise_equal(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and a.tobytes() == b.tobytes()


def _rows_distinct(mat: np.ndarray) -> bool:
    for row in mat.reshape(-1, mat.shape[-1]):
        valid = row[row >= 0]
        if len(np.unique(valid)) != len(valid):
            return False
    return True


def equivalence_suite(trials: int, max_n: int = 200, max_d: int = 8,
                      seed: int = 0, inject_fault: bool = False) -> VerifyReport:
    """Fused vs baseline forward/backward equality at 64-bit, replay
    exactness, and without-replacement distinctness over random instances."""
    if trials <= 0:
        return VerifyReport(True, 0, "vacuous pass: zero trials requested")
    rng = np.random.default_rng(seed)
    for t in range(trials):
        graph, X, seeds, k1, k2, base_seed = random_instance(rng, max_n, max_d)
        case = (f"trial={t} n={graph.num_nodes} edges={graph.num_edges} "
                f"B={len(seeds)} k1={k1} k2={k2} base_seed={base_seed}")

        out1, idx1 = fused_1hop_forward(graph, X, seeds, k1, base_seed, save_indices=True)
        base1, block1 = baseline_1hop_forward(graph, X, seeds, k1, base_seed)
        out2, idx2 = fused_2hop_forward(graph, X, seeds, k1, k2, base_seed, save_indices=True)
        base2, block2 = baseline_forward(graph, X, seeds, k1, k2, base_seed)
        dd2, _ = baseline_forward(graph, X, seeds, k1, k2, base_seed, dedup=True)
        nosave2, _ = fused_2hop_forward(graph, X, seeds, k1, k2, base_seed, save_indices=False)

        if inject_fault and t == 0:
            out2 = out2.copy()
            out2[0, 0] += 1.0  # simulated kernel bug for harness testing

        if not _bitwise_equal(out1, base1):
            return VerifyReport(False, t + 1, "1-hop fused/baseline forward mismatch", case)
        if not _bitwise_equal(out2, base2):
            return VerifyReport(False, t + 1, "2-hop fused/baseline forward mismatch", case)
        if not _bitwise_equal(out2, dd2):
            return VerifyReport(False, t + 1, "dedup baseline forward mismatch", case)
        if not _bitwise_equal(out2, nosave2):
            return VerifyReport(False, t + 1, "nosave forward differs from saved forward", case)
        if not _bitwise_equal(out1, replay_mean_1hop(X, idx1)):
            return VerifyReport(False, t + 1, "1-hop replay mismatch", case)
        if not _bitwise_equal(out2, replay_mean_2hop(X, idx2)):
            return VerifyReport(False, t + 1, "2-hop replay mismatch", case)
        if not (_rows_distinct(idx1.samples) and _rows_distinct(idx2.s1) and _rows_distinct(idx2.s2)):
            return VerifyReport(False, t + 1, "duplicate IDs inside a sample row", case)

        grad1 = rng.standard_normal(out1.shape)
        grad2 = rng.standard_normal(out2.shape)
        g_f1 = fused_1hop_backward(grad1, idx1, graph.num_nodes)
        g_b1 = baseline_backward(grad1, block1, graph.num_nodes)
        g_f2 = fused_2hop_backward(grad2, idx2, graph.num_nodes)
        g_b2 = baseline_backward(grad2, block2, graph.num_nodes)
        if not _bitwise_equal(g_f1, g_b1):
            return VerifyReport(False, t + 1, "1-hop fused/baseline backward mismatch", case)
        if not _bitwise_equal(g_f2, g_b2):
            return VerifyReport(False, t + 1, "2-hop fused/baseline backward mismatch", case)
    return VerifyReport(True, trials, "fused == baseline (forward, backward, replay, distinctness)")


def worker_determinism_suite(workers: Tuple[int, ...] = (1, 4, 8), runs: int = 3,
                             steps: int = 5, seed: int = 7) -> VerifyReport:
    """Samples and 64-bit parameter trajectories must not depend on the
    worker count or the run."""
    rng = np.random.default_rng(seed)
    graph, X, seeds, k1, k2, base_seed = random_instance(rng, max_n=120, max_d=6)
    labels = rng.integers(0, 3, size=graph.num_nodes)
    original = get_workers()
    reference = None
    try:
        for w in workers:
            set_workers(w)
            for run in range(runs):
                _, idx = fused_2hop_forward(graph, X, seeds, k1, k2, base_seed, save_indices=True)
                state = init_train_state(X.shape[1], 16, 3, base_seed, dtype=np.float64)
                for s in range(steps):
                    batch = SeedBatch(seeds=seeds, labels=labels[seeds])
                    train_step(graph, X, batch, (k1, k2), base_seed + s, "fused", state)
                blob = (idx.s1.tobytes() + idx.s2.tobytes()
                        + b"".join(p.tobytes() for _, p in state.named_params()))
                if reference is None:
                    reference = blob
                elif blob != reference:
                    return VerifyReport(
                        False, runs * len(workers),
                        f"nondeterminism at workers={w} run={run}",
                        f"n={graph.num_nodes} B={len(seeds)} k1={k1} k2={k2}",
                    )
    finally:
        set_workers(original)
    return VerifyReport(True, runs * len(workers),
                        f"bitwise identical across workers {workers} and {runs} runs")


def grad_check_suite(trials: int = 20, eps: float = 1e-6, seed: int = 3,
                     max_n: int = 50, max_d: int = 4) -> Tuple[float, int]:
    """Central finite differences vs the replay backward, both hops, float64.

    Returns (max relative error, instances checked).  The probe loss is a
    random linear functional of the forward output, so its exact gradient is
    what the backward scatters.
    """
    rng = np.random.default_rng(seed)
    max_rel = 0.0
    checked = 0
    for t in range(trials):
        graph, X, seeds, k1, k2, base_seed = random_instance(
            rng, max_n=max_n, max_d=max_d, max_fanout=5, max_batch=8
        )
        for hop in (1, 2):
            if hop == 1:
                out, idx = fused_1hop_forward(graph, X, seeds, k1, base_seed, save_indices=True)
                weights = rng.standard_normal(out.shape)
                analytic = fused_1hop_backward(weights, idx, graph.num_nodes)

                def forward(Z, _k1=k1):
                    o, _ = fused_1hop_forward(graph, Z, seeds, _k1, base_seed, save_indices=False)
                    return o
            else:
                out, idx = fused_2hop_forward(graph, X, seeds, k1, k2, base_seed, save_indices=True)
                weights = rng.standard_normal(out.shape)
                analytic = fused_2hop_backward(weights, idx, graph.num_nodes)

                def forward(Z, _k1=k1, _k2=k2):
                    o, _ = fused_2hop_forward(graph, Z, seeds, _k1, _k2, base_seed, save_indices=False)
                    return o

            for v in range(graph.num_nodes):
                for d in range(X.shape[1]):
                    probe = X.copy()
                    probe[v, d] = X[v, d] + eps
                    f_plus = float((weights * forward(probe)).sum())
                    probe[v, d] = X[v, d] - eps
                    f_minus = float((weights * forward(probe)).sum())
                    fd = (f_plus - f_minus) / (2 * eps)
                    an = float(analytic[v, d])
                    denom = max(abs(an), abs(fd), 1e-9)
                    max_rel = max(max_rel, abs(fd - an) / denom)
            checked += 1
    return max_rel, checked
