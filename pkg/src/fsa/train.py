"""Minimal end-to-end training step over the sampled aggregation.

The head is the canonical GraphSAGE-mean form: concatenate each seed's own
features with its aggregated neighborhood mean, then a two-layer MLP
(2D -> hidden -> classes, ReLU).  Loss is mean cross-entropy over the batch
seeds; the optimizer is AdamW with decoupled weight decay.  A step is
forward -> loss -> head backward -> aggregation backward -> optimizer, which
is exactly the window the benchmark times.
"""

from __future__ import annotations

from contextlib import ExitStack
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .baseline import baseline_backward, baseline_forward
from .fused import fused_2hop_backward, fused_2hop_forward
from .graph import CsrGraph, SeedBatch
from .meter import MemoryMeter

VARIANTS = ("fused", "baseline")

__all__ = [
    "AdamWParams",
    "TrainState",
    "StepResult",
    "NonFiniteGradientError",
    "init_train_state",
    "head_forward",
    "head_backward",
    "cross_entropy",
    "adamw_step",
    "train_step",
]


class NonFiniteGradientError(RuntimeError):
    """A gradient went non-finite; the optimizer refused the update."""


@dataclass(frozen=True)
class AdamWParams:
    lr: float = 3e-3
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainState:
    """Head parameters plus AdamW moments; dtype follows the feature width."""

    W1: np.ndarray  # (2D, H)
    b1: np.ndarray  # (H,)
    W2: np.ndarray  # (H, C)
    b2: np.ndarray  # (C,)
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step_count: int = 0
    hyper: AdamWParams = field(default_factory=AdamWParams)

    def named_params(self):
        return (("W1", self.W1), ("b1", self.b1), ("W2", self.W2), ("b2", self.b2))

    @property
    def d_feat(self) -> int:
        return self.W1.shape[0] // 2

    @property
    def hidden(self) -> int:
        return self.W1.shape[1]

    @property
    def classes(self) -> int:
        return self.W2.shape[1]


@dataclass
class StepResult:
    loss: float
    grads_applied: bool
    sampled_pairs: int


def init_train_state(
    d_feat: int,
    hidden: int,
    classes: int,
    base_seed: int,
    dtype=np.float32,
    hyper: Optional[AdamWParams] = None,
) -> TrainState:
    """He-initialized head, zero moments; deterministic in base_seed."""
    rng = np.random.default_rng([base_seed & 0xFFFFFFFF, 0x1D])
    W1 = (rng.standard_normal((2 * d_feat, hidden)) * np.sqrt(2.0 / (2 * d_feat))).astype(dtype)
    W2 = (rng.standard_normal((hidden, classes)) * np.sqrt(2.0 / hidden)).astype(dtype)
    b1 = np.zeros(hidden, dtype=dtype)
    b2 = np.zeros(classes, dtype=dtype)
    params = {"W1": W1, "b1": b1, "W2": W2, "b2": b2}
    m = {k: np.zeros_like(p) for k, p in params.items()}
    v = {k: np.zeros_like(p) for k, p in params.items()}
    return TrainState(W1=W1, b1=b1, W2=W2, b2=b2, m=m, v=v, hyper=hyper or AdamWParams())


def head_forward(
    x_seed: np.ndarray, x_agg: np.ndarray, state: TrainState
) -> Tuple[np.ndarray, Tuple[np.ndarray, np.ndarray]]:
    """logits = ReLU([x_seed ‖ x_agg] W1 + b1) W2 + b2; returns (logits, cache)."""
    if x_seed.shape != x_agg.shape:
        raise ValueError(f"seed/aggregated feature shapes differ: {x_seed.shape} vs {x_agg.shape}")
    if x_seed.shape[1] != state.d_feat:
        raise ValueError(f"feature dim {x_seed.shape[1]} does not match head ({state.d_feat})")
    concat = np.concatenate([x_seed, x_agg], axis=1)
    hidden = np.maximum(concat @ state.W1 + state.b1, 0)
    logits = hidden @ state.W2 + state.b2
    return logits, (concat, hidden)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean negative log-softmax likelihood and its gradient w.r.t. logits."""
    B, C = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (B,):
        raise ValueError("labels must be a (B,) vector")
    if labels.min() < 0 or labels.max() >= C:
        raise ValueError(f"label out of range for {C} classes")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(total)
    loss = float(-log_probs[np.arange(B), labels].mean())
    dlogits = exp / total
    dlogits[np.arange(B), labels] -= 1
    dlogits /= B
    return loss, dlogits.astype(logits.dtype, copy=False)


def head_backward(
    dlogits: np.ndarray, cache: Tuple[np.ndarray, np.ndarray], state: TrainState
) -> Tuple[Dict[str, np.ndarray], np.ndarray, np.ndarray]:
    """Returns (parameter grads, d_x_seed, d_x_agg)."""
    concat, hidden = cache
    d = state.d_feat
    dW2 = hidden.T @ dlogits
    db2 = dlogits.sum(axis=0)
    dhidden = dlogits @ state.W2.T
    dhidden *= hidden > 0
    dW1 = concat.T @ dhidden
    db1 = dhidden.sum(axis=0)
    dconcat = dhidden @ state.W1.T
    grads = {"W1": dW1, "b1": db1, "W2": dW2, "b2": db2}
    dx_seed = np.ascontiguousarray(dconcat[:, :d])
    dx_agg = np.ascontiguousarray(dconcat[:, d:])
    return grads, dx_seed, dx_agg


def adamw_step(state: TrainState, grads: Dict[str, np.ndarray]) -> TrainState:
    """Decoupled weight decay, then the bias-corrected Adam update, in place."""
    for name, _ in state.named_params():
        if not np.all(np.isfinite(grads[name])):
            raise NonFiniteGradientError(f"non-finite gradient for {name}")
    h = state.hyper
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - h.beta1**t
    bc2 = 1.0 - h.beta2**t
    for name, p in state.named_params():
        g = grads[name]
        if h.weight_decay:
            p -= h.lr * h.weight_decay * p
        m = state.m[name]
        v = state.v[name]
        m *= h.beta1
        m += (1.0 - h.beta1) * g
        v *= h.beta2
        v += (1.0 - h.beta2) * (g * g)
        p -= h.lr * (m / bc1) / (np.sqrt(v / bc2) + h.eps)
    return state


def train_step(
    graph: CsrGraph,
    X: np.ndarray,
    batch: SeedBatch,
    fanouts: Tuple[int, int],
    base_seed: int,
    variant: str,
    state: TrainState,
    meter: Optional[MemoryMeter] = None,
    grad_scratch: Optional[np.ndarray] = None,
    dedup: bool = False,
) -> StepResult:
    """One full two-hop training step for either pipeline variant.

    Only the batch seeds are trained on.  Every transient is registered with
    the meter and released before returning, so the meter's current count
    goes back to its entry level.  ``grad_scratch`` optionally supplies a
    reusable (N, D) buffer for the feature-gradient scatter, which is then
    treated as persistent training state rather than a per-step transient
    (the same convention as framework ``.grad`` buffers).
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if batch.labels is None:
        raise ValueError("train_step needs a labeled batch")
    k1, k2 = fanouts
    meter = meter if meter is not None else MemoryMeter()
    with ExitStack() as stack:
        if variant == "fused":
            x_agg, idx = fused_2hop_forward(
                graph, X, batch, k1, k2, base_seed, save_indices=True, meter=meter
            )
            stack.callback(meter.untrack, x_agg, idx.s1, idx.s2)
            pairs = idx.valid_pairs()
        else:
            x_agg, block = baseline_forward(
                graph, X, batch, k1, k2, base_seed, meter=meter, dedup=dedup
            )
            stack.callback(meter.untrack, x_agg, *block.arrays())
            pairs = block.valid_pairs()

        x_seed = X[batch.seeds]
        stack.enter_context(meter.hold(x_seed))
        logits, cache = head_forward(x_seed, x_agg, state)
        stack.enter_context(meter.hold(logits, *cache))
        loss, dlogits = cross_entropy(logits, batch.labels)
        stack.enter_context(meter.hold(dlogits))
        grads, _dx_seed, dx_agg = head_backward(dlogits, cache, state)
        stack.enter_context(meter.hold(dx_agg, _dx_seed, *grads.values()))

        if grad_scratch is None:
            feature_grad = None
        else:
            feature_grad = grad_scratch
        if variant == "fused":
            gbuf = fused_2hop_backward(dx_agg, idx, graph.num_nodes, out=feature_grad, meter=meter)
        else:
            gbuf = baseline_backward(dx_agg, block, graph.num_nodes, out=feature_grad, meter=meter)
        if feature_grad is None:
            stack.callback(meter.untrack, gbuf)

        try:
            adamw_step(state, grads)
            applied = True
        except NonFiniteGradientError:
            applied = False
    return StepResult(loss=loss, grads_applied=applied, sampled_pairs=pairs)
