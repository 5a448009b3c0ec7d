"""Fused neighbor sampling + mean aggregation for mini-batch GraphSAGE.

Library layout:

- :mod:`fsa.graph` — CSR graphs, generators, edge-list and binary cache IO
- :mod:`fsa.rng` — deterministic splitmix/xorshift sampling streams
- :mod:`fsa.fused` — the fused sample+aggregate operator and replay backward
- :mod:`fsa.baseline` — the unfused sample/materialize/aggregate comparator
- :mod:`fsa.train` — SAGE-style head, cross-entropy, AdamW, full train step
- :mod:`fsa.bench` — warmup/measure benchmark grid and CSV reports
- :mod:`fsa.cli` — the ``fsa`` command
"""

from . import parallel  # must come first: raises the kernel thread cap
from .baseline import MaterializedBlock, baseline_1hop_forward, baseline_backward, baseline_forward
from .fused import (
    SampledIndices1,
    SampledIndices2,
    fused_1hop_backward,
    fused_1hop_forward,
    fused_2hop_backward,
    fused_2hop_forward,
    sample_neighbors_reservoir,
)
from .graph import (
    CsrGraph,
    GraphFormatError,
    SeedBatch,
    build_csr,
    gen_power_law,
    gen_uniform,
    load_csr_cache,
    load_edge_list,
    save_csr_cache,
    write_edge_list,
)
from .meter import AccountingError, MemoryMeter
from .rng import RngStream, derive_stream
from .train import (
    AdamWParams,
    NonFiniteGradientError,
    StepResult,
    TrainState,
    adamw_step,
    cross_entropy,
    head_forward,
    init_train_state,
    train_step,
)

__version__ = "0.1.0"
