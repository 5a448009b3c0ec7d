"""CSR graphs: construction, validation, generators, and file formats.

Everything downstream (samplers, the fused operator, the baseline pipeline)
consumes adjacency exclusively through the :class:`CsrGraph` view.  Node IDs
and rowptr offsets are int32; neighbor lists are stored sorted ascending so
that reservoir sampling sees a canonical stream order on every machine.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

MAX_NODES = 2**31 - 1
CACHE_MAGIC = b"FSA1"

__all__ = [
    "CsrGraph",
    "SeedBatch",
    "GraphFormatError",
    "build_csr",
    "gen_power_law",
    "gen_uniform",
    "load_edge_list",
    "write_edge_list",
    "save_csr_cache",
    "load_csr_cache",
]


class GraphFormatError(ValueError):
    """Raised for unparseable edge-list or cache files."""


@dataclass(frozen=True)
class CsrGraph:
    """Adjacency in compressed sparse row form.

    Immutable after construction; safe to share read-only across workers.
    """

    num_nodes: int
    rowptr: np.ndarray  # int32, shape (num_nodes + 1,)
    col: np.ndarray     # int32, shape (rowptr[-1],)

    @property
    def num_edges(self) -> int:
        """Number of stored arcs (an undirected edge counts twice)."""
        return int(self.rowptr[-1])

    def degree(self, u: int) -> int:
        return int(self.rowptr[u + 1] - self.rowptr[u])

    def neighbors(self, u: int) -> np.ndarray:
        """Read-only view of u's neighbor list, ascending."""
        return self.col[self.rowptr[u]:self.rowptr[u + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.rowptr).astype(np.int64)

    def validate(self, expect_undirected: bool = False) -> None:
        """Check the CSR invariants in O(N + E); raises ValueError on breach."""
        n = self.num_nodes
        if n <= 0:
            raise ValueError("graph must have at least one node")
        if self.rowptr.dtype != np.int32 or self.col.dtype != np.int32:
            raise ValueError("rowptr and col must be int32")
        if self.rowptr.shape != (n + 1,):
            raise ValueError(f"rowptr must have length N+1={n + 1}")
        if self.rowptr[0] != 0:
            raise ValueError("rowptr[0] must be 0")
        if np.any(np.diff(self.rowptr) < 0):
            raise ValueError("rowptr must be non-decreasing")
        if int(self.rowptr[-1]) != len(self.col):
            raise ValueError("rowptr[N] must equal len(col)")
        if len(self.col) and (self.col.min() < 0 or self.col.max() >= n):
            raise ValueError("col entries must lie in [0, N)")
        if expect_undirected:
            fwd = _arc_array(self)
            rev = fwd[:, ::-1]
            if not np.array_equal(_canonicalize(fwd), _canonicalize(rev)):
                raise ValueError("edge set is not symmetric")


@dataclass
class SeedBatch:
    """A mini-batch frontier: node IDs plus optional class labels."""

    seeds: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.seeds = np.ascontiguousarray(self.seeds, dtype=np.int64)
        if self.seeds.ndim != 1 or len(self.seeds) == 0:
            raise ValueError("seed batch must be a non-empty 1-D array")
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
            if self.labels.shape != self.seeds.shape:
                raise ValueError("labels must match seeds in shape")

    def __len__(self) -> int:
        return len(self.seeds)


def _canonicalize(arcs: np.ndarray) -> np.ndarray:
    """Sort arcs by (src, dst) and drop duplicates."""
    if len(arcs) == 0:
        return arcs.reshape(0, 2)
    order = np.lexsort((arcs[:, 1], arcs[:, 0]))
    arcs = arcs[order]
    keep = np.ones(len(arcs), dtype=bool)
    keep[1:] = np.any(arcs[1:] != arcs[:-1], axis=1)
    return arcs[keep]


def _arc_array(graph: CsrGraph) -> np.ndarray:
    src = np.repeat(np.arange(graph.num_nodes, dtype=np.int64), np.diff(graph.rowptr))
    return np.stack([src, graph.col.astype(np.int64)], axis=1)


def build_csr(edges, num_nodes: int, make_undirected: bool = False) -> CsrGraph:
    """Build a CsrGraph from (u, v) pairs.

    Duplicate arcs are removed and neighbor lists sorted ascending.  With
    ``make_undirected`` the edge set is symmetrized first; symmetrizing an
    already symmetric set is a no-op.
    """
    if num_nodes <= 0:
        raise ValueError("num_nodes must be >= 1")
    if num_nodes > MAX_NODES:
        raise ValueError(f"num_nodes must be < 2**31, got {num_nodes}")
    arcs = np.asarray(edges, dtype=np.int64)
    if arcs.size == 0:
        arcs = arcs.reshape(0, 2)
    if arcs.ndim != 2 or arcs.shape[1] != 2:
        raise ValueError("edges must be a sequence of (u, v) pairs")
    if len(arcs) and (arcs.min() < 0 or arcs.max() >= num_nodes):
        bad = arcs[(arcs < 0).any(axis=1) | (arcs >= num_nodes).any(axis=1)][0]
        raise ValueError(f"edge endpoint out of range: {tuple(bad)} with N={num_nodes}")
    if make_undirected and len(arcs):
        arcs = np.concatenate([arcs, arcs[:, ::-1]])
    arcs = _canonicalize(arcs)
    if len(arcs) > MAX_NODES:
        raise ValueError("arc count must be < 2**31 for int32 offsets")
    counts = np.bincount(arcs[:, 0], minlength=num_nodes) if len(arcs) else np.zeros(num_nodes, dtype=np.int64)
    rowptr = np.zeros(num_nodes + 1, dtype=np.int32)
    rowptr[1:] = np.cumsum(counts).astype(np.int32)
    col = np.ascontiguousarray(arcs[:, 1], dtype=np.int32)
    graph = CsrGraph(num_nodes=num_nodes, rowptr=rowptr, col=col)
    graph.validate()
    return graph


def gen_power_law(num_nodes: int, avg_degree: float, exponent: float, rng_seed: int) -> CsrGraph:
    """Undirected graph with a truncated power-law degree distribution.

    Degrees are drawn from a truncated Pareto with the given exponent,
    rescaled to the target mean, then wired with a configuration-model stub
    pairing; self-loops and duplicate pairs are dropped, so the realized mean
    degree lands slightly below the target.  Pure function of the arguments.
    """
    if num_nodes < 2:
        raise ValueError("num_nodes must be >= 2")
    if avg_degree < 1:
        raise ValueError("avg_degree must be >= 1")
    if avg_degree > num_nodes - 1:
        raise ValueError("avg_degree cannot exceed num_nodes - 1")
    if exponent <= 1.0:
        raise ValueError("exponent must be > 1")
    dmax = num_nodes - 1
    # inverse-CDF sample of a Pareto(exponent) truncated to [1, dmax]
    draw_rng = np.random.default_rng([rng_seed & 0xFFFFFFFF, 0])
    a1 = 1.0 - exponent
    raw = (1.0 + draw_rng.random(num_nodes) * (float(dmax) ** a1 - 1.0)) ** (1.0 / a1)
    # Stub pairing loses edges to self-loops and duplicate pairs (heavily so
    # around hubs), dragging the realized mean below the drawn mean.  Keep
    # the draw fixed and rescale it until the realized mean degree lands.
    scale = 1.0
    best: Optional[CsrGraph] = None
    best_err = np.inf
    for attempt in range(6):
        scaled = raw * (avg_degree * scale / raw.mean())
        target = np.clip(np.rint(scaled), 1, dmax).astype(np.int64)
        stubs = np.repeat(np.arange(num_nodes, dtype=np.int64), target)
        pair_rng = np.random.default_rng([rng_seed & 0xFFFFFFFF, 1 + attempt])
        pair_rng.shuffle(stubs)
        if len(stubs) % 2:
            stubs = stubs[:-1]
        pairs = stubs.reshape(-1, 2)
        pairs = pairs[pairs[:, 0] != pairs[:, 1]]
        graph = build_csr(pairs, num_nodes, make_undirected=True)
        realized = graph.num_edges / num_nodes
        err = abs(realized - avg_degree) / avg_degree
        if err < best_err:
            best, best_err = graph, err
        if err <= 0.08:
            return graph
        scale = float(np.clip(scale * avg_degree / max(realized, 0.5), 0.25, 8.0))
    assert best is not None
    return best


def gen_uniform(num_nodes: int, degree: int, rng_seed: int) -> CsrGraph:
    """Undirected graph where every node picks ``degree`` distinct partners.

    After symmetrization every node has degree >= ``degree``.  Deterministic
    for a fixed seed.
    """
    if degree >= num_nodes:
        raise ValueError("degree must be < num_nodes")
    if degree < 1:
        raise ValueError("degree must be >= 1")
    rng = np.random.default_rng(rng_seed)
    targets = np.empty((num_nodes, degree), dtype=np.int64)
    for i in range(num_nodes):
        row = rng.choice(num_nodes - 1, size=degree, replace=False)
        row[row >= i] += 1  # skip self
        targets[i] = row
    src = np.repeat(np.arange(num_nodes, dtype=np.int64), degree)
    pairs = np.stack([src, targets.reshape(-1)], axis=1)
    return build_csr(pairs, num_nodes, make_undirected=True)


def load_edge_list(path, make_undirected: bool = False) -> CsrGraph:
    """Parse a whitespace-separated "u v" edge list; '#' lines are comments."""
    edges = []
    max_id = -1
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) != 2:
                raise GraphFormatError(f"{path}: line {lineno}: expected 'u v', got {stripped!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphFormatError(f"{path}: line {lineno}: non-integer endpoint in {stripped!r}") from None
            if u < 0 or v < 0:
                raise GraphFormatError(f"{path}: line {lineno}: negative node ID")
            edges.append((u, v))
            max_id = max(max_id, u, v)
    if not edges:
        raise GraphFormatError(f"{path}: no edges found")
    return build_csr(edges, max_id + 1, make_undirected=make_undirected)


def write_edge_list(graph: CsrGraph, path, undirected: bool = True) -> None:
    """Dump a graph as an edge-list text file.

    With ``undirected`` each symmetric pair is written once (u <= v), so a
    reload with make_undirected=True reproduces the CSR exactly.
    """
    arcs = _arc_array(graph)
    if undirected:
        arcs = arcs[arcs[:, 0] <= arcs[:, 1]]
    with open(path, "w", encoding="utf-8") as fh:
        for u, v in arcs:
            fh.write(f"{u} {v}\n")


def save_csr_cache(graph: CsrGraph, path) -> None:
    """Write the binary CSR cache: magic "FSA1", N (u64 LE), rowptr, col (i32 LE)."""
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<Q", graph.num_nodes))
        fh.write(graph.rowptr.astype("<i4").tobytes())
        fh.write(graph.col.astype("<i4").tobytes())


def load_csr_cache(path) -> CsrGraph:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CACHE_MAGIC:
            raise GraphFormatError(f"{path}: bad magic {magic!r}, expected {CACHE_MAGIC!r}")
        (n,) = struct.unpack("<Q", fh.read(8))
        if n == 0 or n > MAX_NODES:
            raise GraphFormatError(f"{path}: implausible node count {n}")
        rowptr = np.frombuffer(fh.read(4 * (n + 1)), dtype="<i4")
        if len(rowptr) != n + 1:
            raise GraphFormatError(f"{path}: truncated rowptr")
        nnz = int(rowptr[-1])
        col = np.frombuffer(fh.read(4 * nnz), dtype="<i4")
        if len(col) != nnz:
            raise GraphFormatError(f"{path}: truncated col")
    graph = CsrGraph(num_nodes=int(n), rowptr=rowptr.astype(np.int32), col=col.astype(np.int32))
    graph.validate()
    return graph
