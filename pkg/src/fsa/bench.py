"""Benchmark grid: warmup/measure protocol, medians, pairs/s, CSV output.

One benchmark run executes ``steps`` timed training steps after ``warmup``
untimed ones, repeated once per base seed, and appends one CSV row per
repeat.  Sampled-pair counts and peak transient bytes are deterministic for
a fixed configuration; only wall-clock columns vary between runs.
"""

from __future__ import annotations

import csv
import os
import statistics
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .graph import CsrGraph, SeedBatch, gen_power_law, gen_uniform, load_edge_list
from .meter import MemoryMeter
from .rng import MASK64, splitmix64
from .train import init_train_state, train_step

DEFAULT_SEEDS = (42, 43, 44)

CSV_COLUMNS = [
    "dataset", "variant", "k1", "k2", "batch", "repeat", "base_seed", "steps",
    "warmup", "elem_bits", "dedup", "d_feat", "hidden", "classes",
    "step_ms_median", "step_ms_p10", "step_ms_p90", "sampled_pairs_per_s",
    "peak_transient_bytes", "timestamp_iso8601",
]

__all__ = [
    "BenchConfig",
    "BenchRecord",
    "CSV_COLUMNS",
    "DEFAULT_SEEDS",
    "resolve_dataset",
    "run_config",
    "run_grid",
    "read_records",
    "report_speedups",
    "format_report",
    "write_summary_csv",
]


@dataclass(frozen=True)
class BenchConfig:
    dataset: str
    variant: str
    k1: int
    k2: int
    batch: int
    base_seeds: Tuple[int, ...] = DEFAULT_SEEDS
    steps: int = 30
    warmup: int = 5
    elem_bits: int = 32
    dedup: bool = False
    d_feat: int = 256
    hidden: int = 256
    classes: int = 10

    def __post_init__(self):
        if self.steps < 1 or self.warmup < 0 or self.batch < 1:
            raise ValueError("need steps >= 1, warmup >= 0, batch >= 1")
        if self.variant not in ("fused", "baseline"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.elem_bits not in (32, 64):
            raise ValueError("elem_bits must be 32 or 64")
        if self.k1 < 1 or self.k2 < 1:
            raise ValueError("fanouts must be >= 1")
        if not self.base_seeds:
            raise ValueError("need at least one base seed")

    @property
    def dtype(self):
        return np.float32 if self.elem_bits == 32 else np.float64


@dataclass
class BenchRecord:
    config: BenchConfig
    repeat: int
    base_seed: int
    step_ms_median: float
    step_ms_p10: float
    step_ms_p90: float
    sampled_pairs_per_s: float
    peak_transient_bytes: int
    timestamp_iso8601: str

    def key(self) -> Tuple:
        c = self.config
        return (c.dataset, c.variant, c.k1, c.k2, c.batch, self.repeat, self.base_seed,
                c.steps, c.warmup, c.elem_bits, c.dedup, c.d_feat, c.hidden, c.classes)

    def to_row(self) -> Dict[str, str]:
        c = self.config
        return {
            "dataset": c.dataset,
            "variant": c.variant,
            "k1": str(c.k1),
            "k2": str(c.k2),
            "batch": str(c.batch),
            "repeat": str(self.repeat),
            "base_seed": str(self.base_seed),
            "steps": str(c.steps),
            "warmup": str(c.warmup),
            "elem_bits": str(c.elem_bits),
            "dedup": "true" if c.dedup else "false",
            "d_feat": str(c.d_feat),
            "hidden": str(c.hidden),
            "classes": str(c.classes),
            "step_ms_median": repr(self.step_ms_median),
            "step_ms_p10": repr(self.step_ms_p10),
            "step_ms_p90": repr(self.step_ms_p90),
            "sampled_pairs_per_s": repr(self.sampled_pairs_per_s),
            "peak_transient_bytes": str(self.peak_transient_bytes),
            "timestamp_iso8601": self.timestamp_iso8601,
        }


# ---------------------------------------------------------------------------
# dataset specs
# ---------------------------------------------------------------------------

def resolve_dataset(
    spec: str, d_feat: int, classes: int, dtype=np.float32
) -> Tuple[CsrGraph, np.ndarray, np.ndarray]:
    """Materialize (graph, features, labels) from a dataset spec string.

    Formats: ``synth:powerlaw:N=...,deg=...,exp=...,seed=...``,
    ``synth:uniform:N=...,deg=...,seed=...`` and ``edgelist:<path>``.
    Features and labels are synthesized deterministically from the spec, so
    any run is reproducible from the CSV alone.
    """
    if spec.startswith("edgelist:"):
        graph = load_edge_list(spec[len("edgelist:"):], make_undirected=True)
        data_seed = 0
    elif spec.startswith("synth:"):
        try:
            _, kind, args = spec.split(":", 2)
            kv = dict(part.split("=", 1) for part in args.split(","))
        except ValueError:
            raise ValueError(f"malformed dataset spec {spec!r}") from None
        if kind == "powerlaw":
            graph = gen_power_law(
                int(kv["N"]), float(kv["deg"]), float(kv["exp"]), int(kv["seed"])
            )
        elif kind == "uniform":
            graph = gen_uniform(int(kv["N"]), int(kv["deg"]), int(kv["seed"]))
        else:
            raise ValueError(f"unknown synthetic graph kind {kind!r}")
        data_seed = int(kv["seed"])
    else:
        raise ValueError(f"unknown dataset spec {spec!r} (want synth:... or edgelist:...)")
    n = graph.num_nodes
    feat_rng = np.random.default_rng([data_seed & 0xFFFFFFFF, 1])
    X = feat_rng.standard_normal((n, d_feat)).astype(dtype)
    label_rng = np.random.default_rng([data_seed & 0xFFFFFFFF, 2])
    labels = label_rng.integers(0, classes, size=n, dtype=np.int64)
    return graph, X, labels


# ---------------------------------------------------------------------------
# measurement
# ---------------------------------------------------------------------------

def _batch_stream(num_nodes: int, batch: int, base_seed: int):
    """Deterministic shuffled batch order; reshuffles each epoch, drops the
    ragged tail."""
    rng = np.random.default_rng([base_seed & 0xFFFFFFFF, 3])
    while True:
        perm = rng.permutation(num_nodes)
        for start in range(0, num_nodes - batch + 1, batch):
            yield perm[start:start + batch]


def _step_seed(base_seed: int, step_index: int) -> int:
    # fresh sampling seed per step so revisited nodes resample
    return splitmix64((base_seed + 0x9E3779B97F4A7C15 * (step_index + 1)) & MASK64)


def _sync() -> None:
    # kernels run synchronously in-process; this marks the protocol point
    # where a deferred-work flush would go.
    return None


def run_config(
    config: BenchConfig,
    graph: CsrGraph,
    X: np.ndarray,
    labels: np.ndarray,
) -> List[BenchRecord]:
    """Run one configuration, one repeat per base seed; returns the records."""
    if X.dtype != config.dtype:
        raise ValueError(f"features are {X.dtype} but config wants {config.dtype}")
    if X.shape[1] != config.d_feat:
        raise ValueError("feature width does not match config")
    if config.batch > graph.num_nodes:
        raise ValueError("batch larger than the graph")
    n = graph.num_nodes
    records: List[BenchRecord] = []
    for repeat, base_seed in enumerate(config.base_seeds):
        state = init_train_state(
            config.d_feat, config.hidden, config.classes, base_seed, dtype=config.dtype
        )
        # persistent feature-gradient accumulator, reused across steps
        grad_scratch = np.zeros((n, config.d_feat), dtype=config.dtype)
        batches = _batch_stream(n, config.batch, base_seed)
        meter = MemoryMeter()
        step_times: List[float] = []
        total_pairs = 0
        for step in range(config.warmup + config.steps):
            ids = next(batches)
            batch = SeedBatch(seeds=ids, labels=labels[ids])
            if step == config.warmup:
                meter.reset()
            _sync()
            t0 = time.perf_counter()
            result = train_step(
                graph, X, batch, (config.k1, config.k2), _step_seed(base_seed, step),
                config.variant, state, meter=meter, grad_scratch=grad_scratch,
                dedup=config.dedup,
            )
            _sync()
            elapsed = time.perf_counter() - t0
            if step >= config.warmup:
                step_times.append(elapsed)
                total_pairs += result.sampled_pairs
        times_ms = np.asarray(step_times) * 1e3
        p10, p50, p90 = np.percentile(times_ms, [10, 50, 90])
        records.append(
            BenchRecord(
                config=config,
                repeat=repeat,
                base_seed=base_seed,
                step_ms_median=float(p50),
                step_ms_p10=float(p10),
                step_ms_p90=float(p90),
                sampled_pairs_per_s=float(total_pairs / (sum(step_times) or 1e-12)),
                peak_transient_bytes=int(meter.peak_bytes),
                timestamp_iso8601=datetime.now(timezone.utc).isoformat(),
            )
        )
    return records


def run_grid(
    datasets: Sequence[str],
    fanouts: Sequence[Tuple[int, int]],
    batches: Sequence[int],
    variants: Sequence[str],
    out_path: str,
    base_seeds: Sequence[int] = DEFAULT_SEEDS,
    steps: int = 30,
    warmup: int = 5,
    elem_bits: int = 32,
    dedup: bool = False,
    d_feat: int = 256,
    hidden: int = 256,
    classes: int = 10,
    log=print,
) -> List[BenchRecord]:
    """Cross-product run; appends to the CSV, skipping rows already present.

    Re-running the same grid on an existing file is a no-op (idempotent by
    the config+repeat key).
    """
    existing = set()
    if os.path.exists(out_path) and os.path.getsize(out_path) > 0:
        existing = {r.key() for r in read_records(out_path)}
    write_header = not existing and (not os.path.exists(out_path) or os.path.getsize(out_path) == 0)
    dtype = np.float32 if elem_bits == 32 else np.float64
    new_records: List[BenchRecord] = []
    dataset_cache: Dict[str, Tuple[CsrGraph, np.ndarray, np.ndarray]] = {}
    with open(out_path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        if write_header:
            writer.writeheader()
        for dataset in datasets:
            for (k1, k2) in fanouts:
                for batch in batches:
                    for variant in variants:
                        config = BenchConfig(
                            dataset=dataset, variant=variant, k1=k1, k2=k2,
                            batch=batch, base_seeds=tuple(base_seeds), steps=steps,
                            warmup=warmup, elem_bits=elem_bits, dedup=dedup,
                            d_feat=d_feat, hidden=hidden, classes=classes,
                        )
                        pending = [
                            (i, s) for i, s in enumerate(config.base_seeds)
                            if _record_key(config, i, s) not in existing
                        ]
                        if not pending:
                            log(f"skip {dataset} {variant} ({k1},{k2}) B={batch}: already in CSV")
                            continue
                        if dataset not in dataset_cache:
                            log(f"resolving dataset {dataset}")
                            dataset_cache[dataset] = resolve_dataset(dataset, d_feat, classes, dtype)
                        graph, X, labels = dataset_cache[dataset]
                        log(f"run {dataset} {variant} ({k1},{k2}) B={batch} repeats={len(pending)}")
                        run_cfg = replace(config, base_seeds=tuple(s for _, s in pending))
                        for (repeat, _), record in zip(pending, run_config(run_cfg, graph, X, labels)):
                            record = BenchRecord(
                                config=config, repeat=repeat, base_seed=record.base_seed,
                                step_ms_median=record.step_ms_median,
                                step_ms_p10=record.step_ms_p10,
                                step_ms_p90=record.step_ms_p90,
                                sampled_pairs_per_s=record.sampled_pairs_per_s,
                                peak_transient_bytes=record.peak_transient_bytes,
                                timestamp_iso8601=record.timestamp_iso8601,
                            )
                            writer.writerow(record.to_row())
                            fh.flush()
                            new_records.append(record)
    return new_records


def _record_key(config: BenchConfig, repeat: int, base_seed: int) -> Tuple:
    return (config.dataset, config.variant, config.k1, config.k2, config.batch,
            repeat, base_seed, config.steps, config.warmup, config.elem_bits,
            config.dedup, config.d_feat, config.hidden, config.classes)


# ---------------------------------------------------------------------------
# CSV reading and the speedup report
# ---------------------------------------------------------------------------

def read_records(path: str) -> List[BenchRecord]:
    """Parse a bench CSV; raises ValueError with the offending row number."""
    records: List[BenchRecord] = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return records
        missing = [c for c in CSV_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        for rownum, row in enumerate(reader, start=2):
            try:
                config = BenchConfig(
                    dataset=row["dataset"], variant=row["variant"],
                    k1=int(row["k1"]), k2=int(row["k2"]), batch=int(row["batch"]),
                    base_seeds=(int(row["base_seed"]),),
                    steps=int(row["steps"]), warmup=int(row["warmup"]),
                    elem_bits=int(row["elem_bits"]), dedup=row["dedup"] == "true",
                    d_feat=int(row["d_feat"]), hidden=int(row["hidden"]),
                    classes=int(row["classes"]),
                )
                records.append(BenchRecord(
                    config=config,
                    repeat=int(row["repeat"]),
                    base_seed=int(row["base_seed"]),
                    step_ms_median=float(row["step_ms_median"]),
                    step_ms_p10=float(row["step_ms_p10"]),
                    step_ms_p90=float(row["step_ms_p90"]),
                    sampled_pairs_per_s=float(row["sampled_pairs_per_s"]),
                    peak_transient_bytes=int(row["peak_transient_bytes"]),
                    timestamp_iso8601=row["timestamp_iso8601"],
                ))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}: row {rownum}: {exc}") from None
    return records


def report_speedups(csv_path: str) -> List[Dict]:
    """Per (dataset, fanout, batch): medians across repeats and the
    baseline->fused ratios.  Raises if either variant is missing rows."""
    records = read_records(csv_path)
    if not records:
        raise ValueError(f"{csv_path}: no benchmark rows")
    groups: Dict[Tuple, Dict[str, List[BenchRecord]]] = {}
    for rec in records:
        c = rec.config
        key = (c.dataset, c.k1, c.k2, c.batch, c.elem_bits, c.dedup)
        groups.setdefault(key, {}).setdefault(c.variant, []).append(rec)
    summaries = []
    for key in sorted(groups):
        per_variant = groups[key]
        for variant in ("baseline", "fused"):
            if variant not in per_variant:
                raise ValueError(
                    f"incomplete config {key}: missing {variant} rows in {csv_path}"
                )
        med = {
            variant: {
                "step_ms": statistics.median(r.step_ms_median for r in recs),
                "pairs_per_s": statistics.median(r.sampled_pairs_per_s for r in recs),
                "peak_bytes": statistics.median(r.peak_transient_bytes for r in recs),
            }
            for variant, recs in per_variant.items()
        }
        dataset, k1, k2, batch, elem_bits, dedup = key
        summaries.append({
            "dataset": dataset, "k1": k1, "k2": k2, "batch": batch,
            "elem_bits": elem_bits, "dedup": dedup,
            "baseline_step_ms": med["baseline"]["step_ms"],
            "fused_step_ms": med["fused"]["step_ms"],
            "step_speedup": med["baseline"]["step_ms"] / med["fused"]["step_ms"],
            "baseline_pairs_per_s": med["baseline"]["pairs_per_s"],
            "fused_pairs_per_s": med["fused"]["pairs_per_s"],
            "pairs_speedup": med["fused"]["pairs_per_s"] / med["baseline"]["pairs_per_s"],
            "baseline_peak_bytes": med["baseline"]["peak_bytes"],
            "fused_peak_bytes": med["fused"]["peak_bytes"],
            "mem_ratio": med["baseline"]["peak_bytes"] / med["fused"]["peak_bytes"],
        })
    return summaries


def format_report(summaries: List[Dict]) -> str:
    """Console table: baseline -> fused medians with ratio columns."""
    lines = [
        f"{'dataset':<40} {'fanout':>7} {'batch':>6} "
        f"{'step ms (base -> fused)':>28} {'speedup':>8} "
        f"{'pairs/s speedup':>16} {'mem ratio':>10}"
    ]
    for s in summaries:
        fanout = f"{s['k1']}-{s['k2']}"
        step = f"{s['baseline_step_ms']:.2f} -> {s['fused_step_ms']:.2f}"
        lines.append(
            f"{s['dataset']:<40} {fanout:>7} {s['batch']:>6} {step:>28} "
            f"{s['step_speedup']:>7.2f}x {s['pairs_speedup']:>15.2f}x "
            f"{s['mem_ratio']:>9.2f}x"
        )
    return "\n".join(lines)


SUMMARY_COLUMNS = [
    "dataset", "k1", "k2", "batch", "elem_bits", "dedup",
    "baseline_step_ms", "fused_step_ms", "step_speedup",
    "baseline_pairs_per_s", "fused_pairs_per_s", "pairs_speedup",
    "baseline_peak_bytes", "fused_peak_bytes", "mem_ratio",
]


def write_summary_csv(summaries: List[Dict], path: str) -> None:
    """Machine-readable summary consumed by the plotting frontend."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        for s in summaries:
            row = dict(s)
            row["dedup"] = "true" if s["dedup"] else "false"
            for col in SUMMARY_COLUMNS:
                if isinstance(row[col], float):
                    row[col] = repr(row[col])
            writer.writerow({c: row[c] for c in SUMMARY_COLUMNS})
