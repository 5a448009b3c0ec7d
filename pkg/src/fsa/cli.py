"""Command-line entry point: dataset generation, benchmarks, verification.

Exit codes: 0 success, 1 usage or input error, 2 property/threshold failure.
``FSA_WORKERS`` pins the kernel worker count (results are identical for any
value); ``FSA_INJECT_FAULT=1`` flips one fused output inside ``verify`` to
prove the suite catches mismatches.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import List, Optional

import numpy as np

from . import parallel
from .bench import (
    DEFAULT_SEEDS,
    format_report,
    report_speedups,
    resolve_dataset,
    run_grid,
    write_summary_csv,
)
from .fused import fused_2hop_backward, fused_2hop_forward
from .graph import GraphFormatError, save_csr_cache, write_edge_list
from .verify import equivalence_suite, grad_check_suite, worker_determinism_suite

GRAD_THRESHOLD = 1e-6


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we want 1
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="fsa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate or ingest a graph and cache it")
    gen.add_argument("--dataset", required=True, help="synth:powerlaw:... | synth:uniform:... | edgelist:<path>")
    gen.add_argument("--out", required=True)
    gen.add_argument("--format", choices=("bin", "edgelist"), default="bin")

    bench = sub.add_parser("bench", help="run the benchmark grid, append to CSV")
    bench.add_argument("--out", required=True)
    bench.add_argument("--datasets", nargs="+", required=True)
    bench.add_argument("--fanouts", nargs="+", default=["15 10"], metavar='"K1 K2"')
    bench.add_argument("--batches", nargs="+", type=int, default=[1024])
    bench.add_argument("--variants", nargs="+", default=["baseline", "fused"],
                       choices=("baseline", "fused"))
    bench.add_argument("--steps", type=int, default=30)
    bench.add_argument("--warmup", type=int, default=5)
    bench.add_argument("--repeats", type=int, default=3)
    bench.add_argument("--seeds", nargs="+", type=int, default=None,
                       help="base seeds; default 42.. for --repeats")
    bench.add_argument("--elem-bits", type=int, choices=(32, 64), default=32)
    bench.add_argument("--dedup", action="store_true")
    bench.add_argument("--d-feat", type=int, default=256)
    bench.add_argument("--hidden", type=int, default=256)
    bench.add_argument("--classes", type=int, default=10)

    verify = sub.add_parser("verify", help="randomized fused-vs-baseline equivalence suite")
    verify.add_argument("--trials", type=int, default=100)
    verify.add_argument("--max-n", type=int, default=200)
    verify.add_argument("--max-d", type=int, default=8)
    verify.add_argument("--seed", type=int, default=0)

    grad = sub.add_parser("grad-check", help="finite-difference gradient check (float64)")
    grad.add_argument("--trials", type=int, default=20)
    grad.add_argument("--eps", type=float, default=1e-6)
    grad.add_argument("--seed", type=int, default=3)
    grad.add_argument("--nosave", action="store_true",
                      help="demonstrate the forward-only path: backward is exactly zero")

    report = sub.add_parser("report", help="summarize a bench CSV")
    report.add_argument("--csv", required=True)
    report.add_argument("--summary-out", default=None)
    return parser


def _print_config(args: argparse.Namespace) -> None:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "command"}
    print(f"[fsa {args.command}] resolved config: {resolved}")
    print(f"[fsa {args.command}] workers: {parallel.get_workers()}")


def _parse_fanouts(raw: List[str]) -> List[tuple]:
    fanouts = []
    for item in raw:
        parts = item.replace(",", " ").split()
        if len(parts) != 2:
            raise UsageError(f'fanout must be "k1 k2", got {item!r}')
        fanouts.append((int(parts[0]), int(parts[1])))
    return fanouts


def _cmd_gen(args) -> int:
    graph, _, _ = resolve_dataset(args.dataset, d_feat=1, classes=2)
    if args.format == "bin":
        save_csr_cache(graph, args.out)
    else:
        write_edge_list(graph, args.out)
    degrees = graph.degrees()
    print(f"wrote {args.out}: N={graph.num_nodes} arcs={graph.num_edges} "
          f"mean_degree={degrees.mean():.2f} max_degree={degrees.max()}")
    return 0


def _cmd_bench(args) -> int:
    seeds = tuple(args.seeds) if args.seeds else tuple(DEFAULT_SEEDS[0] + i for i in range(args.repeats))
    fanouts = _parse_fanouts(args.fanouts)
    run_grid(
        datasets=args.datasets,
        fanouts=fanouts,
        batches=args.batches,
        variants=args.variants,
        out_path=args.out,
        base_seeds=seeds,
        steps=args.steps,
        warmup=args.warmup,
        elem_bits=args.elem_bits,
        dedup=args.dedup,
        d_feat=args.d_feat,
        hidden=args.hidden,
        classes=args.classes,
    )
    print(f"benchmark rows appended to {args.out}")
    if set(args.variants) >= {"baseline", "fused"}:
        print(format_report(report_speedups(args.out)))
    return 0


def _cmd_verify(args) -> int:
    inject = os.environ.get("FSA_INJECT_FAULT", "0") == "1"
    if inject:
        print("FSA_INJECT_FAULT=1: corrupting one fused output on purpose")
    if args.trials <= 0:
        print("WARNING: --trials 0 requested; nothing was checked (vacuous pass)")
        return 0
    report = equivalence_suite(args.trials, args.max_n, args.max_d, args.seed, inject_fault=inject)
    if not report.ok:
        print(f"FAIL after {report.trials} trials: {report.message}")
        print(f"counterexample: {report.counterexample}")
        return 2
    print(f"equivalence: PASS ({report.trials} trials: {report.message})")
    det = worker_determinism_suite()
    if not det.ok:
        print(f"FAIL: {det.message}\ncounterexample: {det.counterexample}")
        return 2
    print(f"determinism: PASS ({det.message})")
    return 0


def _cmd_grad_check(args) -> int:
    if args.nosave:
        rng = np.random.default_rng(0)
        from .verify import random_instance

        graph, X, seeds, k1, k2, base_seed = random_instance(rng, max_n=40, max_d=4)
        out, _ = fused_2hop_forward(graph, X, seeds, k1, k2, base_seed, save_indices=False)
        grad = fused_2hop_backward(np.ones_like(out), None, graph.num_nodes)
        assert not grad.any()
        print("nosave mode: no indices were saved, backward returns exactly zero "
              f"(checked an N={graph.num_nodes} instance)")
        return 0
    max_rel, checked = grad_check_suite(trials=args.trials, eps=args.eps, seed=args.seed)
    print(f"grad-check: {checked} instances (both hops, float64, eps={args.eps:g}), "
          f"max relative error {max_rel:.3e}")
    if max_rel >= GRAD_THRESHOLD:
        print(f"FAIL: exceeds threshold {GRAD_THRESHOLD:g}")
        return 2
    print("PASS")
    return 0


def _cmd_report(args) -> int:
    summaries = report_speedups(args.csv)
    print(format_report(summaries))
    if args.summary_out:
        write_summary_csv(summaries, args.summary_out)
        print(f"summary written to {args.summary_out}")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        parallel.apply_env_workers()
        _print_config(args)
        handler = {
            "gen": _cmd_gen,
            "bench": _cmd_bench,
            "verify": _cmd_verify,
            "grad-check": _cmd_grad_check,
            "report": _cmd_report,
        }[args.command]
        return handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (GraphFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
