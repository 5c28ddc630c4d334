"""Command-line entry point.

Subcommands: quantize, verify, simulate, sweep, cost, trace.  Every run
writes a manifest next to its outputs; outputs themselves are deterministic
byte-for-byte given the same configuration and seed.  Exit codes: 0 success,
1 verification failure, 2 I/O error, 3 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, blocks, cost, fixtures
from .config import RunConfig, load_config
from .quant import QuantScheme, SchemeTable, dequantize_token, quantize_token
from .sim import simulate_trace, sweep, sweep_to_csv
from .tensors import ContractViolation, load_tensor, rmse
from .workload import build_folding_block, emit_trace, graph_to_json, make_variant_config

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_IO = 2
EXIT_USAGE = 3


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2; the contract says 3
        raise UsageError(message)


def _atomic_write(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    if isinstance(data, bytes):
        tmp.write_bytes(data)
    else:
        tmp.write_text(data)
    os.replace(tmp, path)


def _write_manifest(out_dir: Path, command: str, args: argparse.Namespace,
                    run_cfg: RunConfig, outputs: list[Path], started: float) -> None:
    doc = {
        "command": command,
        "argv": sys.argv[1:],
        "config": run_cfg.snapshot(),
        "seed": args.seed,
        "tool_version": __version__,
        "outputs": [str(p) for p in outputs],
        "wall_clock_s": round(time.time() - started, 6),
    }
    _atomic_write(out_dir / f"{command}_manifest.json", json.dumps(doc, indent=1, sort_keys=True))


def _parse_scheme(spec: str) -> QuantScheme:
    """Accept a group letter (A/B/C) or an explicit bits:k pair."""
    named = {"A": QuantScheme(8, 4), "B": QuantScheme(4, 4), "C": QuantScheme(4, 0)}
    if spec.upper() in named:
        return named[spec.upper()]
    parts = spec.split(":")
    if len(parts) != 2:
        raise UsageError(f"bad scheme spec {spec!r}: expected A|B|C or bits:k")
    try:
        return QuantScheme(int(parts[0]), int(parts[1]))
    except (ValueError, ContractViolation) as e:
        raise UsageError(f"bad scheme spec {spec!r}: {e}") from e


def _parse_int_list(spec: str) -> list[int]:
    """Comma list (a,b,c) or inclusive range (a:b or a:b:step)."""
    if ":" in spec:
        parts = [int(x) for x in spec.split(":")]
        if len(parts) == 2:
            lo, hi, step = parts[0], parts[1], 1
        elif len(parts) == 3:
            lo, hi, step = parts
        else:
            raise UsageError(f"bad range {spec!r}")
        return list(range(lo, hi + 1, step))
    try:
        return [int(x) for x in spec.split(",") if x]
    except ValueError as e:
        raise UsageError(f"bad integer list {spec!r}") from e


def _load_run_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        cfg = load_config(path, cfg)
    if getattr(args, "schemes", None):
        cfg.schemes = SchemeTable.parse(args.schemes)
        cfg.scheme_spec = args.schemes
    if getattr(args, "chunk4", False):
        cfg.workload = dataclasses.replace(cfg.workload, chunk_factor=4)
    if getattr(args, "no_streaming_mha", False):
        cfg.workload = dataclasses.replace(cfg.workload, streaming_mha=False)
    return cfg


def cmd_quantize(args) -> int:
    started = time.time()
    out_dir = Path(args.out_dir)
    run_cfg = _load_run_config(args)
    in_path = Path(args.input)
    if not in_path.is_file():
        raise FileNotFoundError(f"input tensor not found: {in_path}")
    tensor = load_tensor(in_path)
    scheme = _parse_scheme(args.scheme)
    flat = tensor.data.reshape(-1, tensor.hz)
    tokens = [quantize_token(row, scheme) for row in flat]
    blob = blocks.encode_stream(tokens, scheme,
                                run_cfg.workload.txn_bytes, run_cfg.workload.tokens_per_block)
    recon = np.stack([dequantize_token(t, scheme) for t in tokens])
    out_path = out_dir / (args.out or (in_path.stem + ".blocks"))
    _atomic_write(out_path, blob)
    sidecar = {
        "input": str(in_path),
        "ns": tensor.ns,
        "hz": tensor.hz,
        "tokens": len(tokens),
        "scheme": {"inlier_bits": scheme.inlier_bits, "outlier_count": scheme.outlier_count},
        "bytes": len(blob),
        "payload_bytes": len(tokens) * blocks.token_encoded_bytes(scheme, tensor.hz),
        "rmse": rmse(recon, flat),
        "group_counts": {scheme.label(): len(tokens)},
    }
    sidecar_path = out_path.with_suffix(out_path.suffix + ".json")
    _atomic_write(sidecar_path, json.dumps(sidecar, indent=1, sort_keys=True))
    _write_manifest(out_dir, "quantize", args, run_cfg, [out_path, sidecar_path], started)
    print(f"quantized {len(tokens)} tokens -> {out_path} ({len(blob)} bytes, "
          f"rmse {sidecar['rmse']:.6g})")
    return EXIT_OK


def cmd_verify(args) -> int:
    froot = Path(args.fixtures)
    results = fixtures.verify(froot)
    failed = [name for name, ok, _ in results if not ok]
    for name, ok, detail in results:
        line = f"verify {name}: {'PASS' if ok else 'FAIL'}"
        if detail:
            line += f" ({detail})"
        print(line)
    if failed:
        print(f"{len(failed)} fixture(s) failed: {', '.join(failed)}")
        return EXIT_VERIFY
    print(f"all {len(results)} fixtures pass")
    return EXIT_OK


def cmd_simulate(args) -> int:
    started = time.time()
    out_dir = Path(args.out_dir)
    run_cfg = _load_run_config(args)
    graph = build_folding_block(args.ns, run_cfg.workload, run_cfg.schemes)
    trace = emit_trace(graph)
    report = simulate_trace(trace, run_cfg.sim, graph)
    outputs = []
    if args.trace_out:
        trace_path = out_dir / args.trace_out
        _atomic_write(trace_path, graph_to_json(graph, trace))
        outputs.append(trace_path)
    stem = f"simulate_ns{args.ns}_{report.variant}"
    if args.report == "json":
        report_path = out_dir / f"{stem}.json"
        _atomic_write(report_path, report.to_json())
    else:
        report_path = out_dir / f"{stem}.csv"
        rows = [{"ns": args.ns, "variant": report.variant,
                 "total_cycles": report.total_cycles, "block_cycles": report.block_cycles,
                 "rmpu_utilization_pct": round(report.rmpu_utilization_pct, 4),
                 "vvpu_utilization_pct": round(report.vvpu_utilization_pct, 4),
                 "achieved_gbps": round(report.achieved_gbps, 4),
                 "peak_main_memory_bytes": report.peak_main_memory_bytes}]
        _atomic_write(report_path, sweep_to_csv(rows))
    outputs.append(report_path)
    _write_manifest(out_dir, "simulate", args, run_cfg, outputs, started)
    print(f"ns={args.ns} variant={report.variant}: {report.total_cycles} cycles "
          f"({report.block_cycles} per block), peak {report.peak_main_memory_bytes} B "
          f"-> {report_path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    started = time.time()
    out_dir = Path(args.out_dir)
    run_cfg = _load_run_config(args)
    grid = {}
    if args.rmpus:
        grid["num_rmpus"] = _parse_int_list(args.rmpus)
    if args.vvpus:
        grid["vvpus_per_rmpu"] = _parse_int_list(args.vvpus)
    if not grid:
        raise UsageError("sweep needs --rmpus and/or --vvpus")
    rows = sweep(run_cfg.sim, grid, [args.ns], run_cfg.workload, run_cfg.schemes,
                 jobs=max(1, args.jobs))
    if args.report == "json":
        path = out_dir / "sweep.json"
        _atomic_write(path, json.dumps(rows, indent=1, sort_keys=True))
    else:
        path = out_dir / "sweep.csv"
        _atomic_write(path, sweep_to_csv(rows))
    _write_manifest(out_dir, "sweep", args, run_cfg, [path], started)
    print(f"{len(rows)} sweep rows -> {path}")
    return EXIT_OK


def cmd_cost(args) -> int:
    started = time.time()
    out_dir = Path(args.out_dir)
    run_cfg = _load_run_config(args)
    ns_values = _parse_int_list(args.ns)
    variants = cost.VARIANTS if args.variant == "all" else (args.variant,)
    for v in variants:
        if v not in cost.VARIANTS:
            raise UsageError(f"unknown variant {v!r}; choose from {cost.VARIANTS} or all")
    rows = cost.cost_table(ns_values, variants, run_cfg.workload, run_cfg.schemes,
                           model_weight_bytes=args.model_weight_bytes)
    path = out_dir / "cost.csv"
    _atomic_write(path, cost.cost_table_csv(rows))
    _write_manifest(out_dir, "cost", args, run_cfg, [path], started)
    print(f"{len(rows)} cost rows -> {path}")
    return EXIT_OK


def cmd_trace(args) -> int:
    started = time.time()
    out_dir = Path(args.out_dir)
    run_cfg = _load_run_config(args)
    wl = make_variant_config(args.variant, run_cfg.workload) if args.variant else run_cfg.workload
    graph = build_folding_block(args.ns, wl, run_cfg.schemes)
    trace = emit_trace(graph)
    path = out_dir / (args.out or f"trace_ns{args.ns}.json")
    _atomic_write(path, graph_to_json(graph, trace))
    _write_manifest(out_dir, "trace", args, run_cfg, [path], started)
    print(f"graph with {len(graph.nodes)} nodes / {len(graph.edges)} edges -> {path}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="aaqsim", description=__doc__)
    parser.add_argument("--version", action="version", version=f"aaqsim {__version__}")
    parser.add_argument("--config", help="key=value config file (sections sim./workload./quant.)")
    parser.add_argument("--seed", type=int, default=0, help="run seed, recorded in the manifest")
    parser.add_argument("--out-dir", default=".", help="directory for outputs and manifests")
    parser.add_argument("--jobs", type=int, default=1, help="parallel worker bound (sweeps)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("quantize", help="quantize a tensor dump into token blocks")
    p.add_argument("--input", required=True, help="tensor dump (AAQT format)")
    p.add_argument("--scheme", default="B", help="A|B|C or bits:k")
    p.add_argument("--out", help="output block file name")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("verify", help="replay all golden fixtures")
    p.add_argument("--fixtures", default="fixtures", help="fixture directory")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", help="cycle-simulate the folding block at one Ns")
    p.add_argument("--ns", type=int, required=True)
    p.add_argument("--schemes", help="scheme table, e.g. A:8:4,B:4:4,C:4:0")
    p.add_argument("--chunk4", action="store_true", help="channel-chunked baseline transform")
    p.add_argument("--no-streaming-mha", action="store_true",
                   help="materialize attention score tensors in memory")
    p.add_argument("--trace-out", help="also write the graph/trace JSON")
    p.add_argument("--report", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="hardware-configuration sweep")
    p.add_argument("--ns", type=int, default=512)
    p.add_argument("--rmpus", help="engine counts, e.g. 1:64 or 8,16,32")
    p.add_argument("--vvpus", help="vector units per engine, e.g. 1,2,4,8,16")
    p.add_argument("--schemes")
    p.add_argument("--report", choices=("json", "csv"), default="csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("cost", help="closed-form byte/op accounting across Ns")
    p.add_argument("--ns", required=True, help="sequence lengths, e.g. 256,512,1024,2048")
    p.add_argument("--variant", default="all", help="vanilla|chunk4|aaq|all")
    p.add_argument("--model-weight-bytes", type=int, default=cost.DEFAULT_MODEL_WEIGHT_BYTES)
    p.add_argument("--schemes")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("trace", help="export the dataflow graph and trace as JSON")
    p.add_argument("--ns", type=int, required=True)
    p.add_argument("--variant", choices=("vanilla", "chunk4", "aaq"))
    p.add_argument("--schemes")
    p.add_argument("--out")
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ContractViolation as e:
        print(f"invalid request: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
