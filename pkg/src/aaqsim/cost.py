"""Closed-form byte and operation accounting across sequence lengths.

Independent of the cycle simulator: footprint is cumulative main-memory
read+write traffic over the trace, peak is the maximum simultaneously-live
byte set, and compute is converted to equivalent 8-bit integer operations
(multiplies scale with the product of the operand widths, additions are
counted at the 32-bit accumulator width, deferred scaling is charged once
per dot product).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np

from .quant import SchemeTable
from .tensors import ContractViolation
from .workload import (
    TraceEntry,
    WorkloadConfig,
    build_folding_block,
    emit_trace,
    live_peak_bytes,
    make_variant_config,
)

# total 16-bit parameter footprint of the full prediction model (embedding
# language model plus folding trunk); the trace itself only ever touches the
# trunk weights, so this enters reports as a constant
DEFAULT_MODEL_WEIGHT_BYTES = 6_000_000_000

ADD_WEIGHT = 32 / 8   # accumulator adds run at 32 bits in both variants
DEQUANT_WEIGHT = 4.0  # one 16x16 scale multiply per dot product

VARIANTS = ("vanilla", "chunk4", "aaq")


@dataclass
class CostReport:
    ns: int
    variant: str
    weight_bytes: int
    peak_activation_bytes: int
    total_footprint_bytes: int
    int8_equivalent_ops: float

    def __post_init__(self):
        if min(self.weight_bytes, self.peak_activation_bytes,
               self.total_footprint_bytes, self.int8_equivalent_ops) < 0:
            raise ContractViolation("cost metrics must be non-negative")
        if self.peak_activation_bytes > self.total_footprint_bytes:
            raise ContractViolation("peak cannot exceed cumulative footprint")


def footprint(trace: list[TraceEntry], schemes: SchemeTable | None = None) -> int:
    """Cumulative main-memory read+write bytes over one folding block."""
    del schemes  # byte sizes are fixed at graph build time
    return sum(t.bytes_read + t.bytes_written for t in trace)


def peak_memory(ns: int, variant: str, cfg: WorkloadConfig | None = None,
                schemes: SchemeTable | None = None) -> int:
    """Live-set maximum over the trace for one of the standard variants."""
    vcfg = make_variant_config(variant, cfg)
    graph = build_folding_block(ns, vcfg, schemes)
    return live_peak_bytes(graph)


def _mult_weight(bits_a: int, bits_b: int) -> float:
    return (bits_a / 8.0) * (bits_b / 8.0)


def int8_equivalent_ops(trace: list[TraceEntry], schemes: SchemeTable | None = None) -> float:
    """Equivalent 8-bit integer operations for one folding block."""
    del schemes
    total = 0.0
    for entry in trace:
        for batch in entry.rmpu:
            length = batch.contraction
            a_bits, b_bits = batch.op_bits
            if batch.scheme is None:
                mults = length * _mult_weight(a_bits, b_bits)
                dequant = 0.0
            else:
                k = min(batch.scheme.outlier_count, length)
                mults = ((length - k) * _mult_weight(batch.scheme.inlier_bits, b_bits)
                         + k * _mult_weight(16, b_bits))
                dequant = DEQUANT_WEIGHT
            adds = (length - 1) * ADD_WEIGHT if length > 1 else 0.0
            total += batch.jobs * (mults + adds + dequant)
        for kind, n, count, k in entry.vvpu_ops:
            total += count * _vector_int8_ops(kind, n, k)
    return total


def _vector_int8_ops(kind: str, n: int, k: int) -> float:
    """16-bit vector work converted to int8-equivalents (4.0 per multiply or
    lookup, 2.0 per add/compare)."""
    if kind == "residual":
        return n * 2.0
    if kind == "dequant":
        return n * 4.0
    if kind == "gate":
        return n * (4.0 + 4.0)          # sigmoid lookup + multiply
    if kind == "bias":
        return n * 2.0
    if kind == "layernorm":
        return n * (2.0 + 2.0 + 4.0 + 4.0)   # two reduce adds, square, normalize
    if kind in ("softmax", "softmax_pipelined"):
        return n * (2.0 + 4.0 + 2.0 + 4.0)   # max cmp, exp, sum add, divide
    if kind in ("topk", "quantize"):
        if k > 0:
            log_n = max(1, math.ceil(math.log2(n))) if n > 1 else 0
            compares = (log_n * (log_n + 1) // 2) * (n // 2)
        else:
            compares = n - 1                  # plain max search
        if kind == "topk":
            return compares * 2.0
        return compares * 2.0 + n * (4.0 + 2.0)  # plus scale multiply and round
    raise ContractViolation(f"unknown vector op kind {kind!r}")


def fit_scaling_exponent(ns_values, metric_values) -> float:
    """Least-squares slope of log(metric) against log(ns)."""
    ns_arr = np.asarray(ns_values, dtype=np.float64)
    m_arr = np.asarray(metric_values, dtype=np.float64)
    if ns_arr.size < 4:
        raise ContractViolation("need at least 4 points to fit an exponent")
    if np.any(ns_arr <= 0) or np.any(m_arr < 0):
        raise ContractViolation("scaling fit needs positive ns and non-negative metrics")
    if np.all(m_arr == m_arr[0]):
        return 0.0
    if np.any(m_arr <= 0):
        raise ContractViolation("degenerate metric series")
    slope, _ = np.polyfit(np.log(ns_arr), np.log(m_arr), 1)
    return float(slope)


def cost_report(ns: int, variant: str, cfg: WorkloadConfig | None = None,
                schemes: SchemeTable | None = None,
                model_weight_bytes: int = DEFAULT_MODEL_WEIGHT_BYTES) -> CostReport:
    """Full accounting for one variant at one sequence length.

    Footprint and ops accumulate over all folding blocks; peak is a live-set
    property and does not scale with block count.
    """
    vcfg = make_variant_config(variant, cfg)
    graph = build_folding_block(ns, vcfg, schemes)
    trace = emit_trace(graph)
    return CostReport(
        ns=ns,
        variant=variant,
        weight_bytes=model_weight_bytes,
        peak_activation_bytes=live_peak_bytes(graph),
        total_footprint_bytes=footprint(trace) * vcfg.num_blocks,
        int8_equivalent_ops=int8_equivalent_ops(trace) * vcfg.num_blocks,
    )


def footprint_reduction(ns: int, cfg: WorkloadConfig | None = None,
                        schemes: SchemeTable | None = None) -> float:
    """Fractional traffic reduction of quantized edges vs 16-bit edges.

    Both sides run the streaming-attention dataflow so the comparison
    isolates the quantization effect (score-tensor traffic would otherwise
    dominate the unquantized side).
    """
    base = cfg or WorkloadConfig()
    aaq = replace(base, quantized=True, streaming_mha=True, chunk_factor=1)
    ref = replace(base, quantized=False, streaming_mha=True, chunk_factor=1)
    f_aaq = footprint(emit_trace(build_folding_block(ns, aaq, schemes)))
    f_ref = footprint(emit_trace(build_folding_block(ns, ref, schemes)))
    return 1.0 - f_aaq / f_ref


def compute_reduction(ns: int, cfg: WorkloadConfig | None = None,
                      schemes: SchemeTable | None = None) -> float:
    """Fractional int8-equivalent op reduction of the quantized dataflow."""
    aaq = int8_equivalent_ops(emit_trace(build_folding_block(
        ns, make_variant_config("aaq", cfg), schemes)))
    ref = int8_equivalent_ops(emit_trace(build_folding_block(
        ns, make_variant_config("vanilla", cfg), schemes)))
    return 1.0 - aaq / ref


def peak_ratio(ns: int, cfg: WorkloadConfig | None = None,
               schemes: SchemeTable | None = None) -> float:
    """Peak-memory ratio of the unquantized materializing baseline over the
    quantized streaming dataflow."""
    return peak_memory(ns, "vanilla", cfg, schemes) / peak_memory(ns, "aaq", cfg, schemes)


def cost_table(ns_values, variants=VARIANTS, cfg: WorkloadConfig | None = None,
               schemes: SchemeTable | None = None,
               model_weight_bytes: int = DEFAULT_MODEL_WEIGHT_BYTES) -> list[dict]:
    rows = []
    for ns in ns_values:
        for variant in variants:
            rep = cost_report(ns, variant, cfg, schemes, model_weight_bytes)
            rows.append({
                "ns": rep.ns,
                "variant": rep.variant,
                "weight_bytes": rep.weight_bytes,
                "peak_bytes": rep.peak_activation_bytes,
                "footprint_bytes": rep.total_footprint_bytes,
                "int8_ops": f"{rep.int8_equivalent_ops:.6g}",
            })
    return rows


def cost_table_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(
        buf, fieldnames=["ns", "variant", "weight_bytes", "peak_bytes",
                         "footprint_bytes", "int8_ops"],
        lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()
