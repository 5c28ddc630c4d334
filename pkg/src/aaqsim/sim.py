"""Deterministic cycle-level model of the token-parallel accelerator.

Resource hierarchy: a matrix engine is 4 clusters of 20 lanes; a lane is
8 processing elements (PEs); a PE is 16 minimal 4-bit computation units and
multiplies two 16-bit operands per cycle.  Dot-product jobs are allocated in
lanes via greedy first-fit packing inside clusters (no lane sharing across
clusters).  Vector units (VVPUs) run layernorm, softmax, bitonic top-k and
runtime quantization as SIMD passes.  Memory is an analytic served-bandwidth
model standing in for DRAM timing simulation.

Per node, the memory, matrix and vector stages overlap through tile double
buffering, so node latency is the longest stage plus a one-time pipeline
fill; total latency is the sum over nodes.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum

from .quant import QuantScheme, SchemeTable
from .tensors import ContractViolation
from .workload import (
    DataflowGraph,
    RmpuBatch,
    TraceEntry,
    WorkloadConfig,
    build_folding_block,
    emit_trace,
    live_peak_bytes,
)

PE_UNITS = 16          # 4-bit units per PE (one 16x16 multiply)
PES_PER_LANE = 8
LANES_PER_CLUSTER = 20
CLUSTERS_PER_ENGINE = 4
LANE_UNITS = PE_UNITS * PES_PER_LANE                    # 128
CLUSTER_PES = LANES_PER_CLUSTER * PES_PER_LANE          # 160
ENGINE_LANES = LANES_PER_CLUSTER * CLUSTERS_PER_ENGINE  # 80
ENGINE_UNITS = ENGINE_LANES * LANE_UNITS                # 10240
GIB = 1 << 30


class SimConfigError(ValueError):
    """A configuration cannot execute the given trace (names the node)."""


class AccumMode(Enum):
    """Accumulation-tree sizes the engine output stage supports."""

    TWO = 2            # 2-PE partial sums (head-dim-32 attention products)
    FOUR = 4           # 4-lane adder tree
    FIVE_PLUS_SCALE = 5  # 4 scaled lanes combined with an outlier lane
    EIGHT = 8
    SIXTEEN = 16
    EIGHTY = 80        # whole-engine accumulation, chains across engines


@dataclass(frozen=True)
class LaneAllocation:
    """Lane footprint and accumulation tree for one dot-product job."""

    job_units: int
    lanes: int
    mode: AccumMode

    @classmethod
    def for_units(cls, units: int) -> "LaneAllocation":
        lanes, mode = lanes_required(units)
        return cls(units, lanes, mode)


@dataclass
class SimConfig:
    """Accelerator parameters; defaults are the saturated design point."""

    num_rmpus: int = 32
    vvpus_per_rmpu: int = 4
    clock_ghz: float = 1.0
    mem_bandwidth_gbps: float = 2000.0   # GiB/s peak
    mem_efficiency: float = 0.10         # served fraction of peak (analytic DRAM stand-in)
    mem_txn_bytes: int = 64
    mem_fixed_overhead_cycles: int = 20  # per node-level burst
    simd_lanes_per_vvpu: int = 32
    token_scratchpad_bytes: int = 256 * 1024   # per engine, double-buffered tiles
    weight_scratchpad_bytes: int = 256 * 1024
    output_scratchpad_bytes: int = 256 * 1024
    crossbar_hop_cycles: int = 1
    scheme_a_serialized: bool = False    # issue 8-bit chunk planes over two passes

    def __post_init__(self):
        for name in ("num_rmpus", "vvpus_per_rmpu", "clock_ghz", "mem_bandwidth_gbps",
                     "mem_txn_bytes", "simd_lanes_per_vvpu", "token_scratchpad_bytes"):
            if getattr(self, name) <= 0:
                raise ContractViolation(f"SimConfig.{name} must be positive")
        if not 0.0 < self.mem_efficiency <= 1.0:
            raise ContractViolation("mem_efficiency must be in (0, 1]")

    @property
    def total_vvpus(self) -> int:
        return self.num_rmpus * self.vvpus_per_rmpu

    @property
    def bytes_per_cycle(self) -> float:
        return self.mem_bandwidth_gbps * GIB * self.mem_efficiency / (self.clock_ghz * 1e9)


# ---------------------------------------------------------------------------
# resource arithmetic

def units_required(scheme: QuantScheme | None, weight_bits: int = 16, hz: int = 128) -> int:
    """4-bit computation units for one token/weight-column dot product.

    (inlier_bits/4)*(weight_bits/4) units per inlier channel plus
    (16/4)*(weight_bits/4) per outlier channel; an unquantized 16-bit token
    is the scheme-None case.
    """
    if scheme is None:
        return (16 // 4) * (weight_bits // 4) * hz
    k = min(scheme.outlier_count, hz)
    return ((scheme.inlier_bits // 4) * (weight_bits // 4) * (hz - k)
            + (16 // 4) * (weight_bits // 4) * k)


def lanes_required(units: int) -> tuple[int, AccumMode]:
    """Lane count and accumulation mode for a single dot-product job."""
    if units <= 0:
        raise ContractViolation("units must be positive")
    lanes = -(-units // LANE_UNITS)
    if units <= 2 * PE_UNITS:
        return lanes, AccumMode.TWO
    if lanes <= 4:
        return lanes, AccumMode.FOUR
    if lanes == 5:
        return lanes, AccumMode.FIVE_PLUS_SCALE
    if lanes <= 8:
        return lanes, AccumMode.EIGHT
    if lanes <= 16:
        return lanes, AccumMode.SIXTEEN
    # beyond one cluster's accumulation reach: whole-engine mode, possibly
    # chained across engines
    return lanes, AccumMode.EIGHTY


def job_pe_groups(batch: RmpuBatch, serialized_8bit: bool = False) -> tuple[int, ...]:
    """PE footprint of one job, as parallel accumulation groups.

    8-bit inlier tokens decompose into two 4-bit chunk planes: a low plane
    that also carries the outlier products (5 lanes at the reference shape)
    and a high plane (4 lanes).  With `serialized_8bit` the planes issue in
    separate passes but occupy the same footprint per pass, which packs
    identically under pipelining, so the footprint model is shared.
    """
    del serialized_8bit
    scheme, length, (_, b_bits) = batch.scheme, batch.contraction, batch.op_bits
    if scheme is not None and scheme.inlier_bits == 8:
        k = min(scheme.outlier_count, length)
        low = (b_bits // 4) * (length - k) + 4 * (b_bits // 4) * k
        high = (b_bits // 4) * (length - k)
        return (_units_to_pes(low), _units_to_pes(high))
    return (_units_to_pes(batch.units_per_job),)


def _units_to_pes(units: int) -> int:
    """Allocation footprint in PEs: whole lanes, except that 2-PE jobs may
    share a lane (the sub-lane attention accumulation path)."""
    if units <= 2 * PE_UNITS:
        return 2
    lanes = -(-units // LANE_UNITS)
    return lanes * PES_PER_LANE


def pack_jobs_per_cycle(groups: tuple[int, ...]) -> int:
    """Greedy first-fit packing of identical jobs into one engine-cycle.

    Each job is a tuple of PE groups; a group must fit inside a single
    cluster (no lane sharing across clusters), and all groups of a job issue
    in the same cycle.  Returns jobs per engine per cycle.
    """
    huge = [g for g in groups if g > CLUSTER_PES]
    if huge:
        # whole-engine (or multi-engine) job: no co-residency
        return 1
    clusters = [CLUSTER_PES] * CLUSTERS_PER_ENGINE
    packed = 0
    while True:
        trial = clusters[:]
        ok = True
        for g in groups:
            for i, cap in enumerate(trial):
                if cap >= g:
                    trial[i] = cap - g
                    break
            else:
                ok = False
                break
        if not ok:
            return packed
        clusters = trial
        packed += 1


def engine_cycles_for_batch(batch: RmpuBatch, cfg: SimConfig) -> int:
    """Engine-cycles one engine needs to retire a whole job batch."""
    if batch.jobs == 0:
        return 0
    groups = job_pe_groups(batch, cfg.scheme_a_serialized)
    total_pes = sum(groups)
    if total_pes > CLUSTERS_PER_ENGINE * CLUSTER_PES:
        # job larger than one engine: chained EIGHTY-mode accumulation
        engines_per_job = -(-total_pes // (CLUSTERS_PER_ENGINE * CLUSTER_PES))
        return batch.jobs * engines_per_job
    per_cycle = pack_jobs_per_cycle(groups)
    return -(-batch.jobs // per_cycle)


def rmpu_cycles(entry: TraceEntry, cfg: SimConfig) -> int:
    """Matrix-unit cycles for a trace node across all engines."""
    engine_cycles = sum(engine_cycles_for_batch(batch, cfg) for batch in entry.rmpu)
    return -(-engine_cycles // cfg.num_rmpus) if engine_cycles else 0


# ---------------------------------------------------------------------------
# vector unit

def _pass_cycles(n: int, s: int) -> int:
    return -(-n // s)


def _reduce_cycles(n: int, s: int) -> int:
    # tree reduction: log2(n) stages, stage i compares n/2^i pairs SIMD-wide
    cycles = 0
    while n > 1:
        half = -(-n // 2)
        cycles += _pass_cycles(half, s)
        n = half
    return cycles


def _bitonic_topk_cycles(n: int, s: int) -> int:
    # full bitonic sorting network with index tracking: sum_{i=1..log2 n} i
    # compare stages of n/2 SIMD comparators, plus one index-emission pass
    stages = 0
    log_n = max(1, math.ceil(math.log2(n))) if n > 1 else 0
    for i in range(1, log_n + 1):
        stages += i
    return stages * _pass_cycles(max(n // 2, 1), s) + _pass_cycles(n, s)


def vvpu_cycles(kind: str, n: int, cfg: SimConfig, k: int = 0) -> int:
    """Cycles one vector unit spends on a single length-n operation."""
    s = cfg.simd_lanes_per_vvpu
    p = _pass_cycles(n, s)
    r = _reduce_cycles(n, s)
    if kind == "residual":
        return p
    if kind == "dequant":
        return p
    if kind == "gate":
        return 2 * p                     # sigmoid lookup + multiply
    if kind == "bias":
        return p
    if kind == "layernorm":
        return 2 * r + 4 * p             # mean, variance, center/square/normalize/affine
    if kind == "softmax":
        return 2 * r + 2 * p             # max-reduce, exp pass, sum-reduce, divide
    if kind == "softmax_pipelined":
        return r + 2 * p                 # max folded into upstream accumulation
    if kind == "topk":
        return _bitonic_topk_cycles(n, s)
    if kind == "quantize":
        search = _bitonic_topk_cycles(n, s) if k > 0 else _reduce_cycles(n, s)
        return search + 2 * p            # search, then scale and round/pack passes
    raise ContractViolation(f"unknown vector op kind {kind!r}")


def node_vvpu_work(entry: TraceEntry, cfg: SimConfig) -> int:
    """Total vector-unit cycles (single-VVPU equivalent) for a node."""
    return sum(count * vvpu_cycles(kind, n, cfg, k)
               for kind, n, count, k in entry.vvpu_ops)


# ---------------------------------------------------------------------------
# memory

def mem_cycles(nbytes: int, cfg: SimConfig) -> int:
    """Cycles to move nbytes through the analytic memory model.

    Transfers are transaction-aligned and served at
    peak_bandwidth * mem_efficiency, plus a fixed per-burst overhead; a burst
    is one node-level transfer.
    """
    if nbytes < 0:
        raise ContractViolation("negative byte count")
    if nbytes == 0:
        return 0
    aligned = -(-nbytes // cfg.mem_txn_bytes) * cfg.mem_txn_bytes
    cycles = math.ceil(aligned / cfg.bytes_per_cycle)
    return cycles + cfg.mem_fixed_overhead_cycles


# ---------------------------------------------------------------------------
# trace simulation

@dataclass
class StageLatency:
    node_id: int
    name: str
    mem_cycles: int
    rmpu_cycles: int
    vvpu_cycles: int
    fill_cycles: int
    total_cycles: int
    n_tiles: int


@dataclass
class SimReport:
    ns: int
    variant: str
    total_cycles: int            # whole model (num_blocks folding blocks)
    block_cycles: int            # one folding block
    num_blocks: int
    stages: list[StageLatency]
    rmpu_utilization_pct: float
    vvpu_utilization_pct: float
    achieved_gbps: float
    total_bytes: int             # whole model
    peak_main_memory_bytes: int
    peak_onchip_bytes: int
    tokens_per_engine_cycle: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        doc = dataclasses.asdict(self)
        return json.dumps(doc, indent=1, sort_keys=True)


def _tile_tokens(entry: TraceEntry, cfg: SimConfig) -> int:
    """Tokens per double-buffered tile in one engine's token scratchpad.

    Deliberately independent of the engine count so the pipeline-fill share
    of a node does not change as engines are added."""
    tok_bytes = max(entry.max_in_token_bytes, 1)
    if 2 * tok_bytes > cfg.token_scratchpad_bytes:
        raise SimConfigError(
            f"node {entry.name}: one double-buffered token ({tok_bytes} B) "
            f"exceeds the token scratchpad ({cfg.token_scratchpad_bytes} B)"
        )
    return cfg.token_scratchpad_bytes // (2 * tok_bytes)


def _node_tiles(entry: TraceEntry, cfg: SimConfig) -> int:
    if entry.tokens_out <= 0:
        return 1
    return max(1, -(-entry.tokens_out // _tile_tokens(entry, cfg)))


def simulate_trace(trace: list[TraceEntry], cfg: SimConfig,
                   graph: DataflowGraph | None = None) -> SimReport:
    """Latency-compose a trace: per node the longest of the memory, matrix
    and vector stages plus a one-tile pipeline fill, summed over nodes."""
    stages = []
    busy_units = 0
    vvpu_work_total = 0
    bytes_total = 0
    peak_onchip = 0
    for entry in trace:
        n_tiles = _node_tiles(entry, cfg)
        nbytes = entry.bytes_read + entry.bytes_written
        m = mem_cycles(nbytes, cfg)
        r = rmpu_cycles(entry, cfg)
        work = node_vvpu_work(entry, cfg)
        v = -(-work // cfg.total_vvpus) if work else 0
        hop = cfg.crossbar_hop_cycles if (r or work) else 0
        parts = sorted((m, r, v), reverse=True)
        fill = -(-(parts[1] + parts[2]) // n_tiles) + hop
        total = parts[0] + fill
        stages.append(StageLatency(entry.node_id, entry.name, m, r, v, fill, total, n_tiles))
        busy_units += entry.units_required
        vvpu_work_total += work
        bytes_total += nbytes
        tok_bytes = max(entry.max_in_token_bytes, 1)
        tile = min(entry.tokens_out or 1, _tile_tokens(entry, cfg))
        peak_onchip = max(peak_onchip, 2 * tok_bytes * tile * cfg.num_rmpus)
    block_cycles = sum(s.total_cycles for s in stages)
    num_blocks = graph.cfg.num_blocks if graph is not None else 1
    total_cycles = block_cycles * num_blocks
    avail_units = max(block_cycles, 1) * cfg.num_rmpus * ENGINE_UNITS
    avail_vvpu = max(block_cycles, 1) * cfg.total_vvpus
    seconds = total_cycles / (cfg.clock_ghz * 1e9) if total_cycles else 0.0
    report = SimReport(
        ns=graph.ns if graph is not None else 0,
        variant=graph.cfg.variant_name() if graph is not None else "",
        total_cycles=total_cycles,
        block_cycles=block_cycles,
        num_blocks=num_blocks,
        stages=stages,
        rmpu_utilization_pct=100.0 * busy_units / avail_units,
        vvpu_utilization_pct=100.0 * vvpu_work_total / avail_vvpu,
        achieved_gbps=(bytes_total * num_blocks / GIB) / seconds if seconds else 0.0,
        total_bytes=bytes_total * num_blocks,
        peak_main_memory_bytes=live_peak_bytes(graph) if graph is not None else 0,
        peak_onchip_bytes=peak_onchip,
        tokens_per_engine_cycle=_throughput_checks(cfg),
    )
    return report


def _throughput_checks(cfg: SimConfig) -> dict[str, float]:
    """Measured token parallelism per engine-cycle for the canonical schemes."""
    out = {}
    for label, scheme in (("C", QuantScheme(4, 0)), ("B", QuantScheme(4, 4)),
                          ("A", QuantScheme(8, 4))):
        batch = RmpuBatch(1, 128, (scheme.inlier_bits, 16), scheme)
        out[label] = float(pack_jobs_per_cycle(job_pe_groups(batch, cfg.scheme_a_serialized)))
    out["unquantized"] = float(pack_jobs_per_cycle(
        job_pe_groups(RmpuBatch(1, 128, (16, 16), None), False)))
    return out


def simulate(ns: int, sim_cfg: SimConfig | None = None,
             wl_cfg: WorkloadConfig | None = None,
             schemes: SchemeTable | None = None) -> SimReport:
    """Build the folding-block trace for ns and simulate it."""
    sim_cfg = sim_cfg or SimConfig()
    wl_cfg = wl_cfg or WorkloadConfig()
    graph = build_folding_block(ns, wl_cfg, schemes)
    trace = emit_trace(graph)
    return simulate_trace(trace, sim_cfg, graph)


def sweep(base: SimConfig, grid: dict[str, list], ns_values: list[int],
          wl_cfg: WorkloadConfig | None = None,
          schemes: SchemeTable | None = None,
          jobs: int = 1) -> list[dict]:
    """One simulation per grid point and sequence length.

    Grid points are independent; with jobs > 1 they run on a thread pool.
    Rows always come back in grid order regardless of worker count.
    """
    if not grid and not ns_values:
        raise ContractViolation("empty sweep")
    wl_cfg = wl_cfg or WorkloadConfig()
    names = sorted(grid)

    def points(idx: int, current: dict):
        if idx == len(names):
            yield dict(current)
            return
        for value in grid[names[idx]]:
            current[names[idx]] = value
            yield from points(idx + 1, current)
            del current[names[idx]]

    tasks = []
    for ns in ns_values:
        graph = build_folding_block(ns, wl_cfg, schemes)
        trace = emit_trace(graph)
        for point in points(0, {}):
            tasks.append((ns, point, trace, graph))

    def run(task):
        ns, point, trace, graph = task
        rep = simulate_trace(trace, dataclasses.replace(base, **point), graph)
        return {"ns": ns, **point,
                "total_cycles": rep.total_cycles,
                "block_cycles": rep.block_cycles,
                "rmpu_utilization_pct": round(rep.rmpu_utilization_pct, 4),
                "vvpu_utilization_pct": round(rep.vvpu_utilization_pct, 4),
                "achieved_gbps": round(rep.achieved_gbps, 4),
                "peak_main_memory_bytes": rep.peak_main_memory_bytes}

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(run, tasks))
    return [run(t) for t in tasks]


def sweep_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()
