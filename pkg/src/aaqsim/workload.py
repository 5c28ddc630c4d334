"""Shape-annotated dataflow trace of the pair-representation folding block.

The graph is a fixed template instantiated for a sequence length Ns: two
triangular multiplications, two triangular attentions, and the pair
transition, plus opaque sequence-representation byte traffic.  Every
activation edge is classified into quantization group A/B/C (or marked
unquantized) by structural rules, sized either at 16 bits or via the exact
token-block encoding arithmetic, and emitted as per-node byte/compute
entries for the simulator and the cost model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from enum import Enum

from . import blocks
from .quant import ActivationGroup, QuantScheme, SchemeTable
from .tensors import ContractViolation


class OpKind(Enum):
    LINEAR = "linear"
    LAYERNORM = "layernorm"
    SOFTMAX = "softmax"
    EINSUM = "einsum"
    GATE = "gate"
    RESIDUAL_ADD = "residual_add"
    QUANTIZE = "quantize"
    DEQUANTIZE = "dequantize"
    MHA_QK = "mha_qk"
    MHA_AV = "mha_av"
    MHA_STREAM = "mha_stream"  # fused QK + softmax + AV, scores stay on chip
    BIAS = "bias"
    MEM_IO = "mem_io"


RMPU_KINDS = {OpKind.LINEAR, OpKind.EINSUM, OpKind.MHA_QK, OpKind.MHA_AV, OpKind.MHA_STREAM}


class ClassificationError(ValueError):
    pass


@dataclass(frozen=True)
class EdgeContext:
    """Structural description of one produced activation edge."""

    producer: str                 # OpKind value or "input"
    consumers: tuple[str, ...]
    residual_carried: bool = False
    intra_attention: bool = False


def classify_activation(ctx: EdgeContext) -> ActivationGroup:
    """Map an edge to its quantization group by structural rules.

    Residual-carried edges feeding normalization are group A; normalization
    outputs feeding linear layers are group B; score-class values consumed
    inside the attention pipeline are never quantized; everything else that
    reaches memory is group C.
    """
    if not ctx.consumers:
        raise ClassificationError(f"edge produced by {ctx.producer} has no consumers")
    known = {k.value for k in OpKind} | {"input", "output"}
    if ctx.producer not in known or not set(ctx.consumers) <= known:
        raise ClassificationError(f"unknown node kinds in descriptor: {ctx}")
    if ctx.intra_attention:
        return ActivationGroup.UNQUANTIZED
    if ctx.residual_carried and OpKind.LAYERNORM.value in ctx.consumers:
        return ActivationGroup.A
    if ctx.producer == OpKind.LAYERNORM.value and OpKind.LINEAR.value in ctx.consumers:
        return ActivationGroup.B
    return ActivationGroup.C


@dataclass
class WorkloadConfig:
    """Folding-block template parameters and byte-accounting knobs."""

    hz: int = 128
    num_heads: int = 4
    head_dim: int = 32
    trimul_hidden: int = 128
    transition_mult: int = 4
    hm: int = 1024                  # sequence-representation hidden size (bytes-only traffic)
    num_blocks: int = 48
    quantized: bool = True
    streaming_mha: bool = True
    chunk_factor: int = 1           # 4 reproduces the channel-chunked baseline
    fused_dequant: bool = True      # charge dequantization inside consumers
    tokens_per_block: int = 32
    txn_bytes: int = 64
    contraction_tile: int = 256     # resident rows for contraction re-read accounting
    weight_frac_bits: int = 8

    def __post_init__(self):
        if self.num_heads * self.head_dim != self.hz:
            raise ContractViolation("num_heads * head_dim must equal hz")
        if self.chunk_factor < 1:
            raise ContractViolation("chunk_factor must be >= 1")

    def variant_name(self) -> str:
        if self.quantized and self.streaming_mha and self.chunk_factor == 1:
            return "aaq"
        if not self.quantized and not self.streaming_mha:
            return "chunk4" if self.chunk_factor > 1 else "vanilla"
        parts = ["aaq" if self.quantized else "vanilla"]
        if self.chunk_factor > 1:
            parts.append(f"chunk{self.chunk_factor}")
        if self.quantized and not self.streaming_mha:
            parts.append("materialized")
        if not self.quantized and self.streaming_mha:
            parts.append("streaming")
        return "-".join(parts)


def make_variant_config(variant: str, base: WorkloadConfig | None = None) -> WorkloadConfig:
    """Standard comparison variants: vanilla, chunk4, aaq."""
    import dataclasses

    cfg = base or WorkloadConfig()
    if variant == "vanilla":
        return dataclasses.replace(cfg, quantized=False, streaming_mha=False, chunk_factor=1)
    if variant == "chunk4":
        return dataclasses.replace(cfg, quantized=False, streaming_mha=False, chunk_factor=4)
    if variant == "aaq":
        return dataclasses.replace(cfg, quantized=True, streaming_mha=True, chunk_factor=1)
    raise ContractViolation(f"unknown variant {variant!r}")


@dataclass(frozen=True)
class RmpuBatch:
    """One homogeneous batch of dot-product jobs on the matrix unit."""

    jobs: int
    contraction: int                 # dot-product length
    op_bits: tuple[int, int]         # storage precisions of the two operands
    scheme: QuantScheme | None       # scheme of the quantized operand, if any

    @property
    def units_per_job(self) -> int:
        return units_for_job(self.scheme, self.op_bits, self.contraction)

    @property
    def units(self) -> int:
        return self.jobs * self.units_per_job


def units_for_job(scheme: QuantScheme | None, op_bits: tuple[int, int], length: int) -> int:
    """4-bit computation units for one dot product of the given length.

    A quantized token splits into inliers at its storage precision plus
    16-bit outliers; the second operand contributes its own bit width.
    """
    a_bits, b_bits = op_bits
    if scheme is None:
        return (a_bits // 4) * (b_bits // 4) * length
    k = min(scheme.outlier_count, length)
    inl = (scheme.inlier_bits // 4) * (b_bits // 4) * (length - k)
    return inl + (16 // 4) * (b_bits // 4) * k


@dataclass
class Edge:
    """One activation edge: a token stream with a group tag and a byte size."""

    eid: int
    name: str
    tokens: int
    channels: int
    group: ActivationGroup
    scheme: QuantScheme | None      # None for 16-bit edges and on-chip edges
    in_memory: bool
    shape: tuple                    # logical shape, e.g. (ns, ns, hz) or (heads, ns, ns, ns)
    bytes: int                      # on-wire size incl. block headers/padding (0 if on chip)
    payload_bytes: int              # token payload only, no headers/padding
    chunked: bool = False
    producer: int = -1
    consumers: list[int] = field(default_factory=list)


@dataclass
class OpNode:
    nid: int
    kind: OpKind
    name: str
    in_edges: list[int]
    out_edges: list[int]
    in_shapes: list[tuple]
    out_shape: tuple
    group_tag: ActivationGroup
    weight_bytes: int = 0
    macs: int = 0
    rmpu: list[RmpuBatch] = field(default_factory=list)
    vvpu_ops: list[tuple] = field(default_factory=list)  # (op, vector_len, count, k)
    read_passes: dict[int, int] = field(default_factory=dict)  # edge id -> re-read factor
    chunked: bool = False


@dataclass
class DataflowGraph:
    ns: int
    cfg: WorkloadConfig
    schemes: SchemeTable
    nodes: list[OpNode] = field(default_factory=list)
    edges: list[Edge] = field(default_factory=list)

    @property
    def tokens(self) -> int:
        return self.ns * self.ns


@dataclass
class TraceEntry:
    """Per-node byte and compute requirements consumed by the simulator."""

    node_id: int
    name: str
    kind: str
    stage: str                      # RMPU | VVPU | MEM
    bytes_read: int
    bytes_written: int
    tokens_out: int
    max_in_token_bytes: int         # widest input token, for scratchpad tiling
    units_required: int             # total 4-bit computation units over all jobs
    rmpu: list[RmpuBatch]
    vvpu_ops: list[tuple]
    chunked: bool
    bytes_read_unamplified: int = 0


def _edge_token_bytes(e: Edge) -> int:
    if not e.in_memory:
        return 0
    if e.scheme is None:
        return e.channels * 2
    return blocks.token_encoded_bytes(_effective_scheme(e.scheme, e.channels), e.channels)


def _effective_scheme(scheme: QuantScheme, channels: int) -> QuantScheme:
    # outlier budget cannot exceed half the channels of a narrow edge
    k = min(scheme.outlier_count, channels // 2)
    return scheme if k == scheme.outlier_count else QuantScheme(scheme.inlier_bits, k)


class _Builder:
    def __init__(self, ns: int, cfg: WorkloadConfig, schemes: SchemeTable):
        self.g = DataflowGraph(ns=ns, cfg=cfg, schemes=schemes)

    def _edge_bytes(self, tokens: int, channels: int, scheme: QuantScheme | None,
                    in_memory: bool) -> tuple[int, int]:
        if not in_memory:
            return 0, 0
        cfg = self.g.cfg
        if scheme is None:
            payload = tokens * channels * 2  # plain 16-bit accounting
            return payload, payload
        eff = _effective_scheme(scheme, channels)
        total = blocks.stream_bytes(tokens, eff, channels, cfg.txn_bytes, cfg.tokens_per_block)
        return total, tokens * blocks.token_encoded_bytes(eff, channels)

    def add_edge(self, name: str, shape: tuple, group: ActivationGroup,
                 in_memory: bool = True, channels: int | None = None,
                 chunked: bool = False) -> int:
        cfg = self.g.cfg
        channels = channels if channels is not None else shape[-1]
        tokens = 1
        for d in shape[:-1]:
            tokens *= d
        scheme = None
        if cfg.quantized and in_memory and group != ActivationGroup.UNQUANTIZED:
            scheme = _effective_scheme(self.g.schemes[group], channels)
        total, payload = self._edge_bytes(tokens, channels, scheme, in_memory)
        e = Edge(
            eid=len(self.g.edges), name=name, tokens=tokens, channels=channels,
            group=group, scheme=scheme, in_memory=in_memory, shape=shape,
            bytes=total, payload_bytes=payload, chunked=chunked,
        )
        self.g.edges.append(e)
        return e.eid

    def add_node(self, kind: OpKind, name: str, in_edges: list[int], out_edges: list[int],
                 group_tag: ActivationGroup, **kw) -> OpNode:
        edges = self.g.edges
        node = OpNode(
            nid=len(self.g.nodes), kind=kind, name=name,
            in_edges=list(in_edges), out_edges=list(out_edges),
            in_shapes=[edges[e].shape for e in in_edges],
            out_shape=edges[out_edges[0]].shape if out_edges else (),
            group_tag=group_tag, **kw,
        )
        for e in in_edges:
            edges[e].consumers.append(node.nid)
        for e in out_edges:
            edges[e].producer = node.nid
        self.g.nodes.append(node)
        return node

    def quantize_to_memory(self, local_edge: int, name: str, group: ActivationGroup,
                           shape: tuple, channels: int | None = None) -> int:
        """Emit the runtime-quantization node that moves a locally produced
        activation out to memory; in unquantized variants the local edge is
        simply retagged as a 16-bit memory edge."""
        cfg = self.g.cfg
        e = self.g.edges[local_edge]
        if not cfg.quantized:
            e.in_memory = True
            e.group = group
            e.name = name
            e.bytes, e.payload_bytes = self._edge_bytes(e.tokens, e.channels, None, True)
            return local_edge
        channels = channels if channels is not None else shape[-1]
        out = self.add_edge(name, shape, group, in_memory=True, channels=channels)
        scheme = self.g.edges[out].scheme
        eff = _effective_scheme(scheme, channels)
        self.add_node(
            OpKind.QUANTIZE, f"quantize[{name}]", [local_edge], [out], group,
            vvpu_ops=[("quantize", channels, e.tokens, eff.outlier_count)],
        )
        return out


def _contraction_passes(ns: int, cfg: WorkloadConfig) -> int:
    """How many times the streamed operand of a length-Ns contraction is
    re-read from memory, given the configured resident-row window."""
    return max(1, -(-ns // cfg.contraction_tile))


def _linear(b: _Builder, name: str, src: int, out_features: int,
            out_name: str, to_memory: bool = True, gate_src: int | None = None,
            chunked: bool = False) -> int:
    """Linear layer, optionally gated by a sigmoid path from gate_src.

    The raw output stays on chip; `quantize_to_memory` decides how it reaches
    memory.  Returns the memory edge id (or the local edge if to_memory is
    False).
    """
    g = b.g
    e_in = g.edges[src]
    tokens, c_in = e_in.tokens, e_in.channels
    shape = e_in.shape[:-1] + (out_features,)
    local = b.add_edge(f"{out_name}.local", shape, ActivationGroup.UNQUANTIZED, in_memory=False)
    in_scheme = e_in.scheme
    act_bits = in_scheme.inlier_bits if in_scheme else 16
    batches = [RmpuBatch(tokens * out_features, c_in, (act_bits, 16), in_scheme)]
    weight_bytes = c_in * out_features * 2
    macs = tokens * c_in * out_features
    vvpu: list[tuple] = []
    in_edges = [src]
    if gate_src is not None:
        ge = g.edges[gate_src]
        g_bits = ge.scheme.inlier_bits if ge.scheme else 16
        batches.append(RmpuBatch(tokens * out_features, ge.channels, (g_bits, 16), ge.scheme))
        weight_bytes += ge.channels * out_features * 2
        macs += tokens * ge.channels * out_features
        vvpu.append(("gate", out_features, tokens, 0))
        in_edges.append(gate_src)
    node = b.add_node(
        OpKind.LINEAR, name, in_edges, [local], ActivationGroup.C,
        weight_bytes=weight_bytes, macs=macs, rmpu=batches, vvpu_ops=vvpu,
        chunked=chunked,
    )
    del node
    if not to_memory:
        return local
    return b.quantize_to_memory(local, out_name, ActivationGroup.C, shape)


def _layernorm(b: _Builder, name: str, src: int, out_name: str) -> int:
    g = b.g
    e_in = g.edges[src]
    local = b.add_edge(f"{out_name}.local", e_in.shape, ActivationGroup.UNQUANTIZED, in_memory=False)
    ops = [("layernorm", e_in.channels, e_in.tokens, 0)]
    if e_in.scheme is not None and g.cfg.fused_dequant:
        ops.insert(0, ("dequant", e_in.channels, e_in.tokens, 0))
    b.add_node(OpKind.LAYERNORM, name, [src], [local], ActivationGroup.B, vvpu_ops=ops)
    return b.quantize_to_memory(local, out_name, ActivationGroup.B, e_in.shape)


def _residual(b: _Builder, name: str, upd: int, residual_in: int, out_name: str) -> int:
    g = b.g
    e = g.edges[residual_in]
    local = b.add_edge(f"{out_name}.local", e.shape, ActivationGroup.UNQUANTIZED, in_memory=False)
    ops = [("residual", e.channels, e.tokens, 0)]
    n_quant = sum(1 for x in (upd, residual_in) if g.edges[x].scheme is not None)
    if n_quant and g.cfg.fused_dequant:
        ops.insert(0, ("dequant", e.channels, e.tokens * n_quant, 0))
    b.add_node(OpKind.RESIDUAL_ADD, name, [upd, residual_in], [local],
               ActivationGroup.A, vvpu_ops=ops)
    return b.quantize_to_memory(local, out_name, ActivationGroup.A, e.shape)


def _dequantize(b: _Builder, src: int, out_name: str) -> int:
    """Standalone dequantization node (only emitted with fused_dequant off)."""
    g = b.g
    e = g.edges[src]
    local = b.add_edge(f"{out_name}.local", e.shape, ActivationGroup.UNQUANTIZED, in_memory=False)
    b.add_node(OpKind.DEQUANTIZE, f"dequantize[{out_name}]", [src], [local],
               ActivationGroup.UNQUANTIZED,
               vvpu_ops=[("dequant", e.channels, e.tokens, 0)])
    return local


def _vvpu_input(b: _Builder, src: int, out_name: str) -> int:
    """Route a memory edge into a vector-unit consumer, honoring fused_dequant."""
    e = b.g.edges[src]
    if e.scheme is not None and not b.g.cfg.fused_dequant:
        return _dequantize(b, src, out_name)
    return src


def _tri_multiplication(b: _Builder, pair_in: int, tag: str) -> int:
    g = b.g
    ns, cfg = g.ns, g.cfg
    hz, h = cfg.hz, cfg.trimul_hidden
    z = _layernorm(b, f"{tag}.norm_in", _vvpu_input(b, pair_in, f"{tag}.in"), f"{tag}.z")
    a = _linear(b, f"{tag}.proj_left", z, h, f"{tag}.a", gate_src=z)
    bb = _linear(b, f"{tag}.proj_right", z, h, f"{tag}.b", gate_src=z)
    t_local = b.add_edge(f"{tag}.t.local", (ns, ns, h), ActivationGroup.UNQUANTIZED, in_memory=False)
    sch = g.edges[a].scheme
    bits = sch.inlier_bits if sch else 16
    einsum = b.add_node(
        OpKind.EINSUM, f"{tag}.triangle_product", [a, bb], [t_local], ActivationGroup.C,
        macs=ns * ns * ns * h,
        rmpu=[RmpuBatch(ns * ns * h, ns, (bits, bits), sch)],
        chunked=cfg.chunk_factor > 1,
    )
    einsum.read_passes[bb] = _contraction_passes(ns, cfg)
    t = b.quantize_to_memory(t_local, f"{tag}.t", ActivationGroup.C, (ns, ns, h))
    tn = _layernorm(b, f"{tag}.norm_out", _vvpu_input(b, t, f"{tag}.t_in"), f"{tag}.tn")
    upd = _linear(b, f"{tag}.proj_out", tn, hz, f"{tag}.update", gate_src=z)
    return _residual(b, f"{tag}.residual", _vvpu_input(b, upd, f"{tag}.u_in"),
                     _vvpu_input(b, pair_in, f"{tag}.res_in"), f"{tag}.pair")


def _tri_attention(b: _Builder, pair_in: int, tag: str) -> int:
    g = b.g
    ns, cfg = g.ns, g.cfg
    hz, heads, d = cfg.hz, cfg.num_heads, cfg.head_dim
    z = _layernorm(b, f"{tag}.norm", _vvpu_input(b, pair_in, f"{tag}.in"), f"{tag}.z")
    q = _linear(b, f"{tag}.proj_q", z, hz, f"{tag}.q")
    k = _linear(b, f"{tag}.proj_k", z, hz, f"{tag}.k")
    v = _linear(b, f"{tag}.proj_v", z, hz, f"{tag}.v")
    bias = _linear(b, f"{tag}.proj_bias", z, heads, f"{tag}.bias")
    q_sch = g.edges[q].scheme
    act_bits = q_sch.inlier_bits if q_sch else 16
    v_sch = g.edges[v].scheme
    v_bits = v_sch.inlier_bits if v_sch else 16
    kv_passes = _contraction_passes(ns, cfg)
    score_shape = (heads, ns, ns, ns)
    qk_batch = RmpuBatch(heads * ns ** 3, d, (act_bits, act_bits), q_sch)
    av_batch = RmpuBatch(ns * ns * hz, ns, (16, v_bits), None)
    if cfg.streaming_mha:
        ctx_local = b.add_edge(f"{tag}.ctx.local", (ns, ns, hz), ActivationGroup.UNQUANTIZED,
                               in_memory=False)
        mha = b.add_node(
            OpKind.MHA_STREAM, f"{tag}.mha_stream", [q, k, v, bias], [ctx_local],
            ActivationGroup.C,
            macs=2 * heads * ns ** 3 * d,
            rmpu=[qk_batch, av_batch],
            # running max folds into the QK accumulation pipeline, so the
            # vector unit sees exp, sum-reduce and divide passes only
            vvpu_ops=[("softmax_pipelined", ns, heads * ns * ns, 0)],
        )
        mha.read_passes[k] = kv_passes
        mha.read_passes[v] = kv_passes
        mha.read_passes[bias] = kv_passes
        ctx = b.quantize_to_memory(ctx_local, f"{tag}.ctx", ActivationGroup.C, (ns, ns, hz))
    else:
        scores = b.add_edge(f"{tag}.scores", score_shape, ActivationGroup.UNQUANTIZED,
                            in_memory=True, channels=ns, chunked=cfg.chunk_factor > 1)
        qk = b.add_node(
            OpKind.MHA_QK, f"{tag}.mha_qk", [q, k, bias], [scores],
            ActivationGroup.UNQUANTIZED,
            macs=heads * ns ** 3 * d, rmpu=[qk_batch], chunked=cfg.chunk_factor > 1,
        )
        qk.read_passes[k] = kv_passes
        qk.read_passes[bias] = kv_passes
        probs = b.add_edge(f"{tag}.probs", score_shape, ActivationGroup.UNQUANTIZED,
                           in_memory=True, channels=ns, chunked=cfg.chunk_factor > 1)
        b.add_node(OpKind.SOFTMAX, f"{tag}.softmax", [scores], [probs],
                   ActivationGroup.UNQUANTIZED,
                   vvpu_ops=[("softmax", ns, heads * ns * ns, 0)],
                   chunked=cfg.chunk_factor > 1)
        ctx_local = b.add_edge(f"{tag}.ctx.local", (ns, ns, hz), ActivationGroup.UNQUANTIZED,
                               in_memory=False)
        av = b.add_node(
            OpKind.MHA_AV, f"{tag}.mha_av", [probs, v], [ctx_local], ActivationGroup.C,
            macs=heads * ns ** 3 * d, rmpu=[av_batch], chunked=cfg.chunk_factor > 1,
        )
        av.read_passes[v] = kv_passes
        ctx = b.quantize_to_memory(ctx_local, f"{tag}.ctx", ActivationGroup.C, (ns, ns, hz))
    upd = _linear(b, f"{tag}.proj_out", ctx, hz, f"{tag}.update", gate_src=z)
    return _residual(b, f"{tag}.residual", _vvpu_input(b, upd, f"{tag}.u_in"),
                     _vvpu_input(b, pair_in, f"{tag}.res_in"), f"{tag}.pair")


def _transition(b: _Builder, pair_in: int, tag: str = "transition") -> int:
    g = b.g
    cfg = g.cfg
    wide = cfg.transition_mult * cfg.hz
    chunked = cfg.chunk_factor > 1
    z = _layernorm(b, f"{tag}.norm", _vvpu_input(b, pair_in, f"{tag}.in"), f"{tag}.z")
    hdn = _linear(b, f"{tag}.expand", z, wide, f"{tag}.hidden", chunked=chunked)
    if chunked:
        g.edges[hdn].chunked = True
    upd = _linear(b, f"{tag}.project", hdn, cfg.hz, f"{tag}.update", chunked=chunked)
    return _residual(b, f"{tag}.residual", _vvpu_input(b, upd, f"{tag}.u_in"),
                     _vvpu_input(b, pair_in, f"{tag}.res_in"), f"{tag}.pair")


def build_folding_block(ns: int, cfg: WorkloadConfig | None = None,
                        schemes: SchemeTable | None = None) -> DataflowGraph:
    """Instantiate the folding-block template for one sequence length."""
    if ns < 1:
        raise ContractViolation("ns must be >= 1")
    cfg = cfg or WorkloadConfig()
    schemes = schemes or SchemeTable()
    b = _Builder(ns, cfg, schemes)
    g = b.g
    pair = b.add_edge("pair.in", (ns, ns, cfg.hz), ActivationGroup.A, in_memory=True)
    pair = _tri_multiplication(b, pair, "tri_mul_out")
    pair = _tri_multiplication(b, pair, "tri_mul_in")
    pair = _tri_attention(b, pair, "tri_attn_start")
    pair = _tri_attention(b, pair, "tri_attn_end")
    pair = _transition(b, pair)
    # sequence representation handled as opaque byte traffic only
    seq_in = b.add_edge("seq.in", (ns, cfg.hm), ActivationGroup.UNQUANTIZED, in_memory=True)
    seq_out = b.add_edge("seq.out", (ns, cfg.hm), ActivationGroup.UNQUANTIZED, in_memory=True)
    b.add_node(OpKind.MEM_IO, "seq_representation_io", [seq_in], [seq_out],
               ActivationGroup.UNQUANTIZED)
    g.edges[pair].consumers.append(-1)  # consumed by the next block
    g.edges[seq_out].consumers.append(-1)
    return g


def emit_trace(g: DataflowGraph, schemes: SchemeTable | None = None,
               fuse_quantize: bool = True) -> list[TraceEntry]:
    """Per-node byte and compute entries; deterministic for a given graph.

    Runtime quantization executes in the vector unit while results stream out
    of the producing op, so by default each quantize node is folded into its
    producer's pipeline stage (the graph keeps the node explicit).
    """
    del schemes  # edges were sized at build time; kept for interface symmetry
    chunk = g.cfg.chunk_factor
    entries: list[TraceEntry] = []
    by_node: dict[int, TraceEntry] = {}
    for n in g.nodes:
        raw_read = 0
        read = 0
        max_tok = 0
        for e in n.in_edges:
            edge = g.edges[e]
            passes = n.read_passes.get(e, 1)
            if n.chunked and edge.in_memory and not edge.chunked:
                passes *= chunk
            raw_read += edge.bytes
            read += edge.bytes * passes
            max_tok = max(max_tok, _edge_token_bytes(edge))
        written = sum(g.edges[e].bytes for e in n.out_edges)
        for e in n.out_edges:
            max_tok = max(max_tok, _edge_token_bytes(g.edges[e]))
        if n.kind in RMPU_KINDS:
            stage = "RMPU"
        elif n.kind == OpKind.MEM_IO:
            stage = "MEM"
        else:
            stage = "VVPU"
        out_edge = g.edges[n.out_edges[0]] if n.out_edges else None
        if fuse_quantize and n.kind == OpKind.QUANTIZE:
            producer_id = g.edges[n.in_edges[0]].producer
            host = by_node.get(producer_id)
            if host is not None:
                host.bytes_read += read
                host.bytes_written += written
                host.bytes_read_unamplified += raw_read
                host.vvpu_ops.extend(n.vvpu_ops)
                host.max_in_token_bytes = max(host.max_in_token_bytes, max_tok)
                if out_edge is not None:
                    host.tokens_out = max(host.tokens_out, out_edge.tokens)
                continue
        entry = TraceEntry(
            node_id=n.nid, name=n.name, kind=n.kind.value, stage=stage,
            bytes_read=read, bytes_written=written,
            tokens_out=out_edge.tokens if out_edge else 0,
            max_in_token_bytes=max_tok,
            units_required=sum(batch.units for batch in n.rmpu),
            rmpu=list(n.rmpu), vvpu_ops=list(n.vvpu_ops), chunked=n.chunked,
            bytes_read_unamplified=raw_read,
        )
        entries.append(entry)
        by_node[n.nid] = entry
    return entries


def live_peak_bytes(g: DataflowGraph) -> int:
    """Maximum simultaneously-live main-memory bytes over the trace.

    Edges are live from their producer until their last consumer; chunked
    edges count at 1/chunk_factor of their size.  Graph inputs are live from
    the start; edges consumed by the next block stay live to the end.
    """
    chunk = g.cfg.chunk_factor
    n_nodes = len(g.nodes)
    last_use: dict[int, int] = {}
    for e in g.edges:
        if not e.in_memory:
            continue
        uses = [c if c >= 0 else n_nodes for c in e.consumers]
        last_use[e.eid] = max(uses) if uses else e.producer

    def size(e: Edge) -> int:
        return e.bytes // chunk if e.chunked else e.bytes

    live = sum(size(e) for e in g.edges if e.in_memory and e.producer < 0)
    peak = live
    by_producer: dict[int, list[Edge]] = {}
    by_last: dict[int, list[Edge]] = {}
    for e in g.edges:
        if not e.in_memory:
            continue
        if e.producer >= 0:
            by_producer.setdefault(e.producer, []).append(e)
        by_last.setdefault(last_use[e.eid], []).append(e)
    for n in g.nodes:
        for e in by_producer.get(n.nid, []):
            live += size(e)
        peak = max(peak, live)
        for e in by_last.get(n.nid, []):
            live -= size(e)
    return peak


def pair_edge_bytes(g: DataflowGraph) -> int:
    """Total written bytes of residual-stream (group A) pair edges."""
    return sum(e.bytes for e in g.edges
               if e.in_memory and e.group == ActivationGroup.A)


def score_edge_bytes(g: DataflowGraph) -> int:
    """Total bytes of materialized attention score-class edges."""
    return sum(e.bytes for e in g.edges
               if e.in_memory and len(e.shape) == 4)


def graph_to_json(g: DataflowGraph, trace: list[TraceEntry] | None = None) -> str:
    doc = {
        "ns": g.ns,
        "variant": g.cfg.variant_name(),
        "config": asdict(g.cfg),
        "edges": [
            {
                "id": e.eid, "name": e.name, "shape": list(e.shape),
                "tokens": e.tokens, "channels": e.channels,
                "group": e.group.value,
                "scheme": e.scheme.label() if e.scheme else None,
                "in_memory": e.in_memory, "bytes": e.bytes,
                "payload_bytes": e.payload_bytes, "chunked": e.chunked,
                "producer": e.producer, "consumers": e.consumers,
            }
            for e in g.edges
        ],
        "nodes": [
            {
                "id": n.nid, "kind": n.kind.value, "name": n.name,
                "in_edges": n.in_edges, "out_edges": n.out_edges,
                "group": n.group_tag.value, "weight_bytes": n.weight_bytes,
                "macs": n.macs,
                "rmpu": [
                    {"jobs": batch.jobs, "contraction": batch.contraction,
                     "op_bits": list(batch.op_bits),
                     "scheme": batch.scheme.label() if batch.scheme else None}
                    for batch in n.rmpu
                ],
                "read_passes": {str(key): v for key, v in n.read_passes.items()},
                "chunked": n.chunked,
            }
            for n in g.nodes
        ],
    }
    if trace is not None:
        doc["trace"] = [
            {
                "node": t.node_id, "name": t.name, "stage": t.stage,
                "bytes_read": t.bytes_read, "bytes_written": t.bytes_written,
                "units_required": t.units_required,
            }
            for t in trace
        ]
    return json.dumps(doc, indent=1, sort_keys=True)
