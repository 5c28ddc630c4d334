"""Double-precision functional reference for the pair-representation operators.

These functions are the numerical ground truth the quantizer and the
accelerator model are validated against: triangular multiplication and
triangular attention at the dataflow-box granularity, the pair transition
MLP, and a streaming (tiled, online-normalizer) attention variant that never
materializes the full score tensor.  Weights are toy-scale and randomly
seeded; no trained model is involved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .quant import ActivationGroup, SchemeTable, quantize_roundtrip
from .tensors import ActivationTensor, ContractViolation

LAYERNORM_EPS = 1e-5


@dataclass(frozen=True)
class AttentionParams:
    num_heads: int = 4
    head_dim: int = 32
    hz: int = 128

    def __post_init__(self):
        if self.num_heads * self.head_dim != self.hz:
            raise ContractViolation(
                f"num_heads * head_dim must equal hz: {self.num_heads}*{self.head_dim} != {self.hz}"
            )


def matmul_ref(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[0]:
        raise ContractViolation(f"inner dims mismatch: {a.shape} @ {b.shape}")
    return a @ b


def quantized_dot(q, w, scheme) -> float:
    """Dot product with deferred scaling.

    The integer inlier dot product is accumulated first and scaled once by the
    stored binary16 sigma; outlier contributions are added at 16-bit fixed
    point.  Matches dot(dequantize(q), w) up to float64 associativity.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.size != q.hz:
        raise ContractViolation(f"weight column length {w.size} != token width {q.hz}")
    if q.outlier_indices.size != scheme.outlier_count:
        raise ContractViolation("token does not match scheme")
    inlier = float(q.inlier_codes.astype(np.float64) @ w[q.inlier_positions()])
    outlier = float(q.outlier_values() @ w[q.outlier_indices.astype(np.int64)])
    return float(q.scale) * inlier + outlier


def layernorm_ref(t, gamma, beta) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    mean = t.mean(axis=-1, keepdims=True)
    var = t.var(axis=-1, keepdims=True)
    return (t - mean) / np.sqrt(var + LAYERNORM_EPS) * gamma + beta


def softmax_ref(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or not np.all(np.isfinite(v)):
        raise ContractViolation("softmax needs a nonempty finite input")
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# weight containers (toy-scale, seeded)

def _lin(rng, n_in, n_out, scale=None):
    scale = scale if scale is not None else 1.0 / np.sqrt(n_in)
    return rng.normal(0.0, scale, size=(n_in, n_out))


@dataclass
class TriMulWeights:
    ln_in_g: np.ndarray
    ln_in_b: np.ndarray
    w_left: np.ndarray
    w_left_gate: np.ndarray
    w_right: np.ndarray
    w_right_gate: np.ndarray
    ln_out_g: np.ndarray
    ln_out_b: np.ndarray
    w_out: np.ndarray
    w_out_gate: np.ndarray

    @classmethod
    def random(cls, rng, hz: int, hidden: int | None = None) -> "TriMulWeights":
        h = hidden or hz
        return cls(
            ln_in_g=rng.normal(1.0, 0.1, hz),
            ln_in_b=rng.normal(0.0, 0.1, hz),
            w_left=_lin(rng, hz, h),
            w_left_gate=_lin(rng, hz, h),
            w_right=_lin(rng, hz, h),
            w_right_gate=_lin(rng, hz, h),
            ln_out_g=rng.normal(1.0, 0.1, h),
            ln_out_b=rng.normal(0.0, 0.1, h),
            w_out=_lin(rng, h, hz),
            w_out_gate=_lin(rng, hz, hz),
        )


@dataclass
class TriAttnWeights:
    ln_g: np.ndarray
    ln_b: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_bias: np.ndarray  # hz -> num_heads
    w_gate: np.ndarray
    w_out: np.ndarray

    @classmethod
    def random(cls, rng, params: AttentionParams) -> "TriAttnWeights":
        hz = params.hz
        return cls(
            ln_g=rng.normal(1.0, 0.1, hz),
            ln_b=rng.normal(0.0, 0.1, hz),
            w_q=_lin(rng, hz, hz),
            w_k=_lin(rng, hz, hz),
            w_v=_lin(rng, hz, hz),
            w_bias=_lin(rng, hz, params.num_heads),
            w_gate=_lin(rng, hz, hz),
            w_out=_lin(rng, hz, hz),
        )


@dataclass
class TransitionWeights:
    ln_g: np.ndarray
    ln_b: np.ndarray
    w1: np.ndarray
    w2: np.ndarray

    @classmethod
    def random(cls, rng, hz: int, mult: int = 4) -> "TransitionWeights":
        return cls(
            ln_g=rng.normal(1.0, 0.1, hz),
            ln_b=rng.normal(0.0, 0.1, hz),
            w1=_lin(rng, hz, mult * hz),
            w2=_lin(rng, mult * hz, hz),
        )


@dataclass
class BlockWeights:
    """One folding block: two triangular multiplications, two triangular
    attentions, and the pair transition."""

    mul_out: TriMulWeights
    mul_in: TriMulWeights
    attn_start: TriAttnWeights
    attn_end: TriAttnWeights
    transition: TransitionWeights
    params: AttentionParams = field(default_factory=AttentionParams)

    @classmethod
    def random(cls, rng, params: AttentionParams | None = None,
               hidden: int | None = None, transition_mult: int = 4) -> "BlockWeights":
        params = params or AttentionParams()
        return cls(
            mul_out=TriMulWeights.random(rng, params.hz, hidden),
            mul_in=TriMulWeights.random(rng, params.hz, hidden),
            attn_start=TriAttnWeights.random(rng, params),
            attn_end=TriAttnWeights.random(rng, params),
            transition=TransitionWeights.random(rng, params.hz, transition_mult),
            params=params,
        )


# ---------------------------------------------------------------------------
# operators

def _pair_array(pair) -> np.ndarray:
    if isinstance(pair, ActivationTensor):
        return pair.data
    arr = np.asarray(pair, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != arr.shape[1]:
        raise ContractViolation(f"expected (Ns, Ns, Hz) pair tensor, got {arr.shape}")
    return arr


def triangular_multiplication_ref(pair, w: TriMulWeights, direction: str = "outgoing",
                                  _q=None) -> np.ndarray:
    """Gated triangular multiplicative update with residual add.

    direction="outgoing" contracts over the third index k as a[i,k]*b[j,k];
    "incoming" contracts a[k,i]*b[k,j].
    """
    z0 = _pair_array(pair)
    q = _q or (lambda x, g: x)
    z = layernorm_ref(z0, w.ln_in_g, w.ln_in_b)
    z = q(z, ActivationGroup.B)
    a = sigmoid(z @ w.w_left_gate) * (z @ w.w_left)
    b = sigmoid(z @ w.w_right_gate) * (z @ w.w_right)
    a = q(a, ActivationGroup.C)
    b = q(b, ActivationGroup.C)
    if direction == "outgoing":
        t = np.einsum("ikc,jkc->ijc", a, b)
    elif direction == "incoming":
        t = np.einsum("kic,kjc->ijc", a, b)
    else:
        raise ContractViolation(f"unknown direction {direction!r}")
    t = q(t, ActivationGroup.C)
    t = layernorm_ref(t, w.ln_out_g, w.ln_out_b)
    t = q(t, ActivationGroup.B)
    upd = (t @ w.w_out) * sigmoid(z @ w.w_out_gate)
    upd = q(upd, ActivationGroup.C)
    return q(z0 + upd, ActivationGroup.A)


def _attn_projections(z, params: AttentionParams, w: TriAttnWeights):
    ns = z.shape[0]
    h, d = params.num_heads, params.head_dim
    q = (z @ w.w_q).reshape(ns, ns, h, d)
    k = (z @ w.w_k).reshape(ns, ns, h, d)
    v = (z @ w.w_v).reshape(ns, ns, h, d)
    bias = z @ w.w_bias  # (ns, ns, heads), bias for attending from (i,j) to (i,k) is bias[j,k,h]
    return q, k, v, bias


def triangular_attention_ref(pair, params: AttentionParams, w: TriAttnWeights,
                             node: str = "starting", _q=None) -> np.ndarray:
    """Row-wise multi-head attention over the pair tensor with a pair-derived
    bias term, gated output projection, and residual add.

    The ending-node variant runs the starting-node computation on the
    transposed pair tensor.
    """
    z0 = _pair_array(pair)
    if node == "ending":
        out = triangular_attention_ref(np.swapaxes(z0, 0, 1), params, w, "starting", _q)
        return np.ascontiguousarray(np.swapaxes(out, 0, 1))
    if node != "starting":
        raise ContractViolation(f"unknown attention node {node!r}")
    qrt = _q or (lambda x, g: x)
    z = layernorm_ref(z0, w.ln_g, w.ln_b)
    z = qrt(z, ActivationGroup.B)
    q, k, v, bias = _attn_projections(z, params, w)
    q = qrt(q, ActivationGroup.C)
    k = qrt(k, ActivationGroup.C)
    v = qrt(v, ActivationGroup.C)
    bias = qrt(bias, ActivationGroup.C)
    scale = 1.0 / np.sqrt(params.head_dim)
    # scores[h,i,j,l]: token (i,j) attends to (i,l); bias depends on (j,l)
    scores = np.einsum("ijhd,ilhd->hijl", q, k) * scale
    scores = scores + np.transpose(bias, (2, 0, 1))[:, None, :, :]
    probs = softmax_ref(scores)
    ctx = np.einsum("hijl,ilhd->ijhd", probs, v).reshape(z.shape[0], z.shape[0], params.hz)
    ctx = qrt(ctx, ActivationGroup.C)
    gated = sigmoid(z @ w.w_gate) * ctx
    gated = qrt(gated, ActivationGroup.C)
    upd = gated @ w.w_out
    upd = qrt(upd, ActivationGroup.C)
    return qrt(z0 + upd, ActivationGroup.A)


def tokenwise_mha_ref(pair, params: AttentionParams, w: TriAttnWeights,
                      node: str = "starting", tile: int = 16,
                      _q=None) -> tuple[np.ndarray, int]:
    """Streaming attention: tiles over the attended index with a running max
    and running normalizer, so no (Ns, Ns, Ns) score tensor ever exists.

    Returns (output tensor, peak intermediate buffer size in floats).  The
    counter tracks score/normalizer/accumulator buffers only, not model
    inputs or the output tensor.
    """
    z0 = _pair_array(pair)
    if node == "ending":
        out, peak = tokenwise_mha_ref(np.swapaxes(z0, 0, 1), params, w, "starting", tile, _q)
        return np.ascontiguousarray(np.swapaxes(out, 0, 1)), peak
    if node != "starting":
        raise ContractViolation(f"unknown attention node {node!r}")
    qrt = _q or (lambda x, g: x)
    z = layernorm_ref(z0, w.ln_g, w.ln_b)
    z = qrt(z, ActivationGroup.B)
    q, k, v, bias = _attn_projections(z, params, w)
    q = qrt(q, ActivationGroup.C)
    k = qrt(k, ActivationGroup.C)
    v = qrt(v, ActivationGroup.C)
    bias = qrt(bias, ActivationGroup.C)
    ns, h, d = z.shape[0], params.num_heads, params.head_dim
    scale = 1.0 / np.sqrt(d)
    ctx = np.empty((ns, ns, h, d))
    peak = 0
    for head in range(h):
        bias_h = bias[:, :, head]
        for i in range(ns):
            qi = q[i, :, head, :]          # (ns_j, d)
            ki = k[i, :, head, :]
            vi = v[i, :, head, :]
            m = np.full(ns, -np.inf)
            l = np.zeros(ns)
            acc = np.zeros((ns, d))
            for start in range(0, ns, tile):
                stop = min(start + tile, ns)
                s = qi @ ki[start:stop].T * scale + bias_h[:, start:stop]
                tile_max = s.max(axis=1)
                new_m = np.maximum(m, tile_max)
                corr = np.exp(m - new_m)
                p = np.exp(s - new_m[:, None])
                l = l * corr + p.sum(axis=1)
                acc = acc * corr[:, None] + p @ vi[start:stop]
                m = new_m
                # live intermediates: running stats + accumulator + one score tile
                peak = max(peak, acc.size + m.size + l.size + s.size)
            ctx[i, :, head, :] = acc / l[:, None]
    ctx = qrt(ctx.reshape(ns, ns, params.hz), ActivationGroup.C)
    gated = sigmoid(z @ w.w_gate) * ctx
    gated = qrt(gated, ActivationGroup.C)
    upd = gated @ w.w_out
    upd = qrt(upd, ActivationGroup.C)
    return qrt(z0 + upd, ActivationGroup.A), peak


def transition_ref(pair, w: TransitionWeights, _q=None) -> np.ndarray:
    """Pair transition MLP (norm, expand, relu, project) with residual add."""
    z0 = _pair_array(pair)
    q = _q or (lambda x, g: x)
    z = layernorm_ref(z0, w.ln_g, w.ln_b)
    z = q(z, ActivationGroup.B)
    hdn = np.maximum(z @ w.w1, 0.0)
    hdn = q(hdn, ActivationGroup.C)
    upd = hdn @ w.w2
    upd = q(upd, ActivationGroup.C)
    return q(z0 + upd, ActivationGroup.A)


def _make_edge_quantizer(schemes: SchemeTable | None):
    """Edge hook that applies a quantize/dequantize round trip per group."""
    if schemes is None:
        return None

    def hook(x, group: ActivationGroup):
        if group == ActivationGroup.UNQUANTIZED:
            return x
        scheme = schemes[group]
        flat = x.reshape(-1, x.shape[-1])
        out = np.empty_like(flat)
        for i, tok in enumerate(flat):
            out[i] = quantize_roundtrip(tok, scheme)
        return out.reshape(x.shape)

    return hook


def run_folding_block_ref(pair, weights: BlockWeights,
                          schemes: SchemeTable | None = None,
                          streaming: bool = False) -> np.ndarray:
    """One full folding-block update of the pair tensor.

    With `schemes` set, every tagged activation edge passes through a
    quantize/dequantize round trip, which is the numeric effect of storing
    that edge quantized in memory.
    """
    hook = _make_edge_quantizer(schemes)
    z = _pair_array(pair)
    z = triangular_multiplication_ref(z, weights.mul_out, "outgoing", _q=hook)
    z = triangular_multiplication_ref(z, weights.mul_in, "incoming", _q=hook)
    if streaming:
        z, _ = tokenwise_mha_ref(z, weights.params, weights.attn_start, "starting", _q=hook)
        z, _ = tokenwise_mha_ref(z, weights.params, weights.attn_end, "ending", _q=hook)
    else:
        z = triangular_attention_ref(z, weights.params, weights.attn_start, "starting", _q=hook)
        z = triangular_attention_ref(z, weights.params, weights.attn_end, "ending", _q=hook)
    return transition_ref(z, weights.transition, _q=hook)
