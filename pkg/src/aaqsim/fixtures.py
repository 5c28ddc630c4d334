"""Golden-fixture generation and replay.

Fixtures freeze oracle outputs, layout round trips, lane arithmetic and
simulator cycle counts so a checkout can be verified end to end without
recomputing expectations from scratch.  `generate` writes the fixture tree;
`verify` replays every entry and reports per-entry pass/fail.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from . import oracle
from .blocks import decode_stream, encode_stream
from .quant import QuantScheme, quantize_token
from .sim import SimConfig, job_pe_groups, lanes_required, pack_jobs_per_cycle, simulate_trace, units_required
from .tensors import ActivationTensor, dump_tensor, load_tensor
from .workload import RmpuBatch, build_folding_block, emit_trace

MANIFEST_NAME = "manifest.json"


class VerifyFailure(Exception):
    """At least one fixture did not replay; carries the failing names."""

    def __init__(self, failures: list[str]):
        super().__init__("fixture verification failed: " + ", ".join(failures))
        self.failures = failures


def _toy_attention():
    params = oracle.AttentionParams(num_heads=2, head_dim=4, hz=8)
    weights = oracle.TriAttnWeights.random(np.random.default_rng(13), params)
    pair = np.random.default_rng(113).normal(size=(4, 4, 8))
    return params, weights, pair


def _mha_case():
    params = oracle.AttentionParams()
    weights = oracle.TriAttnWeights.random(np.random.default_rng(29), params)
    pair = np.random.default_rng(31).normal(size=(24, 24, 128))
    return params, weights, pair


def _block_tokens():
    rng = np.random.default_rng(91)
    scheme = QuantScheme(4, 4)
    tokens = [quantize_token(rng.normal(size=128) * 10.0, scheme) for _ in range(40)]
    return scheme, tokens


def generate(root) -> list[str]:
    """Write the fixture tree; returns the entry names."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []

    rng = np.random.default_rng(3)
    a = rng.normal(size=(8, 128))
    b = rng.normal(size=(128, 8))
    np.savez_compressed(root / "matmul_seed3.npz", a=a, b=b, product=oracle.matmul_ref(a, b))
    entries.append({"name": "matmul_seed3", "type": "matmul",
                    "file": "matmul_seed3.npz", "rtol": 1e-12})

    rng = np.random.default_rng(5)
    token = rng.normal(size=128)
    gamma = rng.normal(1.0, 0.1, 128)
    beta = rng.normal(0.0, 0.1, 128)
    np.savez_compressed(root / "layernorm_seed5.npz", token=token, gamma=gamma,
                        beta=beta, out=oracle.layernorm_ref(token, gamma, beta))
    entries.append({"name": "layernorm_seed5", "type": "layernorm",
                    "file": "layernorm_seed5.npz", "atol": 1e-12})

    # pair tensors travel in the raw dump format; weights stay in npz
    w = oracle.TriMulWeights.random(np.random.default_rng(11), 8)
    pair = np.random.default_rng(111).normal(size=(4, 4, 8))
    out = oracle.triangular_multiplication_ref(pair, w, "outgoing")
    dump_tensor(root / "trimul_ns4_pair.bin", ActivationTensor(pair))
    dump_tensor(root / "trimul_ns4_out.bin", ActivationTensor(out))
    np.savez_compressed(root / "trimul_ns4_weights.npz", **dataclasses.asdict(w))
    entries.append({"name": "trimul_ns4_seed11", "type": "trimul",
                    "pair": "trimul_ns4_pair.bin", "out": "trimul_ns4_out.bin",
                    "weights": "trimul_ns4_weights.npz", "atol": 1e-12})

    params, weights, pair = _toy_attention()
    out = oracle.triangular_attention_ref(pair, params, weights, "starting")
    dump_tensor(root / "triattn_ns4_pair.bin", ActivationTensor(pair))
    dump_tensor(root / "triattn_ns4_out.bin", ActivationTensor(out))
    np.savez_compressed(root / "triattn_ns4_weights.npz", **dataclasses.asdict(weights))
    entries.append({"name": "triattn_ns4_seed13", "type": "triattn",
                    "pair": "triattn_ns4_pair.bin", "out": "triattn_ns4_out.bin",
                    "weights": "triattn_ns4_weights.npz", "atol": 1e-12,
                    "num_heads": 2, "head_dim": 4, "hz": 8})

    params, weights, pair = _mha_case()
    ref = oracle.triangular_attention_ref(pair, params, weights, "starting")
    dump_tensor(root / "mha_ns24_out.bin", ActivationTensor(ref))
    entries.append({"name": "streaming_mha_tol", "type": "mha_tol",
                    "out": "mha_ns24_out.bin", "atol": 1e-10})

    scheme, tokens = _block_tokens()
    blob = encode_stream(tokens, scheme)
    (root / "blocks_b.bin").write_bytes(blob)
    np.savez_compressed(
        root / "blocks_b_tokens.npz",
        codes=np.stack([t.inlier_codes for t in tokens]),
        raw=np.stack([t.outlier_raw for t in tokens]),
        scales=np.array([t.scale for t in tokens], dtype=np.float16),
        idx=np.stack([t.outlier_indices for t in tokens]),
    )
    entries.append({"name": "token_block_roundtrip", "type": "block_roundtrip",
                    "file": "blocks_b.bin", "tokens_file": "blocks_b_tokens.npz",
                    "inlier_bits": 4, "outlier_count": 4})

    entries.append({
        "name": "lane_arithmetic", "type": "lanes",
        "cases": [
            {"inlier_bits": 4, "k": 4, "units": 560, "lanes": 5, "tokens_per_cycle": 16},
            {"inlier_bits": 4, "k": 0, "units": 512, "lanes": 4, "tokens_per_cycle": 20},
            {"inlier_bits": 8, "k": 4, "units": 1056, "tokens_per_cycle": 8},
            {"unquantized": True, "units": 2048, "lanes": 16, "tokens_per_cycle": 4},
        ],
    })

    graph = build_folding_block(64)
    trace = emit_trace(graph)
    report = simulate_trace(trace, SimConfig(), graph)
    entries.append({"name": "sim_ns64_cycles", "type": "sim_cycles", "ns": 64,
                    "block_cycles": report.block_cycles})
    entries.append({
        "name": "trace_ns64_bytes", "type": "trace_bytes", "ns": 64,
        "bytes_read": sum(t.bytes_read for t in trace),
        "bytes_written": sum(t.bytes_written for t in trace),
    })

    (root / MANIFEST_NAME).write_text(json.dumps({"entries": entries}, indent=1, sort_keys=True))
    return [e["name"] for e in entries]


def _check_matmul(root, entry):
    data = np.load(root / entry["file"])
    got = oracle.matmul_ref(data["a"], data["b"])
    return np.allclose(got, data["product"], rtol=entry["rtol"], atol=0.0)


def _check_layernorm(root, entry):
    data = np.load(root / entry["file"])
    got = oracle.layernorm_ref(data["token"], data["gamma"], data["beta"])
    return np.allclose(got, data["out"], atol=entry["atol"])


def _check_trimul(root, entry):
    weights = np.load(root / entry["weights"])
    w = oracle.TriMulWeights(**{f.name: weights[f.name]
                                for f in dataclasses.fields(oracle.TriMulWeights)})
    pair = load_tensor(root / entry["pair"]).data
    expect = load_tensor(root / entry["out"]).data
    got = oracle.triangular_multiplication_ref(pair, w, "outgoing")
    return np.allclose(got, expect, atol=entry["atol"])


def _check_triattn(root, entry):
    weights = np.load(root / entry["weights"])
    params = oracle.AttentionParams(entry["num_heads"], entry["head_dim"], entry["hz"])
    w = oracle.TriAttnWeights(**{f.name: weights[f.name]
                                 for f in dataclasses.fields(oracle.TriAttnWeights)})
    pair = load_tensor(root / entry["pair"]).data
    expect = load_tensor(root / entry["out"]).data
    got = oracle.triangular_attention_ref(pair, params, w, "starting")
    return np.allclose(got, expect, atol=entry["atol"])


def _check_mha_tol(root, entry):
    expect = load_tensor(root / entry["out"]).data
    params, weights, pair = _mha_case()
    got, _ = oracle.tokenwise_mha_ref(pair, params, weights, "starting", tile=16)
    return bool(np.max(np.abs(got - expect)) <= entry["atol"])


def _check_block_roundtrip(root, entry):
    blob = (root / entry["file"]).read_bytes()
    ref = np.load(root / entry["tokens_file"])
    scheme = QuantScheme(entry["inlier_bits"], entry["outlier_count"])
    tokens, got_scheme = decode_stream(blob)
    if got_scheme != scheme or len(tokens) != ref["codes"].shape[0]:
        return False
    ok = all(
        np.array_equal(t.inlier_codes, ref["codes"][i])
        and np.array_equal(t.outlier_raw, ref["raw"][i])
        and t.scale.tobytes() == ref["scales"][i].tobytes()
        and np.array_equal(t.outlier_indices, ref["idx"][i])
        for i, t in enumerate(tokens)
    )
    return ok and encode_stream(tokens, scheme) == blob


def _check_lanes(root, entry):
    del root
    for case in entry["cases"]:
        scheme = None if case.get("unquantized") else QuantScheme(case["inlier_bits"], case["k"])
        units = units_required(scheme, 16, 128)
        if units != case["units"]:
            return False
        if "lanes" in case and lanes_required(units)[0] != case["lanes"]:
            return False
        batch = RmpuBatch(1, 128, (scheme.inlier_bits if scheme else 16, 16), scheme)
        if pack_jobs_per_cycle(job_pe_groups(batch)) != case["tokens_per_cycle"]:
            return False
    return True


def _check_sim_cycles(root, entry):
    del root
    graph = build_folding_block(entry["ns"])
    report = simulate_trace(emit_trace(graph), SimConfig(), graph)
    return report.block_cycles == entry["block_cycles"]


def _check_trace_bytes(root, entry):
    del root
    trace = emit_trace(build_folding_block(entry["ns"]))
    return (sum(t.bytes_read for t in trace) == entry["bytes_read"]
            and sum(t.bytes_written for t in trace) == entry["bytes_written"])


_CHECKS = {
    "matmul": _check_matmul,
    "layernorm": _check_layernorm,
    "trimul": _check_trimul,
    "triattn": _check_triattn,
    "mha_tol": _check_mha_tol,
    "block_roundtrip": _check_block_roundtrip,
    "lanes": _check_lanes,
    "sim_cycles": _check_sim_cycles,
    "trace_bytes": _check_trace_bytes,
}


def verify(root) -> list[tuple[str, bool, str]]:
    """Replay every fixture; returns (name, passed, detail) per entry."""
    root = Path(root)
    manifest = root / MANIFEST_NAME
    if not manifest.is_file():
        raise FileNotFoundError(f"fixture manifest not found: {manifest}")
    entries = json.loads(manifest.read_text())["entries"]
    results = []
    for entry in entries:
        name = entry["name"]
        try:
            ok = _CHECKS[entry["type"]](root, entry)
            detail = "" if ok else "mismatch"
        except FileNotFoundError as e:
            ok, detail = False, f"missing fixture: {e}"
        except Exception as e:  # corrupt files must fail the named entry, not the runner
            ok, detail = False, f"{type(e).__name__}: {e}"
        results.append((name, bool(ok), detail))
    return results
