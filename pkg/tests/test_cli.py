import json

import numpy as np
import pytest

from aaqsim import fixtures
from aaqsim.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, EXIT_VERIFY, main
from aaqsim.config import parse_config_text
from aaqsim.synthetic import heavy_tailed_tokens
from aaqsim.tensors import ActivationTensor, ContractViolation, dump_tensor


def run(*argv):
    return main(list(argv))


def write_tensor(path, data):
    dump_tensor(path, ActivationTensor(data))


def test_config_parsing():
    cfg = parse_config_text(
        """
        # comment
        sim.num_rmpus = 16
        sim.mem_efficiency = 0.2
        workload.num_blocks = 12
        workload.streaming_mha = false
        quant.schemes = A:8:8,B:4:4,C:4:0
        """
    )
    assert cfg.sim.num_rmpus == 16
    assert cfg.sim.mem_efficiency == 0.2
    assert cfg.workload.num_blocks == 12
    assert cfg.workload.streaming_mha is False
    from aaqsim.quant import ActivationGroup
    assert cfg.schemes[ActivationGroup.A].outlier_count == 8
    for bad in ("sim.warp_factor=9", "nosection=1", "sim.num_rmpus"):
        with pytest.raises(ContractViolation):
            parse_config_text(bad)


def test_quantize_writes_blocks_and_sidecar(tmp_path):
    rng = np.random.default_rng(7)
    tensor = tmp_path / "t.bin"
    write_tensor(tensor, rng.normal(size=(8, 8, 128)) * 5)
    assert run("--out-dir", str(tmp_path), "quantize", "--input", str(tensor),
               "--scheme", "B") == EXIT_OK
    sidecar = json.loads((tmp_path / "t.blocks.json").read_text())
    assert sidecar["tokens"] == 64
    assert sidecar["scheme"] == {"inlier_bits": 4, "outlier_count": 4}
    assert sidecar["rmse"] > 0
    assert (tmp_path / "t.blocks").stat().st_size == sidecar["bytes"]
    manifest = json.loads((tmp_path / "quantize_manifest.json").read_text())
    assert manifest["command"] == "quantize" and manifest["seed"] == 0


def test_quantize_zero_tensor_rmse_zero(tmp_path):
    tensor = tmp_path / "z.bin"
    write_tensor(tensor, np.zeros((4, 4, 128)))
    assert run("--out-dir", str(tmp_path), "quantize", "--input", str(tensor)) == EXIT_OK
    sidecar = json.loads((tmp_path / "z.blocks.json").read_text())
    assert sidecar["rmse"] == 0.0


def test_quantize_outlier_handling_beats_k0_on_heavy_tails(tmp_path):
    rng = np.random.default_rng(40)
    tokens = heavy_tailed_tokens(rng, 64).reshape(8, 8, 128)
    tensor = tmp_path / "h.bin"
    write_tensor(tensor, tokens)
    run("--out-dir", str(tmp_path), "quantize", "--input", str(tensor),
        "--scheme", "4:4", "--out", "k4.blocks")
    run("--out-dir", str(tmp_path), "quantize", "--input", str(tensor),
        "--scheme", "4:0", "--out", "k0.blocks")
    r4 = json.loads((tmp_path / "k4.blocks.json").read_text())["rmse"]
    r0 = json.loads((tmp_path / "k0.blocks.json").read_text())["rmse"]
    assert r4 < r0


def test_missing_input_exits_2(tmp_path, capsys):
    assert run("--out-dir", str(tmp_path), "quantize",
               "--input", str(tmp_path / "nope.bin")) == EXIT_IO
    assert "nope.bin" in capsys.readouterr().err


def test_bad_scheme_exits_3(tmp_path):
    tensor = tmp_path / "t.bin"
    write_tensor(tensor, np.zeros((2, 2, 128)))
    assert run("--out-dir", str(tmp_path), "quantize", "--input", str(tensor),
               "--scheme", "banana") == EXIT_USAGE
    assert run("--out-dir", str(tmp_path), "simulate", "--ns", "8",
               "--schemes", "Z:4:4") == EXIT_USAGE


def test_unknown_command_exits_3():
    assert run("frobnicate") == EXIT_USAGE


def test_simulate_deterministic_outputs(tmp_path):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    for out in (out1, out2):
        assert run("--out-dir", str(out), "simulate", "--ns", "64") == EXIT_OK
    a = (out1 / "simulate_ns64_aaq.json").read_bytes()
    b = (out2 / "simulate_ns64_aaq.json").read_bytes()
    assert a == b


def test_simulate_flags(tmp_path):
    assert run("--out-dir", str(tmp_path), "simulate", "--ns", "32",
               "--chunk4", "--no-streaming-mha", "--report", "csv",
               "--trace-out", "t.json") == EXIT_OK
    doc = json.loads((tmp_path / "t.json").read_text())
    assert doc["config"]["chunk_factor"] == 4
    assert doc["config"]["streaming_mha"] is False
    assert (tmp_path / "simulate_ns32_aaq-chunk4-materialized.csv").read_text().startswith("ns,")


def test_sweep_row_count(tmp_path):
    assert run("--out-dir", str(tmp_path), "sweep", "--rmpus", "1:64",
               "--vvpus", "4", "--ns", "64") == EXIT_OK
    lines = (tmp_path / "sweep.csv").read_text().strip().splitlines()
    assert len(lines) == 65  # header plus 64 rows


def test_sweep_requires_a_grid(tmp_path):
    assert run("--out-dir", str(tmp_path), "sweep", "--ns", "64") == EXIT_USAGE


def test_cost_csv_shape(tmp_path):
    assert run("--out-dir", str(tmp_path), "cost",
               "--ns", "64,96,128,160", "--variant", "all") == EXIT_OK
    lines = (tmp_path / "cost.csv").read_text().strip().splitlines()
    assert lines[0] == "ns,variant,weight_bytes,peak_bytes,footprint_bytes,int8_ops"
    assert len(lines) == 1 + 4 * 3


def test_cost_deterministic(tmp_path):
    out1, out2 = tmp_path / "c1", tmp_path / "c2"
    for out in (out1, out2):
        assert run("--out-dir", str(out), "cost", "--ns", "64", "--variant", "aaq") == EXIT_OK
    assert (out1 / "cost.csv").read_bytes() == (out2 / "cost.csv").read_bytes()


def test_trace_export(tmp_path):
    assert run("--out-dir", str(tmp_path), "trace", "--ns", "8",
               "--variant", "vanilla") == EXIT_OK
    doc = json.loads((tmp_path / "trace_ns8.json").read_text())
    assert doc["variant"] == "vanilla"
    assert doc["nodes"] and doc["edges"] and doc["trace"]


def test_config_file_flows_into_run(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("sim.num_rmpus=8\nworkload.num_blocks=2\n")
    assert run("--config", str(cfg), "--out-dir", str(tmp_path),
               "simulate", "--ns", "32") == EXIT_OK
    doc = json.loads((tmp_path / "simulate_ns32_aaq.json").read_text())
    assert doc["num_blocks"] == 2
    manifest = json.loads((tmp_path / "simulate_manifest.json").read_text())
    assert manifest["config"]["sim"]["num_rmpus"] == 8
    assert run("--config", str(tmp_path / "missing.cfg"),
               "simulate", "--ns", "8") == EXIT_IO


def test_verify_passes_on_pristine_fixtures(tmp_path, capsys):
    fixtures.generate(tmp_path / "fx")
    assert run("verify", "--fixtures", str(tmp_path / "fx")) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("PASS") == 9 and "FAIL" not in out


def test_verify_fails_on_corrupted_fixture(tmp_path, capsys):
    root = tmp_path / "fx"
    fixtures.generate(root)
    blob = bytearray((root / "blocks_b.bin").read_bytes())
    blob[10] ^= 0xFF
    (root / "blocks_b.bin").write_bytes(bytes(blob))
    assert run("verify", "--fixtures", str(root)) == EXIT_VERIFY
    out = capsys.readouterr().out
    assert "token_block_roundtrip: FAIL" in out


def test_verify_missing_fixture_dir_exits_2(tmp_path):
    assert run("verify", "--fixtures", str(tmp_path / "nothing")) == EXIT_IO
