import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aaqsim.tensors import (
    ContractViolation,
    FIX16,
    ActivationTensor,
    FixedPointFormat,
    WeightMatrix,
    dump_tensor,
    load_tensor,
    rmse,
    to_fixed,
    token_iter,
    tensor_from_tokens,
)
from aaqsim.quant import QuantScheme, dequantize_token, quantize_token


def test_fixed_point_formats():
    f8 = FixedPointFormat(8)
    assert (f8.min_code, f8.max_code) == (-128, 127)
    assert (FIX16.min_code, FIX16.max_code) == (-32768, 32767)
    with pytest.raises(ContractViolation):
        FixedPointFormat(12)


def test_to_fixed_examples():
    assert to_fixed(0.0, FIX16, 8) == 0
    assert to_fixed(1.0, FIX16, 8) == 256
    assert to_fixed(200.0, FixedPointFormat(8), 0) == 127  # saturates at 2^7 - 1
    assert to_fixed(-200.0, FixedPointFormat(8), 0) == -128


def test_to_fixed_half_away_from_zero():
    assert to_fixed(0.5, FixedPointFormat(8), 0) == 1
    assert to_fixed(-0.5, FixedPointFormat(8), 0) == -1
    assert to_fixed(2.5, FixedPointFormat(8), 0) == 3


@settings(max_examples=200, deadline=None)
@given(st.floats(-300, 300), st.floats(-300, 300))
def test_to_fixed_monotone(x, y):
    fmt = FixedPointFormat(16)
    if x <= y:
        assert to_fixed(x, fmt, 4) <= to_fixed(y, fmt, 4)


@settings(max_examples=200, deadline=None)
@given(st.floats(-120, 120))
def test_to_fixed_odd_symmetry(x):
    fmt = FixedPointFormat(16)
    assert to_fixed(-x, fmt, 8) == -to_fixed(x, fmt, 8)


def test_to_fixed_rejects_nan():
    with pytest.raises(ContractViolation):
        to_fixed(float("nan"), FIX16, 8)


def test_rmse_examples():
    assert rmse([1, 2], [1, 2]) == 0.0
    assert rmse([0, 0], [3, 4]) == pytest.approx(np.sqrt(12.5))
    with pytest.raises(ContractViolation):
        rmse([1, 2], [1, 2, 3])


def test_rmse_triangle_on_random_triples():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b, c = rng.normal(size=(3, 64))
        assert rmse(a, c) <= rmse(a, b) + rmse(b, c) + 1e-12


def test_rmse_uniform_token_4bit_matches_quantization_noise():
    # golden value computed by double-precision brute force, frozen
    rng = np.random.default_rng(42)
    t = rng.uniform(-1.0, 1.0, 128)
    scheme = QuantScheme(4, 0)
    got = rmse(t, dequantize_token(quantize_token(t, scheme), scheme))
    assert got == pytest.approx(0.03720580700040004, rel=1e-12)
    step = np.abs(t).max() / 7.0
    assert got == pytest.approx(step / np.sqrt(12.0), rel=0.15)


def test_token_iter_counts_and_order():
    data = np.arange(3 * 3 * 128, dtype=np.float64).reshape(3, 3, 128)
    t = ActivationTensor(data)
    tokens = list(token_iter(t))
    assert len(tokens) == 9
    assert np.array_equal(tokens[5], data[1, 2])  # row-major: (1, 2) is index 5

    single = ActivationTensor(np.zeros((1, 1, 128)))
    assert len(list(token_iter(single))) == 1


@pytest.mark.parametrize("ns", [1, 2, 5])
def test_token_iter_roundtrip_bit_exact(ns):
    rng = np.random.default_rng(ns)
    t = ActivationTensor(rng.normal(size=(ns, ns, 16)))
    back = tensor_from_tokens(token_iter(t), ns, 16)
    assert np.array_equal(back.data, t.data)


def test_activation_tensor_validation():
    with pytest.raises(ContractViolation):
        ActivationTensor(np.zeros((2, 3, 4)))
    with pytest.raises(ContractViolation):
        ActivationTensor(np.zeros((4, 4)))


def test_dump_load_roundtrip(tmp_path):
    rng = np.random.default_rng(9)
    t = ActivationTensor(rng.normal(size=(4, 4, 8)))
    path = tmp_path / "t.bin"
    dump_tensor(path, t)
    raw = path.read_bytes()
    assert raw[:4] == b"AAQT" and len(raw) == 16 + 4 * 4 * 8 * 8
    back = load_tensor(path)
    assert np.array_equal(back.data, t.data)


def test_load_rejects_bad_files(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"NOPE" + b"\x00" * 12)
    with pytest.raises(ContractViolation):
        load_tensor(p)
    p.write_bytes(b"\x00" * 3)
    with pytest.raises(ContractViolation):
        load_tensor(p)


def test_weight_matrix_roundtrip():
    rng = np.random.default_rng(2)
    w = rng.normal(size=(8, 4))
    wm = WeightMatrix.from_real(w)
    assert wm.shape == (8, 4)
    assert np.max(np.abs(wm.to_real() - w)) <= 2 ** -9  # Q8.8 resolution
    with pytest.raises(ContractViolation):
        WeightMatrix(np.full((2, 2), 40000))
