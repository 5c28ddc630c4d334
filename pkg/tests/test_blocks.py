import numpy as np
import pytest

from aaqsim.blocks import (
    CorruptionError,
    decode_block,
    decode_stream,
    encode_block,
    encode_stream,
    scheme_from_id,
    scheme_id,
    stream_bytes,
    token_encoded_bytes,
)
from aaqsim.quant import QuantScheme, quantize_token
from aaqsim.tensors import ContractViolation


def make_tokens(rng, scheme, n, hz=128, scale=10.0):
    return [quantize_token(rng.normal(size=hz) * scale, scheme) for _ in range(n)]


def test_token_sizes_match_layout_arithmetic():
    assert token_encoded_bytes(QuantScheme(4, 0), 128) == 66   # 128*4 + 16 bits
    assert token_encoded_bytes(QuantScheme(4, 4), 128) == 76   # 124*4 + 4*16 + 16 + 4*8
    assert token_encoded_bytes(QuantScheme(8, 4), 128) == 138  # 124*8 + 4*16 + 16 + 4*8


def test_scheme_id_roundtrip():
    for scheme in (QuantScheme(4, 0), QuantScheme(4, 4), QuantScheme(8, 4),
                   QuantScheme(8, 127), QuantScheme(4, 32)):
        assert scheme_from_id(scheme_id(scheme)) == scheme
    with pytest.raises(ContractViolation):
        scheme_id(QuantScheme(4, 128))


def test_empty_block():
    blob = encode_block([], QuantScheme(4, 4))
    assert len(blob) % 64 == 0
    tokens, scheme = decode_block(blob)
    assert tokens == [] and scheme == QuantScheme(4, 4)


@pytest.mark.parametrize("scheme", [
    QuantScheme(4, 0), QuantScheme(4, 4), QuantScheme(8, 4),
    QuantScheme(4, 3), QuantScheme(8, 5), QuantScheme(4, 32),
])
def test_block_roundtrip_bit_exact(scheme):
    rng = np.random.default_rng(scheme.inlier_bits * 100 + scheme.outlier_count)
    tokens = make_tokens(rng, scheme, 33)
    blob = encode_block(tokens, scheme)
    assert len(blob) % 64 == 0
    back, got = decode_block(blob)
    assert got == scheme
    assert back == tokens
    assert encode_block(back, scheme) == blob


def test_stream_roundtrip_and_size_arithmetic():
    rng = np.random.default_rng(5)
    scheme = QuantScheme(4, 4)
    tokens = make_tokens(rng, scheme, 100)
    blob = encode_stream(tokens, scheme)
    assert len(blob) == stream_bytes(100, scheme, 128)
    back, got = decode_stream(blob)
    assert got == scheme and back == tokens


def test_mixed_schemes_rejected():
    rng = np.random.default_rng(6)
    t1 = make_tokens(rng, QuantScheme(4, 4), 1)
    t2 = make_tokens(rng, QuantScheme(4, 0), 1)
    with pytest.raises(ContractViolation):
        encode_block(t1 + t2, QuantScheme(4, 4))


def test_corruption_bad_magic():
    blob = bytearray(encode_block(make_tokens(np.random.default_rng(7), QuantScheme(4, 4), 3),
                                  QuantScheme(4, 4)))
    blob[0] = 0x00
    with pytest.raises(CorruptionError) as e:
        decode_block(bytes(blob))
    assert e.value.offset == 0


def test_corruption_truncated_payload():
    scheme = QuantScheme(4, 4)
    blob = bytearray(encode_block(make_tokens(np.random.default_rng(8), scheme, 3), scheme))
    blob[2] = 200  # token_count claims more tokens than the payload holds
    with pytest.raises(CorruptionError) as e:
        decode_block(bytes(blob))
    assert "truncated" in str(e.value) and e.value.offset == len(blob)


def test_corruption_nonzero_padding():
    scheme = QuantScheme(4, 4)
    blob = bytearray(encode_block(make_tokens(np.random.default_rng(9), scheme, 3), scheme))
    blob[-1] = 0xFF
    with pytest.raises(CorruptionError) as e:
        decode_block(bytes(blob))
    assert e.value.offset == len(blob) - 1


def test_stream_corruption_reports_absolute_offset():
    scheme = QuantScheme(4, 4)
    tokens = make_tokens(np.random.default_rng(10), scheme, 40)
    blob = bytearray(encode_stream(tokens, scheme, tokens_per_block=32))
    first_block = stream_bytes(32, scheme, 128)
    blob[first_block] = 0x00  # clobber the second block's magic
    with pytest.raises(CorruptionError) as e:
        decode_stream(bytes(blob))
    assert e.value.offset == first_block


def test_large_roundtrip_1000_tokens():
    rng = np.random.default_rng(11)
    scheme = QuantScheme(4, 4)
    tokens = make_tokens(rng, scheme, 1000)
    blob = encode_stream(tokens, scheme)
    back, _ = decode_stream(blob)
    assert back == tokens
