"""Bit-exact serialization of quantized tokens into memory blocks.

Per-token layout, in bit order: inlier codes ((hz-k) * m bits, two's
complement, LSB-first within each byte), then k 16-bit outlier codes, the
binary16 scale, and k 8-bit outlier channel indices; the token is then padded
to a byte boundary.  Tokens are grouped into blocks of at most
`tokens_per_block`; each block starts with a 5-byte header (magic 0xA9,
scheme id, u16 token count, pad byte) and is zero-padded to a multiple of the
memory transaction width.
"""

from __future__ import annotations

import struct

import numpy as np

from .quant import QuantScheme, QuantizedToken
from .tensors import ContractViolation

BLOCK_MAGIC = 0xA9
HEADER_BYTES = 5
DEFAULT_TXN_BYTES = 64
DEFAULT_TOKENS_PER_BLOCK = 32


class CorruptionError(ValueError):
    """A block failed structural validation; `offset` is the failing byte."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.base_message = message
        self.offset = offset


def scheme_id(scheme: QuantScheme) -> int:
    """One-byte scheme id: bit 7 flags 8-bit inliers, bits 0..6 carry k."""
    if scheme.outlier_count > 127:
        raise ContractViolation("scheme id encodes at most 127 outliers")
    return ((1 << 7) if scheme.inlier_bits == 8 else 0) | scheme.outlier_count


def scheme_from_id(sid: int) -> QuantScheme:
    return QuantScheme(8 if sid & 0x80 else 4, sid & 0x7F)


def token_encoded_bits(scheme: QuantScheme, channels: int) -> int:
    k = scheme.outlier_count
    if k > channels:
        raise ContractViolation(f"{k} outliers cannot fit {channels} channels")
    return (channels - k) * scheme.inlier_bits + k * 16 + 16 + k * 8


def token_encoded_bytes(scheme: QuantScheme, channels: int) -> int:
    return -(-token_encoded_bits(scheme, channels) // 8)


def _pack_inliers(codes: np.ndarray, bits: int) -> bytes:
    if bits == 8:
        return codes.astype(np.int8).tobytes()
    u = (codes.astype(np.int64) & 0xF).astype(np.uint8)
    if u.size % 2 == 0:
        return (u[0::2] | (u[1::2] << 4)).tobytes()
    # odd nibble count: low nibbles LSB-first, dangling nibble in a low half-byte
    padded = np.append(u, np.uint8(0))
    return (padded[0::2] | (padded[1::2] << 4)).tobytes()


def _unpack_inliers(buf: bytes, count: int, bits: int) -> np.ndarray:
    if bits == 8:
        return np.frombuffer(buf, dtype=np.int8, count=count).astype(np.int16)
    raw = np.frombuffer(buf, dtype=np.uint8)
    nibbles = np.empty(raw.size * 2, dtype=np.uint8)
    nibbles[0::2] = raw & 0xF
    nibbles[1::2] = raw >> 4
    u = nibbles[:count].astype(np.int16)
    return np.where(u >= 8, u - 16, u)


def encode_token(q: QuantizedToken, scheme: QuantScheme) -> bytes:
    k = scheme.outlier_count
    if q.outlier_indices.size != k or q.inlier_codes.size != q.hz - k:
        raise ContractViolation("token layout does not match scheme")
    inl = _pack_inliers(q.inlier_codes, scheme.inlier_bits)
    tail = (
        q.outlier_raw.astype("<i2").tobytes()
        + np.array(q.scale, dtype="<f2").tobytes()
        + q.outlier_indices.astype(np.uint8).tobytes()
    )
    if ((q.hz - k) * scheme.inlier_bits) % 8 == 0:
        blob = inl + tail
    else:
        # bit-contiguous general path: splice the tail in after the inlier bits
        total_bits = token_encoded_bits(scheme, q.hz)
        acc = int.from_bytes(inl, "little") & ((1 << ((q.hz - k) * scheme.inlier_bits)) - 1)
        acc |= int.from_bytes(tail, "little") << ((q.hz - k) * scheme.inlier_bits)
        blob = acc.to_bytes(-(-total_bits // 8), "little")
    expect = token_encoded_bytes(scheme, q.hz)
    assert len(blob) == expect, (len(blob), expect)
    return blob


def decode_token(buf: bytes, scheme: QuantScheme, hz: int) -> QuantizedToken:
    k = scheme.outlier_count
    n_inl = hz - k
    inl_bits = n_inl * scheme.inlier_bits
    if inl_bits % 8 == 0:
        split = inl_bits // 8
        inl_buf, tail = buf[:split], buf[split:]
    else:
        acc = int.from_bytes(buf, "little")
        inl_buf = (acc & ((1 << inl_bits) - 1)).to_bytes(-(-inl_bits // 8), "little")
        tail = (acc >> inl_bits).to_bytes(len(buf) - inl_bits // 8, "little")
    codes = _unpack_inliers(inl_buf, n_inl, scheme.inlier_bits)
    off = 0
    out_raw = np.frombuffer(tail, dtype="<i2", count=k, offset=off).astype(np.int16)
    off += 2 * k
    scale = np.frombuffer(tail, dtype="<f2", count=1, offset=off)[0]
    off += 2
    idx = np.frombuffer(tail, dtype=np.uint8, count=k, offset=off).copy()
    return QuantizedToken(codes, out_raw, np.float16(scale), idx, hz)


def encode_block(
    tokens: list[QuantizedToken],
    scheme: QuantScheme,
    txn_bytes: int = DEFAULT_TXN_BYTES,
) -> bytes:
    """Encode tokens sharing one scheme into a single padded block."""
    if len(tokens) > 0xFFFF:
        raise ContractViolation("token count exceeds u16 header field")
    hz = tokens[0].hz if tokens else None
    for t in tokens:
        if t.outlier_indices.size != scheme.outlier_count or t.hz != hz:
            raise ContractViolation("mixed schemes or token widths in one block")
    header = struct.pack("<BBHB", BLOCK_MAGIC, scheme_id(scheme), len(tokens), 0)
    payload = b"".join(encode_token(t, scheme) for t in tokens)
    total = len(header) + len(payload)
    pad = (-total) % txn_bytes
    return header + payload + b"\x00" * pad


def decode_block(
    blob: bytes,
    hz: int = 128,
    txn_bytes: int = DEFAULT_TXN_BYTES,
) -> tuple[list[QuantizedToken], QuantScheme]:
    """Decode one block; bit-exact inverse of encode_block."""
    if len(blob) < HEADER_BYTES:
        raise CorruptionError("block shorter than header", len(blob))
    magic, sid, count, pad = struct.unpack_from("<BBHB", blob, 0)
    if magic != BLOCK_MAGIC:
        raise CorruptionError(f"bad block magic 0x{magic:02X}", 0)
    if pad != 0:
        raise CorruptionError("nonzero header pad byte", 4)
    scheme = scheme_from_id(sid)
    tb = token_encoded_bytes(scheme, hz)
    need = HEADER_BYTES + count * tb
    if len(blob) < need:
        raise CorruptionError(
            f"payload truncated: {count} tokens need {need} bytes, block has {len(blob)}",
            len(blob),
        )
    if len(blob) - need >= txn_bytes:
        raise CorruptionError("token count inconsistent with payload length", need)
    if any(blob[need:]):
        bad = need + next(i for i, b in enumerate(blob[need:]) if b)
        raise CorruptionError("nonzero padding", bad)
    tokens = [
        decode_token(blob[HEADER_BYTES + i * tb : HEADER_BYTES + (i + 1) * tb], scheme, hz)
        for i in range(count)
    ]
    return tokens, scheme


def encode_stream(
    tokens: list[QuantizedToken],
    scheme: QuantScheme,
    txn_bytes: int = DEFAULT_TXN_BYTES,
    tokens_per_block: int = DEFAULT_TOKENS_PER_BLOCK,
) -> bytes:
    """Encode an arbitrarily long token stream as consecutive blocks."""
    parts = []
    for start in range(0, len(tokens), tokens_per_block):
        parts.append(encode_block(tokens[start : start + tokens_per_block], scheme, txn_bytes))
    return b"".join(parts)


def decode_stream(
    blob: bytes,
    hz: int = 128,
    txn_bytes: int = DEFAULT_TXN_BYTES,
) -> tuple[list[QuantizedToken], QuantScheme | None]:
    tokens: list[QuantizedToken] = []
    scheme = None
    off = 0
    while off < len(blob):
        if len(blob) - off < HEADER_BYTES:
            raise CorruptionError("trailing bytes too short for a block header", off)
        _, sid, count, _ = struct.unpack_from("<BBHB", blob, off)
        s = scheme_from_id(sid)
        body = HEADER_BYTES + count * token_encoded_bytes(s, hz)
        size = body + ((-body) % txn_bytes)
        chunk = blob[off : off + size]
        try:
            toks, s = decode_block(chunk, hz, txn_bytes)
        except CorruptionError as e:
            raise CorruptionError(e.base_message, off + e.offset) from None
        tokens.extend(toks)
        scheme = s
        off += size
    return tokens, scheme


def stream_bytes(
    n_tokens: int,
    scheme: QuantScheme,
    channels: int,
    txn_bytes: int = DEFAULT_TXN_BYTES,
    tokens_per_block: int = DEFAULT_TOKENS_PER_BLOCK,
) -> int:
    """Exact on-wire size of a token stream, headers and padding included."""
    tb = token_encoded_bytes(scheme, channels)
    full, rem = divmod(n_tokens, tokens_per_block)

    def block_size(n):
        body = HEADER_BYTES + n * tb
        return body + ((-body) % txn_bytes)

    return full * block_size(tokens_per_block) + (block_size(rem) if rem else 0)
