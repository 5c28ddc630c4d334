"""Numeric foundations shared by every other module.

Fixed-point storage formats, token views over (Ns, Ns, Hz) pair activations,
error metrics, and the raw tensor dump format used by the CLI tools.
Reference arithmetic is double precision throughout; fixed point appears only
at storage and simulated-compute boundaries.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

TENSOR_MAGIC = b"AAQT"
DEFAULT_HZ = 128

_ALLOWED_BITS = (4, 8, 16)


class ContractViolation(ValueError):
    """An operation was invoked outside its documented contract."""


@dataclass(frozen=True)
class FixedPointFormat:
    """Signed two's-complement fixed-point storage format."""

    bits: int
    signed: bool = True

    def __post_init__(self):
        if self.bits not in _ALLOWED_BITS:
            raise ContractViolation(f"unsupported bit width: {self.bits}")
        if not self.signed:
            raise ContractViolation("only signed formats are supported")

    @property
    def min_code(self) -> int:
        return -(1 << (self.bits - 1))

    @property
    def max_code(self) -> int:
        return (1 << (self.bits - 1)) - 1


FIX16 = FixedPointFormat(16)


def round_half_away(x):
    """Round to nearest integer, ties away from zero (symmetric about 0)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def to_fixed(x, fmt: FixedPointFormat, frac_bits: int):
    """Convert real value(s) to fixed-point integer codes.

    Saturating: values outside the representable range clamp to the format
    limits instead of raising.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ContractViolation("to_fixed requires finite input")
    scaled = round_half_away(x * float(1 << frac_bits))
    clipped = np.clip(scaled, fmt.min_code, fmt.max_code)
    out = clipped.astype(np.int64)
    return int(out) if out.ndim == 0 else out


def from_fixed(code, frac_bits: int):
    """Inverse of to_fixed (exact: codes are integers, scale a power of two)."""
    return np.asarray(code, dtype=np.float64) / float(1 << frac_bits)


def rmse(a, b) -> float:
    """Root mean squared error between two equal-length value sequences."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ContractViolation(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ContractViolation("rmse of empty sequences")
    return float(np.sqrt(np.mean((a - b) ** 2)))


@dataclass
class ActivationTensor:
    """A pair-representation activation of shape (Ns, Ns, Hz).

    `role` tags which dataflow edge the tensor represents; it is carried as
    metadata only and never affects the numerics.
    """

    data: np.ndarray
    role: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[0] != self.data.shape[1]:
            raise ContractViolation(f"expected (Ns, Ns, Hz) shape, got {self.data.shape}")
        if self.data.shape[0] < 1:
            raise ContractViolation("Ns must be >= 1")

    @property
    def ns(self) -> int:
        return self.data.shape[0]

    @property
    def hz(self) -> int:
        return self.data.shape[2]


def token_iter(t: ActivationTensor) -> Iterator[np.ndarray]:
    """Yield the Ns*Ns tokens of a pair tensor in row-major (i, j) order."""
    ns, _, hz = t.data.shape
    flat = t.data.reshape(ns * ns, hz)
    for row in flat:
        yield row


def tensor_from_tokens(tokens, ns: int, hz: int, role: str = "") -> ActivationTensor:
    """Reassemble a token stream (row-major order) into a pair tensor."""
    arr = np.asarray(list(tokens), dtype=np.float64)
    if arr.shape != (ns * ns, hz):
        raise ContractViolation(f"expected {ns * ns} tokens of length {hz}, got {arr.shape}")
    return ActivationTensor(arr.reshape(ns, ns, hz), role=role)


@dataclass
class WeightMatrix:
    """A (in, out) weight matrix stored in 16-bit fixed point.

    All entries share one scale exponent; the default Q8.8 split is a
    configuration choice, not a modeled property of the workload.
    """

    codes: np.ndarray
    frac_bits: int = 8

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int64)
        if self.codes.ndim != 2:
            raise ContractViolation("weight matrix must be 2-D")
        if self.codes.min(initial=0) < FIX16.min_code or self.codes.max(initial=0) > FIX16.max_code:
            raise ContractViolation("weight codes exceed 16-bit range")

    @classmethod
    def from_real(cls, values, frac_bits: int = 8) -> "WeightMatrix":
        return cls(to_fixed(values, FIX16, frac_bits), frac_bits)

    def to_real(self) -> np.ndarray:
        return from_fixed(self.codes, self.frac_bits)

    @property
    def shape(self):
        return self.codes.shape


def dump_tensor(path, t: ActivationTensor) -> None:
    """Write a tensor in the raw dump format.

    Layout: 16-byte header (magic "AAQT", u32 Ns, u32 Hz, u32 reserved,
    little-endian) followed by the row-major float64 payload.
    """
    header = struct.pack("<4sIII", TENSOR_MAGIC, t.ns, t.hz, 0)
    payload = t.data.astype("<f8").tobytes()
    Path(path).write_bytes(header + payload)


def load_tensor(path) -> ActivationTensor:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise ContractViolation(f"tensor dump too short: {len(raw)} bytes")
    magic, ns, hz, _ = struct.unpack_from("<4sIII", raw, 0)
    if magic != TENSOR_MAGIC:
        raise ContractViolation(f"bad tensor magic: {magic!r}")
    expect = 16 + ns * ns * hz * 8
    if len(raw) != expect:
        raise ContractViolation(f"tensor dump length {len(raw)} != expected {expect}")
    data = np.frombuffer(raw, dtype="<f8", offset=16).reshape(ns, ns, hz)
    return ActivationTensor(np.array(data, dtype=np.float64))
