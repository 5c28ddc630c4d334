"""Token-wise adaptive activation quantization.

Each token (one Hz-length vector of the pair representation) is quantized
independently: the k largest-magnitude channels are split off as 16-bit
outliers, the rest are coded with uniform symmetric quantization at 4 or 8
bits using a per-token scale sigma = M / (2^(m-1) - 1), with M the largest
inlier magnitude.  The scale is stored as binary16, outliers as Q8.8.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .tensors import ContractViolation, FIX16, from_fixed, round_half_away

OUTLIER_FRAC_BITS = 8  # Q8.8 outlier payload


class ActivationGroup(Enum):
    A = "A"
    B = "B"
    C = "C"
    UNQUANTIZED = "unquantized"


class NoSchemeError(ValueError):
    """Raised when a scheme is requested for an unquantized activation group."""


@dataclass(frozen=True)
class QuantScheme:
    """Per-group quantization policy: inlier precision plus outlier budget."""

    inlier_bits: int
    outlier_count: int
    outlier_bits: int = 16

    def __post_init__(self):
        if self.inlier_bits not in (4, 8):
            raise ContractViolation(f"inlier_bits must be 4 or 8, got {self.inlier_bits}")
        if self.outlier_count < 0:
            raise ContractViolation("outlier_count must be non-negative")
        if self.outlier_bits != 16:
            raise ContractViolation("outlier payload is fixed at 16 bits")

    @property
    def max_code(self) -> int:
        return (1 << (self.inlier_bits - 1)) - 1

    def label(self) -> str:
        return f"{self.inlier_bits}b/k{self.outlier_count}"


def default_schemes() -> dict[ActivationGroup, QuantScheme]:
    return {
        ActivationGroup.A: QuantScheme(8, 4),
        ActivationGroup.B: QuantScheme(4, 4),
        ActivationGroup.C: QuantScheme(4, 0),
    }


class SchemeTable:
    """Group -> scheme mapping, overridable for design-space sweeps."""

    def __init__(self, overrides: dict[ActivationGroup, QuantScheme] | None = None):
        self._table = default_schemes()
        if overrides:
            self._table.update(overrides)

    def __getitem__(self, group: ActivationGroup) -> QuantScheme:
        if group == ActivationGroup.UNQUANTIZED:
            raise NoSchemeError("unquantized group carries no scheme")
        return self._table[group]

    def items(self):
        return self._table.items()

    @classmethod
    def parse(cls, spec: str) -> "SchemeTable":
        """Parse a scheme spec like "A:8:4,B:4:4,C:4:0"."""
        overrides: dict[ActivationGroup, QuantScheme] = {}
        for part in spec.split(","):
            part = part.strip()
            if not part:
                continue
            fields = part.split(":")
            if len(fields) != 3:
                raise ContractViolation(f"bad scheme spec {part!r}, expected G:bits:k")
            try:
                group = ActivationGroup(fields[0].strip().upper())
            except ValueError as e:
                raise ContractViolation(f"unknown group in scheme spec: {fields[0]!r}") from e
            if group == ActivationGroup.UNQUANTIZED:
                raise ContractViolation("cannot assign a scheme to the unquantized group")
            overrides[group] = QuantScheme(int(fields[1]), int(fields[2]))
        return cls(overrides)


def scheme_for_group(group: ActivationGroup, table: SchemeTable | None = None) -> QuantScheme:
    """Default scheme for a group: A -> (8, 4), B -> (4, 4), C -> (4, 0)."""
    return (table or SchemeTable())[group]


@dataclass
class QuantizedToken:
    """Bit-exact quantized token contents.

    Channel order: outlier_indices are strictly increasing; inlier codes keep
    the channel order of the remaining positions.
    """

    inlier_codes: np.ndarray    # int16, length hz - k
    outlier_raw: np.ndarray     # int16 Q8.8 codes, length k
    scale: np.float16           # per-token sigma
    outlier_indices: np.ndarray  # uint8, strictly increasing
    hz: int

    def inlier_positions(self) -> np.ndarray:
        mask = np.ones(self.hz, dtype=bool)
        mask[self.outlier_indices.astype(np.int64)] = False
        return np.flatnonzero(mask)

    def outlier_values(self) -> np.ndarray:
        return from_fixed(self.outlier_raw.astype(np.int64), OUTLIER_FRAC_BITS)

    def __eq__(self, other) -> bool:
        if not isinstance(other, QuantizedToken):
            return NotImplemented
        return (
            self.hz == other.hz
            and self.scale.tobytes() == other.scale.tobytes()
            and np.array_equal(self.inlier_codes, other.inlier_codes)
            and np.array_equal(self.outlier_raw, other.outlier_raw)
            and np.array_equal(self.outlier_indices, other.outlier_indices)
        )


def select_outliers(values, k: int):
    """Split a token into its k largest-magnitude channels and the rest.

    Ties break toward the lower channel index.  Returns (indices sorted
    ascending, outlier values in that order, inlier values in channel order).
    """
    v = np.asarray(values, dtype=np.float64)
    hz = v.size
    if k < 0 or k > hz:
        raise ContractViolation(f"outlier count {k} outside [0, {hz}]")
    if k == 0:
        return np.empty(0, dtype=np.int64), np.empty(0), v.copy()
    # lexsort: primary key -|v| (descending magnitude), secondary key channel index
    order = np.lexsort((np.arange(hz), -np.abs(v)))
    idx = np.sort(order[:k])
    mask = np.ones(hz, dtype=bool)
    mask[idx] = False
    return idx, v[idx], v[mask]


def quantize_token(values, scheme: QuantScheme) -> QuantizedToken:
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ContractViolation("cannot quantize non-finite token")
    hz = v.size
    k = scheme.outlier_count
    if k > hz:
        raise ContractViolation(f"scheme requests {k} outliers for {hz} channels")
    idx, out_vals, inliers = select_outliers(v, k)
    m = float(np.max(np.abs(inliers))) if inliers.size else 0.0
    if m > 0.0:
        sigma = m / scheme.max_code
        codes = round_half_away(inliers / sigma)
        codes = np.clip(codes, -scheme.max_code, scheme.max_code)
    else:
        sigma = 0.0
        codes = np.zeros(inliers.size)
    with np.errstate(over="ignore"):
        scale = np.float16(sigma)
    if not np.isfinite(scale):
        raise ContractViolation(f"token scale {sigma} exceeds binary16 range")
    if k:
        # Q8.8 with saturation; inputs were already checked finite
        out_raw = np.clip(round_half_away(out_vals * 256.0), FIX16.min_code, FIX16.max_code)
    else:
        out_raw = np.empty(0)
    return QuantizedToken(
        inlier_codes=codes.astype(np.int16),
        outlier_raw=out_raw.astype(np.int16),
        scale=scale,
        outlier_indices=idx.astype(np.uint8),
        hz=hz,
    )


def dequantize_token(q: QuantizedToken, scheme: QuantScheme) -> np.ndarray:
    """Reconstruct a token: sigma * code for inliers, Q8.8 for outliers."""
    k = q.outlier_indices.size
    if k != scheme.outlier_count or q.inlier_codes.size != q.hz - k:
        raise ContractViolation("token does not match scheme layout")
    idx = q.outlier_indices.astype(np.int64)
    if k and (idx.max() >= q.hz or np.any(np.diff(idx) <= 0)):
        raise ContractViolation("corrupt outlier index vector")
    out = np.empty(q.hz)
    mask = np.ones(q.hz, dtype=bool)
    mask[idx] = False
    out[mask] = q.inlier_codes * float(q.scale)
    out[idx] = q.outlier_raw / 256.0
    return out


def quantize_roundtrip(values, scheme: QuantScheme) -> np.ndarray:
    """Quantize-then-dequantize, the numeric effect of one memory round trip."""
    return dequantize_token(quantize_token(values, scheme), scheme)


def stats_3sigma(values):
    """Mean, population stddev, and the 3-sigma outlier count of one token."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise ContractViolation("need at least 2 channels for token statistics")
    mean = float(np.mean(v))
    std = float(np.std(v))
    count = int(np.count_nonzero(np.abs(v - mean) > 3.0 * std))
    return mean, std, count
