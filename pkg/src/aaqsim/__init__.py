"""Token-wise adaptive activation quantization, a cycle-level model of a
token-parallel multi-precision accelerator, and an analytic cost model for
pair-representation protein-folding workloads."""

__version__ = "0.1.0"

from .quant import (
    ActivationGroup,
    QuantScheme,
    SchemeTable,
    dequantize_token,
    quantize_token,
    scheme_for_group,
    select_outliers,
)
from .sim import SimConfig, simulate, simulate_trace, sweep
from .tensors import ActivationTensor, FixedPointFormat, rmse, to_fixed, token_iter
from .workload import WorkloadConfig, build_folding_block, emit_trace

__all__ = [
    "ActivationGroup",
    "ActivationTensor",
    "FixedPointFormat",
    "QuantScheme",
    "SchemeTable",
    "SimConfig",
    "WorkloadConfig",
    "build_folding_block",
    "dequantize_token",
    "emit_trace",
    "quantize_token",
    "rmse",
    "scheme_for_group",
    "select_outliers",
    "simulate",
    "simulate_trace",
    "sweep",
    "to_fixed",
    "token_iter",
    "__version__",
]
