"""Python bindings of the bicomp simulator."""

from ._bicomp import (
    Compressor,
    ConfigError,
    DimensionError,
    NonFiniteError,
    Problem,
    bit_cost,
    check_compressor_moments,
    compress,
    gamma_bounds,
    phi,
    run,
    run_config,
    synth_problem,
    validate,
)

__all__ = [
    "Compressor",
    "ConfigError",
    "DimensionError",
    "NonFiniteError",
    "Problem",
    "bit_cost",
    "check_compressor_moments",
    "compress",
    "gamma_bounds",
    "phi",
    "run",
    "run_config",
    "synth_problem",
    "validate",
]
