"""Simulator for federated learning with periodic averaging, partial node
participation, and quantized uploads, with a wall-clock cost model and
evaluators for the convergence-bound constants."""

from .config import RunConfig, parse_config
from .fed_core import RoundRecord, run, server_round, stepsize
from .quantizer import Identity, LowPrecision, QuantizedVector, decode, dequantize, encode, quantize

__all__ = [
    "Identity",
    "LowPrecision",
    "QuantizedVector",
    "RoundRecord",
    "RunConfig",
    "decode",
    "dequantize",
    "encode",
    "parse_config",
    "quantize",
    "run",
    "server_round",
    "stepsize",
]
