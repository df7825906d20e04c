"""Simulated wall-clock cost of a round: uplink bits over a fixed bandwidth
plus the slowest participant's shifted-exponential compute time."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CostModelParams:
    bandwidth_bits_per_s: float
    shift_s_per_grad: float = 0.001
    scale: float = 1000.0
    float_bits: int = 32

    def __post_init__(self):
        if not self.bandwidth_bits_per_s > 0:
            raise ValueError(f"bandwidth must be > 0, got {self.bandwidth_bits_per_s}")
        if not self.scale > 0:
            raise ValueError(f"scale must be > 0, got {self.scale}")
        if self.shift_s_per_grad < 0:
            raise ValueError(f"shift must be >= 0, got {self.shift_s_per_grad}")
        if self.float_bits < 1:
            raise ValueError(f"float_bits must be >= 1, got {self.float_bits}")

    @classmethod
    def from_ratio(cls, p: int, ratio: float, shift: float = 0.001, scale: float = 1000.0, float_bits: int = 32):
        return cls(solve_bandwidth(p, ratio, shift, scale, float_bits), shift, scale, float_bits)


def round_comm_time(participant_bits, params: CostModelParams) -> float:
    bits = [int(b) for b in participant_bits]
    if any(b < 0 for b in bits):
        raise ValueError("bit counts must be nonnegative")
    return sum(bits) / params.bandwidth_bits_per_s


def node_comp_time(tau: int, batch: int, params: CostModelParams, rng) -> float:
    """``tau * B * shift`` plus an exponential draw with mean ``tau * B / scale``.

    ``rng`` needs only an ``exponential(scale)`` method.
    """
    if tau < 1 or batch < 1:
        raise ValueError(f"tau and batch must be >= 1, got tau={tau}, batch={batch}")
    grads = tau * batch
    return grads * params.shift_s_per_grad + float(rng.exponential(grads / params.scale))


def round_comp_time(participant_times) -> float:
    times = list(participant_times)
    if not times:
        raise ValueError("round_comp_time needs at least one participant")
    return max(times)


def comm_comp_ratio(p: int, params: CostModelParams) -> float:
    """Upload time of ``p`` raw floats over the mean time of one gradient."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    return (p * params.float_bits / params.bandwidth_bits_per_s) / (params.shift_s_per_grad + 1 / params.scale)


def solve_bandwidth(p: int, target_ratio: float, shift: float, scale: float, float_bits: int = 32) -> float:
    if not target_ratio > 0:
        raise ValueError(f"target ratio must be > 0, got {target_ratio}")
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    return p * float_bits / (target_ratio * (shift + 1 / scale))


def expected_max_exponential(r: int, mean: float) -> float:
    """E[max of r i.i.d. exponentials] = H_r * mean."""
    return float(np.sum(1.0 / np.arange(1, r + 1))) * mean
