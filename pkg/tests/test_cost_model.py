import math

import numpy as np
import pytest

from fedpaq import cost_model as cm
from fedpaq.quantizer import Identity, payload_bits
from fedpaq.rng import stream


class ZeroQuantile:
    def exponential(self, scale):
        return 0.0


def params(bw=1e6, shift=0.001, scale=1000.0):
    return cm.CostModelParams(bw, shift, scale)


def test_comm_time():
    assert cm.round_comm_time([], params()) == 0.0
    p = params(bw=12345.0)
    assert cm.round_comm_time([Identity().bits(100, 32)] * 50, p) == 50 * 3200 / 12345.0
    bits = payload_bits(1, 1, 32) + 64
    assert cm.round_comm_time([bits], p) == 98 / 12345.0
    with pytest.raises(ValueError):
        cm.round_comm_time([-1], p)


def test_comp_time_mean():
    g = stream(0, 7, 11)
    draws = [cm.node_comp_time(1, 1, params(), g) for _ in range(100_000)]
    assert abs(np.mean(draws) - 0.002) <= 0.01 * 0.002


def test_comp_time_zero_quantile_is_the_shift():
    assert cm.node_comp_time(3, 7, params(), ZeroQuantile()) == 3 * 7 * 0.001


def test_doubling_batch_doubles_both_parts():
    g1, g2 = stream(1, 7, 12), stream(1, 7, 13)
    a = np.mean([cm.node_comp_time(2, 5, params(), g1) for _ in range(50_000)])
    b = np.mean([cm.node_comp_time(2, 10, params(), g2) for _ in range(50_000)])
    assert b / a == pytest.approx(2.0, rel=0.02)
    assert cm.node_comp_time(2, 10, params(), ZeroQuantile()) == 2 * cm.node_comp_time(2, 5, params(), ZeroQuantile())


def test_round_comp_time_is_max():
    assert cm.round_comp_time([0.7]) == 0.7
    assert cm.round_comp_time((1.0, 2.5, 0.3)) == 2.5
    with pytest.raises(ValueError):
        cm.round_comp_time([])


def test_expected_max_of_exponentials():
    g = np.random.default_rng(0)
    mean = 0.01
    draws = g.exponential(mean, size=(100_000, 10)).max(axis=1)
    h10 = sum(1 / k for k in range(1, 11))
    assert cm.expected_max_exponential(10, mean) == pytest.approx(h10 * mean, rel=1e-14)
    assert abs(draws.mean() - h10 * mean) <= 4 * draws.std() / math.sqrt(len(draws))


def test_ratio_settings():
    for target in (100.0, 1000.0):
        p = cm.CostModelParams.from_ratio(784, target)
        assert cm.comm_comp_ratio(784, p) == pytest.approx(target, rel=1e-12)
    p = cm.CostModelParams(3200 / 0.002, 0.001, 1000.0)
    assert cm.comm_comp_ratio(100, p) == pytest.approx(1.0, rel=1e-15)


def test_solve_bandwidth():
    assert cm.solve_bandwidth(100, 100.0, 0.001, 1000.0) == pytest.approx(16000.0, rel=1e-15)
    assert cm.solve_bandwidth(100, 1000.0, 0.001, 1000.0) * 2 == pytest.approx(
        cm.solve_bandwidth(100, 500.0, 0.001, 1000.0), rel=1e-15
    )
    assert cm.solve_bandwidth(9, 2000.0, 0.003, 50.0) * 2 == pytest.approx(
        cm.solve_bandwidth(9, 1000.0, 0.003, 50.0), rel=1e-15
    )
    with pytest.raises(ValueError):
        cm.solve_bandwidth(100, 0.0, 0.001, 1000.0)


def test_params_validation():
    with pytest.raises(ValueError):
        cm.CostModelParams(0.0)
    with pytest.raises(ValueError):
        cm.CostModelParams(1.0, -1.0)
    with pytest.raises(ValueError):
        cm.CostModelParams(1.0, 0.0, 0.0)
