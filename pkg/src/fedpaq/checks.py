"""Fast property checks runnable from the command line (``fedpaq check``).

These are smoke-level versions of the statistical properties the test suite
verifies at full size.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import stats

from . import cost_model, quantizer
from .data import gen_synthetic_logreg, gen_synthetic_multiclass
from .fed_core import sample_participants
from .objectives import MLP, LogisticL2
from .rng import stream


def check_quantizer_unbiased(seed=0):
    rng = stream(seed, 7, 1)
    x = rng.standard_normal(8)
    draws = 40_000
    worst = 0.0
    for s in (1, 4):
        samples = quantizer.sample_dequantized(x, s, rng, draws)
        se = samples.std(axis=0, ddof=1) / math.sqrt(draws)
        z = np.abs(samples.mean(axis=0) - x) / np.where(se > 0, se, np.inf)
        worst = max(worst, float(z.max()))
    # 16 coordinates: a 4-SE cap keeps the family-wise false alarm rate tiny
    return worst <= 4.0, f"max |bias|/SE = {worst:.2f}"


def check_quantizer_variance(seed=0):
    rng = stream(seed, 7, 2)
    ok, worst = True, 0.0
    for p, s in itertools.product((2, 16), (1, 4)):
        ratio = quantizer.estimate_variance_ratio(s, p, 20_000, rng, vectors=4)
        bound = quantizer.default_q(p, s)
        worst = max(worst, ratio / bound)
        ok &= ratio <= 1.05 * bound
    return ok, f"max ratio/bound = {worst:.3f}"


def check_codec(seed=0):
    rng = stream(seed, 7, 3)
    for _ in range(200):
        p, s = int(rng.integers(1, 50)), int(rng.integers(1, 40))
        q = quantizer.quantize(rng.standard_normal(p), s, rng, float_bits=32)
        buf = quantizer.encode(q, 32)
        if quantizer.decode(buf, 32) != q or len(buf) != (quantizer.encoded_bits(p, s, 32) + 7) // 8:
            return False, f"round trip failed at p={p}, s={s}"
    return True, "200 random vectors round-tripped"


def _fd_error(obj, x, data, h=1e-6):
    g = obj.grad(x, data)
    fd = np.array([(obj.loss(x + h * e, data) - obj.loss(x - h * e, data)) / (2 * h) for e in np.eye(x.size)])
    return float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))


def check_gradients(seed=0):
    data, _, _ = gen_synthetic_logreg(200, 5, 0.1, seed)
    rng = stream(seed, 7, 4)
    err = _fd_error(LogisticL2(0.1), rng.standard_normal(5), data)
    mdata = gen_synthetic_multiclass(100, 4, 3, seed)
    net = MLP((4, 6, 3))
    err = max(err, _fd_error(net, net.init_params(mdata, rng), mdata))
    return err <= 1e-5, f"max relative FD error = {err:.2e}"


def check_sampling(seed=0):
    rng = stream(seed, 7, 5)
    subsets = list(itertools.combinations(range(4), 2))
    counts = dict.fromkeys(subsets, 0)
    for _ in range(12_000):
        counts[tuple(sample_participants(4, 2, rng).tolist())] += 1
    pval = stats.chisquare(list(counts.values())).pvalue
    return pval > 0.01, f"chi-square p = {pval:.3f}"


def check_cost(seed=0):
    params = cost_model.CostModelParams(1e6, 0.001, 1000.0)
    rng = stream(seed, 7, 6)
    mean = np.mean([cost_model.node_comp_time(1, 1, params, rng) for _ in range(20_000)])
    bw = cost_model.solve_bandwidth(100, 100.0, 0.001, 1000.0)
    back = cost_model.comm_comp_ratio(100, cost_model.CostModelParams(bw, 0.001, 1000.0))
    ok = abs(mean - 0.002) <= 0.02 * 0.002 and abs(back - 100) <= 1e-12 * 100
    return ok, f"mean comp time {mean:.6f} s, ratio round trip {back!r}"


CHECKS = {
    "quantizer-unbiased": check_quantizer_unbiased,
    "quantizer-variance": check_quantizer_variance,
    "codec-roundtrip": check_codec,
    "gradients": check_gradients,
    "sampling-uniform": check_sampling,
    "cost-model": check_cost,
}


def run_checks(seed=0, out=print) -> bool:
    all_ok = True
    for name, fn in CHECKS.items():
        ok, detail = fn(seed)
        all_ok &= ok
        out(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return all_ok
