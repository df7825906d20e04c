"""Convergence-bound constants and right-hand sides for the strongly convex
and non-convex guarantees of periodic-averaging quantized federated SGD.

``sigma2`` everywhere is the variance of one stochastic gradient as the
nodes compute it; for minibatch gradients pass the per-sample variance
divided by the batch size.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass


def _check_nr(n: int, r: int) -> None:
    if n < 2:
        raise ValueError(f"n must be >= 2 (the constants divide by n - 1), got {n}")
    if not 1 <= r <= n:
        raise ValueError(f"need 1 <= r <= n, got r={r}, n={n}")


def _sampling_term(n: int, r: int) -> float:
    return (n - r) / (r * (n - 1))


def thm1_constants(q: float, n: int, r: int, L: float, mu: float, sigma2: float):
    """Return ``(B1, C1, C2, C3)``."""
    _check_nr(n, r)
    if mu <= 0:
        raise ValueError(f"mu must be > 0, got {mu}")
    part = _sampling_term(n, r)
    b1 = 2 * L**2 * (q / n + part * 4 * (1 + q))
    hetero = 8 * (1 + q) * n * part
    c1 = 16 * sigma2 / (mu**2 * n) * (1 + 2 * q + hetero)
    c2 = 16 * math.e * L**2 * sigma2 / (mu**2 * n)
    c3 = 256 * math.e * L**2 * sigma2 / (mu**4 * n) * (n + 2 * q + hetero)
    return b1, c1, c2, c3


def thm1_k0(L: float, mu: float, B1: float, n: int, tau: int) -> int:
    """Smallest integer k0 >= 4 max{L/mu, 4(B1/mu^2 + 1), 1/tau, 4n/(mu^2 tau)}."""
    if mu <= 0:
        raise ValueError(f"mu must be > 0, got {mu}")
    bound = 4 * max(L / mu, 4 * (B1 / mu**2 + 1), 1 / tau, 4 * n / (mu**2 * tau))
    # guard against 16.000000000000004-style rounding pushing the ceiling up
    k0 = math.ceil(bound)
    if k0 - bound > 1 - 1e-9:
        k0 -= 1
    return max(k0, 1)


def thm1_bound(k: int, k0: int, tau: int, constants, initial_gap: float) -> float:
    """Upper bound on ``E||x_k - x*||^2`` for ``k >= k0``.

    ``constants`` is ``(B1, C1, C2, C3)`` or a :class:`TheoremConstants`.
    """
    if k < k0:
        raise ValueError(f"bound only holds for k >= k0 (k={k}, k0={k0})")
    if isinstance(constants, TheoremConstants):
        c1, c2, c3 = constants.C1, constants.C2, constants.C3
    else:
        _, c1, c2, c3 = constants
    kt = k * tau + 1
    return (
        (k0 * tau + 1) ** 2 / kt**2 * initial_gap
        + c1 * tau / kt
        + c2 * (tau - 1) ** 2 / kt
        + c3 * (tau - 1) / kt**2
    )


def thm2_constants(q: float, n: int, r: int, sigma2: float):
    """Return ``(B2, N1, N2)``."""
    _check_nr(n, r)
    part = _sampling_term(n, r)
    b2 = q / n + 4 * part * (1 + q)
    n1 = (1 + q) * sigma2 / n * (1 + n * part)
    n2 = sigma2 / n * (n + 1)
    return b2, n1, n2


def thm2_tau_max(T: int, B2: float) -> float:
    """Largest period length the non-convex guarantee admits at horizon ``T``."""
    if T < 2:
        raise ValueError(f"the non-convex guarantee needs T >= 2, got {T}")
    return (math.sqrt(B2**2 + 0.8) - B2) / 8 * math.sqrt(T)


def thm2_bound(T: int, tau: int, L: float, f0_gap: float, N1: float, N2: float) -> float:
    """Upper bound on the run-averaged ``E||grad f(xbar_{k,t})||^2``."""
    if T < 2:
        raise ValueError(f"the non-convex guarantee needs T >= 2, got {T}")
    root = math.sqrt(T)
    return 2 * L * f0_gap / root + N1 / root + N2 * (tau - 1) / T


@dataclass(frozen=True)
class TheoremConstants:
    q: float
    n: int
    r: int
    L: float
    sigma2: float
    tau: int
    T: int
    mu: float | None = None
    B1: float | None = None
    C1: float | None = None
    C2: float | None = None
    C3: float | None = None
    k0: int | None = None
    B2: float | None = None
    N1: float | None = None
    N2: float | None = None
    tau_max: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(q: float, n: int, r: int, L: float, sigma2: float, tau: int, T: int, mu: float | None = None) -> TheoremConstants:
    """All constants for one configuration; the strongly convex ones only when
    ``mu > 0`` and the ``T``-dependent ones only when ``T >= 2``."""
    b2, n1, n2 = thm2_constants(q, n, r, sigma2)
    extra = {}
    if mu is not None and mu > 0:
        b1, c1, c2, c3 = thm1_constants(q, n, r, L, mu, sigma2)
        extra = dict(B1=b1, C1=c1, C2=c2, C3=c3, k0=thm1_k0(L, mu, b1, n, tau))
    tau_max = thm2_tau_max(T, b2) if T >= 2 else None
    return TheoremConstants(
        q=q, n=n, r=r, L=L, sigma2=sigma2, tau=tau, T=T, mu=mu,
        B2=b2, N1=n1, N2=n2, tau_max=tau_max, **extra,
    )
