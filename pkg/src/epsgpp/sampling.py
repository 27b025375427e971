"""Deterministic partitions of a Gaussian predictive distribution.

The real line is cut into a left tail, ``n - 2`` equal-width cells covering
``mean ± τσ`` and a right tail.  Each cell contributes one sample (tail
boundary or cell centre) weighted by its probability mass.  ``Λ(n, τ)·σ·L``
bounds the error of the resulting weighted sum for any L-Lipschitz integrand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .normal import norm_cdf

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
TAU_SEARCH_MAX = 10.0


@dataclass(frozen=True, eq=False)
class Partition:
    samples: np.ndarray
    weights: np.ndarray
    n: int
    tau: float

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class BudgetChoice:
    tau: float
    n: int
    lam: float


def _validate(n: int, tau: float) -> None:
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    if tau > 0 and n <= 2:
        raise ValueError(f"tau > 0 requires n > 2 (got n={n}, tau={tau})")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")


@lru_cache(maxsize=4096)
def standard_partition(n: int, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Samples and weights for mean 0, σ = 1 (read-only arrays)."""
    _validate(n, tau)
    if tau == 0:
        z, w = np.zeros(1), np.ones(1)
    else:
        inner = n - 2
        i = np.arange(1, inner + 1)
        z = np.empty(n)
        z[0], z[-1] = -tau, tau
        z[1:-1] = -tau + (i - 0.5) / inner * 2 * tau
        w = np.empty(n)
        w[0] = w[-1] = norm_cdf(-tau)
        # Mirror the upper half so the weights are exactly symmetric.
        w[1:-1] = norm_cdf(2 * i * tau / inner - tau) - norm_cdf(2 * (i - 1) * tau / inner - tau)
        half = inner // 2
        if half:
            w[-1 - half:-1] = w[1:1 + half][::-1]
            z[-1 - half:-1] = -z[1:1 + half][::-1]
        if inner % 2:
            z[1 + half] = 0.0
    z.setflags(write=False)
    w.setflags(write=False)
    return z, w


def build_partition(mean: float, sigma: float, n: int, tau: float) -> Partition:
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    z, w = standard_partition(int(n), float(tau))
    return Partition(mean + sigma * z, w.copy(), int(n), float(tau))


def kappa(tau: float) -> float:
    """Tail part of Λ."""
    return SQRT_2_OVER_PI * math.exp(-0.5 * tau * tau) - 2 * tau * norm_cdf(-tau)


def eta(n: int, tau: float) -> float:
    """Interior part of Λ."""
    return 2 * tau * (0.5 - norm_cdf(-tau)) / (n - 2)


def lambda_coefficient(n: int, tau: float) -> float:
    """Λ(n, τ).  With τ = 0 every n collapses to one sample at the mean, whose
    coefficient is √(2/π)."""
    _validate(n, tau)
    if tau == 0:
        return SQRT_2_OVER_PI
    return kappa(tau) + eta(n, tau)


def _satisfies(choice_lambda_coeff: float, sigma: float, l1_plus_L: float, lam: float) -> bool:
    return choice_lambda_coeff * sigma * l1_plus_L <= lam


def feasible_tau_n(lam: float, sigma: float, l1_plus_L: float) -> BudgetChoice:
    """Closed-form (τ, n) with Λ(n, τ)·σ·(ℓ1 + L) ≤ λ."""
    if not lam > 0 or not sigma > 0 or l1_plus_L < 0:
        raise ValueError(f"need lam > 0, sigma > 0, l1_plus_L >= 0 (got {lam}, {sigma}, {l1_plus_L})")
    if l1_plus_L == 0:
        return BudgetChoice(0.0, 1, lam)
    ratio = lam / (sigma * l1_plus_L)
    if ratio >= 2 * SQRT_2_OVER_PI:
        return BudgetChoice(0.0, 2, lam)
    tau = math.sqrt(-2.0 * math.log(math.sqrt(math.pi / 2) * ratio / 2))
    n = math.ceil(2 + tau * math.sqrt(math.pi / 2) * math.exp(0.5 * tau * tau))
    if n <= 2:
        n = 3
    choice = BudgetChoice(tau, n, lam)
    if not _satisfies(lambda_coefficient(n, tau), sigma, l1_plus_L, lam):
        raise ArithmeticError(f"analytic choice {choice} violates the partition bound")
    return choice


def _golden_min(f, lo: float, hi: float, tol: float = 1e-6) -> tuple[float, float]:
    invphi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = (a + b) / 2
    return x, f(x)


def _lambda_any(n: int, tau: float) -> float:
    # κ + η is continuous at τ = 0 with value √(2/π).
    return kappa(tau) + eta(n, tau)


@lru_cache(maxsize=None)
def min_lambda(n: int) -> tuple[float, float]:
    """(argmin τ, min Λ) over τ ∈ [0, 10] for a fixed n > 2."""
    tau, val = _golden_min(lambda t: _lambda_any(n, t), 0.0, TAU_SEARCH_MAX)
    if tau <= 0 or val >= SQRT_2_OVER_PI:
        return 0.0, SQRT_2_OVER_PI
    return tau, lambda_coefficient(n, tau)


def feasible_n_capped(lam: float, sigma: float, l1_plus_L: float, n_max: int) -> BudgetChoice | None:
    """Smallest n < n_max whose best τ satisfies the partition bound, or None."""
    if n_max < 2:
        raise ValueError(f"n_max must be >= 2, got {n_max}")
    if _satisfies(lambda_coefficient(2, 0.0), sigma, l1_plus_L, lam):
        return BudgetChoice(0.0, 2, lam)
    for n in range(3, n_max):
        tau, _ = min_lambda(n)
        if tau > 0 and _satisfies(lambda_coefficient(n, tau), sigma, l1_plus_L, lam):
            return BudgetChoice(tau, n, lam)
    return None
