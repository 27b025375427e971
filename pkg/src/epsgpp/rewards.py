"""Lipschitz continuous reward functions R(z, s) = R1(z) + R2(z) + R3(s).

Each :class:`RewardSpec` carries the raw pieces (``r1``, ``r2``, ``r3``), the
Gaussian smoothings ``h_sigma = R1 * N(0, σ²)`` and ``g_sigma = R2 * N(0, σ²)``
and their Lipschitz constants.  All callables accept numpy arrays in ``u``/``z``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Mapping

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_hermitenorm

from .normal import norm_cdf

KINDS = ("ucb", "log_energy", "step", "gaussian", "mes", "custom")
DEFAULT_NODES = 64
# Gaussian mass beyond ±10σ is below 1e-23.
_TRUNCATION = 10.0

_REQUIRED = {
    "ucb": ("beta",),
    "log_energy": ("cut_in",),
    "step": ("a",),
    "gaussian": (),
    "mes": (),
    "custom": ("r1", "r2", "g_sigma", "ell1", "ell2"),
}
_OPTIONAL = {
    "log_energy": ("nodes",),
    "custom": ("r3", "h_sigma", "breakpoints", "nodes"),
}


class RewardNumericError(FloatingPointError):
    pass


def _zero(u, sigma=None):
    return np.zeros_like(np.asarray(u, dtype=float))


def _identity(u, sigma=None):
    return np.asarray(u, dtype=float)


def _no_r3(visited, var):
    return 0.0


@dataclass(frozen=True, eq=False)
class RewardSpec:
    kind: str
    params: Mapping[str, object]
    ell1: float
    ell2_of_sigma: Callable[[float], float]
    r1: Callable
    r2: Callable
    g_sigma: Callable
    h_sigma: Callable
    r3: Callable = _no_r3
    breakpoints: tuple[float, ...] = field(default=())

    def l1_plus_l2(self, sigma: float) -> float:
        return self.ell1 + self.ell2_of_sigma(sigma)


@lru_cache(maxsize=None)
def _hermite(nodes: int):
    x, w = roots_hermitenorm(nodes)
    return x, w / w.sum()


@lru_cache(maxsize=None)
def _legendre(nodes: int):
    return leggauss(nodes)


def h_sigma_numeric(r1, u, sigma: float, nodes: int = DEFAULT_NODES, breakpoints=()):
    """Quadrature for ∫ R1(u + σy) φ(y) dy.

    Without ``breakpoints`` this is ``nodes``-point Gauss–Hermite.  When R1 has
    kinks or jumps at known points, pass them as ``breakpoints``; the integral
    is then split there and each smooth piece of [-10, 10] gets its own
    ``nodes``-point Gauss–Legendre rule.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if nodes < 2:
        raise ValueError(f"need at least 2 nodes, got {nodes}")
    u_arr = np.asarray(u, dtype=float)
    flat = u_arr.reshape(-1)
    if not breakpoints:
        x, w = _hermite(nodes)
        vals = np.asarray(r1(flat[:, None] + sigma * x[None, :]), dtype=float)
        out = vals @ w
    else:
        x, w = _legendre(nodes)
        inner = np.clip(
            (np.asarray(breakpoints, dtype=float)[None, :] - flat[:, None]) / sigma,
            -_TRUNCATION,
            _TRUNCATION,
        )
        edges = np.sort(
            np.hstack([np.full((flat.size, 1), -_TRUNCATION), inner, np.full((flat.size, 1), _TRUNCATION)]),
            axis=1,
        )
        out = np.zeros(flat.size)
        for k in range(edges.shape[1] - 1):
            lo, hi = edges[:, k], edges[:, k + 1]
            half = 0.5 * (hi - lo)
            y = (0.5 * (hi + lo))[:, None] + half[:, None] * x[None, :]
            dens = np.exp(-0.5 * y * y) / np.sqrt(2 * np.pi)
            vals = np.asarray(r1(flat[:, None] + sigma * y), dtype=float)
            out += half * ((vals * dens) @ w)
    if not np.isfinite(out).all():
        raise RewardNumericError(f"non-finite h_sigma at u={u!r}, sigma={sigma}")
    out = out.reshape(u_arr.shape)
    return float(out) if out.ndim == 0 else out


def _check_params(kind: str, params: Mapping[str, object]) -> None:
    if kind not in _REQUIRED:
        raise ValueError(f"unknown reward kind {kind!r}; expected one of {KINDS}")
    missing = [k for k in _REQUIRED[kind] if k not in params]
    if missing:
        raise ValueError(f"reward {kind!r} missing parameter(s): {', '.join(missing)}")
    allowed = set(_REQUIRED[kind]) | set(_OPTIONAL.get(kind, ()))
    extra = sorted(set(params) - allowed)
    if extra:
        raise ValueError(f"reward {kind!r} got unknown parameter(s): {', '.join(extra)}")


def _assert_converged(r1, breakpoints, nodes: int, probes) -> None:
    for u, sigma in probes:
        a = h_sigma_numeric(r1, u, sigma, nodes, breakpoints)
        b = h_sigma_numeric(r1, u, sigma, 2 * nodes, breakpoints)
        if abs(a - b) >= 1e-8:
            raise ValueError(
                f"h_sigma quadrature with {nodes} nodes not converged at "
                f"u={u}, sigma={sigma} (doubling changed it by {abs(a - b):.2e})"
            )


def make_reward(kind: str, params: Mapping[str, object] | None = None) -> RewardSpec:
    params = dict(params or {})
    _check_params(kind, params)

    if kind == "ucb":
        beta = float(params["beta"])
        if beta < 0:
            raise ValueError("ucb beta must be >= 0")
        return RewardSpec(
            kind, params, 0.0, lambda s: 1.0, _zero, _identity, _identity, _zero,
            r3=lambda visited, var: beta * np.sqrt(var),
        )

    if kind == "mes":
        return RewardSpec(
            kind, params, 0.0, lambda s: 1.0, _zero, _identity, _identity, _zero,
            r3=lambda visited, var: 0.5 * np.log(2 * np.pi * np.e * var),
        )

    if kind == "step":
        a = float(params["a"])
        return RewardSpec(
            kind, params, 0.0,
            lambda s: 1.0 / (np.sqrt(2 * np.pi) * s),
            _zero,
            lambda z: (np.asarray(z, dtype=float) > a).astype(float),
            lambda u, s: 1.0 - norm_cdf((a - np.asarray(u, dtype=float)) / s),
            _zero,
        )

    if kind == "gaussian":
        def g(u, s):
            v = 1.0 + s * s
            u = np.asarray(u, dtype=float)
            return np.exp(-u * u / (2 * v)) / np.sqrt(2 * np.pi * v)

        return RewardSpec(
            kind, params, 0.0,
            lambda s: np.exp(-0.5) / (np.sqrt(2 * np.pi) * (1.0 + s * s)),
            _zero,
            lambda z: np.exp(-0.5 * np.asarray(z, dtype=float) ** 2) / np.sqrt(2 * np.pi),
            g,
            _zero,
        )

    if kind == "log_energy":
        cut = float(params["cut_in"])
        nodes = int(params.get("nodes", DEFAULT_NODES))
        if not cut > 0:
            raise ValueError("log_energy cut_in must be > 0")

        def r1(z):
            z = np.asarray(z, dtype=float)
            return np.where(z > cut, np.log(np.maximum(z, cut) / cut), 0.0)

        bps = (cut,)
        _assert_converged(r1, bps, nodes, [(cut, 0.05), (cut + 1.0, 1.0), (cut - 1.0, 0.5)])
        return RewardSpec(
            kind, params, 1.0 / cut, lambda s: 0.0, r1, _zero, _zero,
            lambda u, s: h_sigma_numeric(r1, u, s, nodes, bps),
            breakpoints=bps,
        )

    # custom
    r1, r2, g = params["r1"], params["r2"], params["g_sigma"]
    ell1 = float(params["ell1"])
    ell2 = params["ell2"]
    ell2_fn = ell2 if callable(ell2) else (lambda s, c=float(ell2): c)
    bps = tuple(float(b) for b in params.get("breakpoints", ()))
    nodes = int(params.get("nodes", DEFAULT_NODES))
    h = params.get("h_sigma") or (lambda u, s: h_sigma_numeric(r1, u, s, nodes, bps))
    spec = RewardSpec(
        kind, params, ell1, ell2_fn, r1, r2, g, h,
        r3=params.get("r3") or _no_r3, breakpoints=bps,
    )
    _warn_if_not_lipschitz(spec)
    return spec


def _warn_if_not_lipschitz(spec: RewardSpec, sigmas=(0.1, 0.5, 1.0, 2.0)) -> None:
    # R2 only needs to be Lipschitz after smoothing; this can only be sampled.
    u = np.linspace(-10.0, 10.0, 401)
    for s in sigmas:
        for name, fn, const in (
            ("g_sigma", spec.g_sigma, spec.ell2_of_sigma(s)),
            ("h_sigma", spec.h_sigma, spec.ell1),
        ):
            slope = np.max(np.abs(np.diff(np.asarray(fn(u, s), dtype=float))) / np.diff(u))
            if slope > const * (1 + 1e-6) + 1e-12:
                warnings.warn(
                    f"custom reward: {name} slope {slope:.4g} exceeds its Lipschitz "
                    f"constant {const:.4g} at sigma={s}",
                    stacklevel=3,
                )


def smoothed_reward(spec: RewardSpec, mean, sigma: float, visited=()):
    """(h_σ + g_σ)(mean) + R3 for a scalar or array of predictive means."""
    return spec.h_sigma(mean, sigma) + spec.g_sigma(mean, sigma) + spec.r3(visited, sigma * sigma)


def expected_immediate_reward(spec: RewardSpec, post, visited=()) -> float:
    if not post.variance > 0:
        raise ValueError(f"posterior variance must be > 0, got {post.variance}")
    out = smoothed_reward(spec, post.mean, float(np.sqrt(post.variance)), visited)
    if not np.isfinite(out):
        raise RewardNumericError(f"non-finite expected reward for {spec.kind}")
    return float(out)


def realized_reward(spec: RewardSpec, z: float, variance: float, visited=()) -> float:
    """R(z, s) for an actually observed measurement; R3 sees the predictive
    variance the location had before it was observed."""
    return float(spec.r1(z) + spec.r2(z) + spec.r3(visited, variance))
