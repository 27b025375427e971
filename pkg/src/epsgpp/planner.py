"""ε-optimal GP planning by deterministic sampling, plus quadrature oracles.

The planner recursion is depth-first over actions.  At each action the
children of the partition are evaluated together as one batch of measurement
histories, so a whole level of sample measurements costs one numpy pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from numpy.polynomial.legendre import leggauss

from .gp import GpHyperparams, History, Location, extend_history, kernel_matrix, posterior
from .lipschitz import ActionModel, LipschitzTable
from .normal import norm_pdf
from .rewards import RewardSpec
from .sampling import BudgetChoice, feasible_n_capped, feasible_tau_n, standard_partition

ORACLE_LIMIT = 10**8
TIE_RTOL = 1e-12


class BudgetInfeasible(RuntimeError):
    pass


class OracleBudgetError(ValueError):
    pass


@dataclass(frozen=True)
class BudgetMode:
    """How (τ, n) is picked at each node: ``analytic`` closed form, ``capped``
    numeric search below ``n_max``, or a ``fixed`` pair."""

    kind: str = "analytic"
    n_max: int | None = None
    tau: float | None = None
    n: int | None = None

    def __post_init__(self):
        if self.kind == "capped":
            if self.n_max is None or self.n_max < 2:
                raise ValueError("capped budget needs n_max >= 2")
        elif self.kind == "fixed":
            if self.tau is None or self.n is None:
                raise ValueError("fixed budget needs tau and n")
            if self.tau < 0 or self.n < 1 or (self.tau > 0 and self.n <= 2):
                raise ValueError(f"invalid fixed partition (tau={self.tau}, n={self.n})")
        elif self.kind != "analytic":
            raise ValueError(f"unknown budget mode {self.kind!r}")

    @classmethod
    def analytic(cls) -> "BudgetMode":
        return cls("analytic")

    @classmethod
    def capped(cls, n_max: int) -> "BudgetMode":
        return cls("capped", n_max=n_max)

    @classmethod
    def fixed(cls, tau: float, n: int) -> "BudgetMode":
        return cls("fixed", tau=float(tau), n=int(n))

    def choose(self, lam: float, sigma: float, l1_plus_L: float) -> BudgetChoice:
        if self.kind == "fixed":
            return BudgetChoice(self.tau, self.n, lam)
        if self.kind == "analytic":
            return feasible_tau_n(lam, sigma, l1_plus_L)
        choice = feasible_n_capped(lam, sigma, l1_plus_L, self.n_max)
        if choice is None:
            raise BudgetInfeasible(
                f"no n < {self.n_max} satisfies lambda={lam:.4g} at sigma={sigma:.4g}, "
                f"l1+L={l1_plus_L:.4g}"
            )
        return choice


@dataclass(frozen=True)
class PlannerConfig:
    H: int
    epsilon: float = 1.0
    lam: float | None = None
    budget: BudgetMode = field(default_factory=BudgetMode)

    def __post_init__(self):
        if self.H < 1:
            raise ValueError(f"H must be >= 1, got {self.H}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.lam is None:
            object.__setattr__(self, "lam", self.epsilon / (self.H * (self.H + 1)))
        elif not self.lam > 0:
            raise ValueError(f"lambda must be > 0, got {self.lam}")


@dataclass(frozen=True, eq=False)
class PlanResult:
    action: Location
    value: float
    per_action_q: Mapping[Location, float]
    nodes_expanded: int
    n_range: tuple[int, int] = (1, 1)
    tau_range: tuple[float, float] = (0.0, 0.0)


def argmax_lowest(values: Mapping[int, float]) -> int:
    """Key with the largest value; near-ties (relative 1e-12) go to the lowest key."""
    best = max(values.values())
    tol = TIE_RTOL * max(1.0, abs(best))
    return min(k for k, v in values.items() if v >= best - tol)


def _argmax_rows(q: np.ndarray, actions: tuple[int, ...]) -> np.ndarray:
    """Row-wise :func:`argmax_lowest` over columns labelled by ``actions``."""
    order = np.argsort(actions, kind="stable")
    qs = q[:, order]
    best = qs.max(axis=1, keepdims=True)
    tol = TIE_RTOL * np.maximum(1.0, np.abs(best))
    first = np.argmax(qs >= best - tol, axis=1)
    return np.asarray(actions)[order][first]


class EpsilonGpp:
    """ε-GPP over the paths tabulated in a :class:`LipschitzTable`.

    ``history`` must be the table's prior data, optionally extended along a
    tabulated path; the extension is the planning root.
    """

    def __init__(
        self,
        table: LipschitzTable,
        spec: RewardSpec,
        hyper: GpHyperparams,
        action_model: ActionModel,
        lam: float,
        budget: BudgetMode | None = None,
    ):
        self.table = table
        self.spec = spec
        self.hyper = hyper
        self.actions = action_model
        self.lam = lam
        self.budget = budget or BudgetMode()
        self._choices: dict[tuple[int, ...], BudgetChoice] = {}
        self.root_indices: tuple[int, ...] = ()
        self.nodes = 0

    @property
    def H(self) -> int:
        return self.table.horizon

    def choice(self, path: tuple[int, ...]) -> BudgetChoice:
        """(τ, n) for the predictive distribution of ``path[-1]`` given its prefix."""
        c = self._choices.get(path)
        if c is None:
            st = self.table.stats(path)
            c = self.budget.choose(self.lam, st.sigma, self.spec.ell1 + st.L)
            self._choices[path] = c
        return c

    def split(self, history: History) -> tuple[tuple[int, ...], np.ndarray]:
        m0 = self.table.root_len
        self.root_indices = history.indices[:m0]
        path = history.indices[m0:]
        if path and path not in self.table:
            raise KeyError(f"history path {path} not covered by the Lipschitz table")
        return path, history.z

    def last(self, path) -> int:
        return path[-1] if path else self.table.start

    def stage(self, path: tuple[int, ...], s: int, Z: np.ndarray):
        """Predictive means, σ, immediate smoothed reward and partition for
        moving to ``s`` from each row of ``Z``."""
        p = path + (s,)
        st = self.table.stats(p)
        sigma = st.sigma
        prior = self.hyper.prior_mean
        mu = prior + (Z - prior) @ st.gain
        r = self.spec.g_sigma(mu, sigma) + self.spec.r3(self.root_indices + p, st.variance)
        ch = self.choice(p)
        u, w = standard_partition(ch.n, ch.tau)
        return p, mu, sigma, r, u, w

    def q_batch(self, t: int, path: tuple[int, ...], Z: np.ndarray) -> tuple[tuple[int, ...], np.ndarray]:
        """Q^ε for every action at stage ``t``; returns (actions, (B, |A|) array)."""
        acts = self.actions.actions(self.last(path))
        q = np.column_stack([self._q(t, path, s, Z) for s in acts])
        return acts, q

    def value_batch(self, t: int, path: tuple[int, ...], Z: np.ndarray) -> np.ndarray:
        if t == self.H:
            return np.zeros(len(Z))
        _, q = self.q_batch(t, path, Z)
        return q.max(axis=1)

    def _q(self, t, path, s, Z):
        p, mu, sigma, r, u, w = self.stage(path, s, Z)
        samples = mu[:, None] + sigma * u[None, :]
        B, n = samples.shape
        self.nodes += B * n
        tail = self.spec.r1(samples)
        if t + 1 < self.H:
            Zn = np.hstack([np.repeat(Z, n, axis=0), samples.reshape(-1, 1)])
            tail = tail + self.value_batch(t + 1, p, Zn).reshape(B, n)
        return r + tail @ w

    def used_choices(self) -> list[BudgetChoice]:
        return list(self._choices.values())


def value_epsilon(history, t, cfg, table, spec, hyper, action_model) -> float:
    """V_t^ε at ``history`` (prior data plus ``t`` planned steps)."""
    planner = EpsilonGpp(table, spec, hyper, action_model, cfg.lam, cfg.budget)
    path, z = planner.split(history)
    if len(path) != t:
        raise ValueError(f"history is {len(path)} steps past the prior data, expected t={t}")
    return float(planner.value_batch(t, path, z[None, :])[0])


def plan(history, cfg, table, spec, hyper, action_model) -> PlanResult:
    planner = EpsilonGpp(table, spec, hyper, action_model, cfg.lam, cfg.budget)
    path, z = planner.split(history)
    t = len(path)
    if t >= planner.H:
        raise ValueError("no planning stages left")
    acts, q = planner.q_batch(t, path, z[None, :])
    qs = {s: float(v) for s, v in zip(acts, q[0])}
    best = argmax_lowest(qs)
    dom = action_model.domain
    choices = planner.used_choices()
    ns = [c.n if c.tau > 0 else 1 for c in choices]
    taus = [c.tau for c in choices]
    return PlanResult(
        action=dom.location(best),
        value=qs[best],
        per_action_q={dom.location(s): v for s, v in qs.items()},
        nodes_expanded=planner.nodes,
        n_range=(min(ns), max(ns)),
        tau_range=(min(taus), max(taus)),
    )


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def gauss_legendre_normal(nodes: int, width: float = 8.0) -> tuple[np.ndarray, np.ndarray]:
    """Standardized nodes/weights for E[f(Z)], Z ~ N(0, 1), truncated to ±width."""
    x, w = leggauss(nodes)
    y = width * x
    return y, width * w * norm_pdf(y)


class _DenseGp:
    """Posterior gains by dense solves; deliberately shares no code with the
    Cholesky path used by the planner."""

    def __init__(self, hyper: GpHyperparams, coords_all: np.ndarray):
        self.hyper = hyper
        self.coords_all = coords_all
        self._cache: dict = {}

    def gain(self, idx: tuple[int, ...], s: int) -> tuple[np.ndarray, float]:
        hit = self._cache.get((idx, s))
        if hit is not None:
            return hit
        hy = self.hyper
        kss = hy.signal_var + hy.noise_var
        if not idx:
            out = (np.empty(0), kss)
        else:
            X = self.coords_all[list(idx)]
            G = kernel_matrix(X, X, hy) + hy.noise_var * np.eye(len(X))
            k = kernel_matrix(X, self.coords_all[s][None, :], hy)[:, 0]
            g = np.linalg.solve(G, k)
            out = (g, float(kss - k @ g))
        self._cache[(idx, s)] = out
        return out


class _Quadrature:
    """Expectations over the next measurement, split where the selected action changes.

    The integrand at every stage is smooth except where the maximizing (or
    policy-chosen) action switches. Switches are bracketed on a uniform coarse
    grid, located by bisection and then each smooth panel gets its own
    Gauss–Legendre rule, so the result converges spectrally in ``quad_nodes``.
    """

    WIDTH = 8.0
    BISECT = 48
    TIE = 1e-12

    def __init__(self, history, H, spec, hyper, action_model, quad_nodes, start=None):
        self.H = H
        self.spec = spec
        self.hyper = hyper
        self.actions = action_model
        self.coords_all = action_model.domain.coords
        self.gp = _DenseGp(hyper, self.coords_all)
        self.y_coarse = np.linspace(-self.WIDTH, self.WIDTH, max(16, quad_nodes // 4))
        self.x_panel, self.w_panel = leggauss(max(8, quad_nodes // 20))
        self.root_idx = history.indices
        self.start = start if start is not None else history.locations[-1].index

    def immediate(self, idx, s, Z):
        g, v = self.gp.gain(idx, s)
        sigma = math.sqrt(v)
        prior = self.hyper.prior_mean
        mu = prior + (Z - prior) @ g if len(g) else np.full(len(Z), prior)
        imm = self.spec.h_sigma(mu, sigma) + self.spec.g_sigma(mu, sigma) + self.spec.r3(idx + (s,), v)
        return mu, sigma, np.broadcast_to(imm, mu.shape)

    @staticmethod
    def _at(Z, mu, sigma, Y):
        """Histories extended by μ + σY; ``Y`` is (rows, points)."""
        P = Y.shape[1]
        return np.hstack([np.repeat(Z, P, axis=0), (mu[:, None] + sigma * Y).reshape(-1, 1)])

    def _expect(self, Z, mu, sigma, evaluate):
        """E_Y f(Z, μ + σY) for Y ~ N(0, 1) truncated to ±WIDTH.

        ``evaluate(Zx, need_values)`` returns (values or None, branch keys).
        """
        R, W, yc = len(Z), self.WIDTH, self.y_coarse
        _, keys = evaluate(self._at(Z, mu, sigma, np.broadcast_to(yc, (R, len(yc)))), False)
        keys = np.asarray(keys).reshape(R, -1)
        flips = keys[:, 1:] != keys[:, :-1]
        K = int(flips.sum(axis=1).max()) if R else 0
        edges = np.full((R, K + 2), W)
        edges[:, 0] = -W
        if K:
            rows, cols = np.nonzero(flips)
            slot = np.arange(len(rows)) - np.searchsorted(rows, rows)
            lo, hi, klo = yc[cols], yc[cols + 1], keys[rows, cols]
            for _ in range(self.BISECT):
                mid = 0.5 * (lo + hi)
                _, km = evaluate(self._at(Z[rows], mu[rows], sigma, mid[:, None]), False)
                same = np.asarray(km) == klo
                lo, hi = np.where(same, mid, lo), np.where(same, hi, mid)
            edges[rows, slot + 1] = 0.5 * (lo + hi)
        a, b = edges[:, :-1, None], edges[:, 1:, None]
        half = 0.5 * (b - a)
        Y = 0.5 * (a + b) + half * self.x_panel
        wts = (half * self.w_panel * norm_pdf(Y)).reshape(R, -1)
        vals, _ = evaluate(self._at(Z, mu, sigma, Y.reshape(R, -1)), True)
        return (vals.reshape(R, -1) * wts).sum(axis=1)

    def _best(self, t, idx, Z):
        last = idx[-1] if len(idx) > len(self.root_idx) else self.start
        acts = self.actions.actions(last)
        best = self.q_optimal(t, idx, acts[0], Z)
        key = np.full(len(Z), acts[0])
        for s in acts[1:]:
            q = self.q_optimal(t, idx, s, Z)
            key = np.where(q > best + self.TIE * (1 + np.abs(best)), s, key)
            best = np.maximum(best, q)
        return best, key

    def optimal(self, t, idx, Z):
        """V*_t by quadrature for a batch of measurement histories."""
        if t == self.H:
            return np.zeros(len(Z))
        return self._best(t, idx, Z)[0]

    def q_optimal(self, t, idx, s, Z):
        mu, sigma, imm = self.immediate(idx, s, Z)
        if t + 1 == self.H:
            return imm
        nxt = idx + (s,)
        return imm + self._expect(Z, mu, sigma, lambda Zx, _: self._best(t + 1, nxt, Zx))

    def _follow(self, t, idx, Z, chooser, need_values=True):
        path = idx[len(self.root_idx):]
        picks = np.asarray(chooser(t, path, Z))
        if not need_values:
            return None, picks
        out = np.empty(len(Z))
        for s in np.unique(picks):
            rows = picks == s
            Zs = Z[rows]
            mu, sigma, imm = self.immediate(idx, int(s), Zs)
            if t + 1 < self.H:
                nxt = idx + (int(s),)
                imm = imm + self._expect(Zs, mu, sigma, lambda Zx, need: self._follow(t + 1, nxt, Zx, chooser, need))
            out[rows] = imm
        return out, picks

    def follow(self, t, idx, Z, chooser):
        """V^π_t by quadrature where ``chooser(t, path, Z)`` returns one action per row."""
        if t == self.H:
            return np.zeros(len(Z))
        return self._follow(t, idx, Z, chooser)[0]


def _guard(action_model, H, quad_nodes):
    if (action_model.branching * quad_nodes) ** H > ORACLE_LIMIT:
        raise OracleBudgetError(
            f"(b*quad_nodes)^H = ({action_model.branching}*{quad_nodes})^{H} exceeds {ORACLE_LIMIT:.0e}"
        )


def brute_force_value(
    history: History,
    H: int,
    spec: RewardSpec,
    hyper: GpHyperparams,
    action_model: ActionModel,
    quad_nodes: int = 2000,
    start: int | None = None,
    measurements: np.ndarray | None = None,
) -> float | np.ndarray:
    """V*_0 with every expectation replaced by panelled Gauss–Legendre quadrature over ±8σ.

    ``measurements`` optionally supplies a (B, len(history)) batch of
    alternative prior measurement vectors; the result is then a length-B array.
    """
    _guard(action_model, H, quad_nodes)
    quad = _Quadrature(history, H, spec, hyper, action_model, quad_nodes, start)
    Z = history.z[None, :] if measurements is None else np.atleast_2d(measurements)
    out = quad.optimal(0, history.indices, Z)
    return float(out[0]) if measurements is None else out


def policy_value(
    history: History,
    H: int,
    chooser: Callable[[int, tuple, np.ndarray], np.ndarray],
    spec: RewardSpec,
    hyper: GpHyperparams,
    action_model: ActionModel,
    quad_nodes: int = 2000,
    start: int | None = None,
) -> float:
    """V^π_0 of a fixed policy with expectations by quadrature."""
    _guard(action_model, H, quad_nodes)
    quad = _Quadrature(history, H, spec, hyper, action_model, quad_nodes, start)
    return float(quad.follow(0, history.indices, history.z[None, :], chooser)[0])


def epsilon_chooser(planner: EpsilonGpp):
    """Batch policy π^ε for :func:`policy_value`."""

    def choose(t, path, Z):
        acts, q = planner.q_batch(t, tuple(path), Z)
        return _argmax_rows(q, acts)

    return choose


# ---------------------------------------------------------------------------
# Maximum-likelihood-observation planning
# ---------------------------------------------------------------------------


def ml_plan(
    history: History,
    H: int,
    spec: RewardSpec,
    hyper: GpHyperparams,
    action_model: ActionModel,
    start: int | None = None,
) -> tuple[Location, float, dict[int, float]]:
    """Plan as if every future measurement equals its posterior mean.

    Written against :func:`gp.posterior` directly, independent of the
    partition machinery, so it can cross-check the τ = 0 planner.
    """
    dom = action_model.domain

    def q(hist, last, t, s):
        loc = dom.location(s)
        post = posterior(hist, loc, hyper)
        sigma = math.sqrt(post.variance)
        visited = hist.indices + (s,)
        r = float(spec.g_sigma(post.mean, sigma)) + float(spec.r3(visited, post.variance))
        r += float(spec.r1(post.mean))
        if t + 1 < H:
            r += value(extend_history(hist, loc, post.mean, hyper), s, t + 1)
        return r

    def value(hist, last, t):
        return max(q(hist, last, t, s) for s in action_model.actions(last))

    last = start if start is not None else history.locations[-1].index
    qs = {s: q(history, last, 0, s) for s in action_model.actions(last)}
    best = argmax_lowest(qs)
    return dom.location(best), qs[best], qs
