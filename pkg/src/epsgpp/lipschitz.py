"""Value-function Lipschitz constants over every reachable location path.

Posterior variances, gain vectors and the constants ``L_t`` depend only on the
locations visited, never on measurements, so they are tabulated once before
planning.  Paths are tuples of location indices appended after the prior data.
"""

from __future__ import annotations

import hashlib
import math
import pickle
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.linalg import solve_triangular

from .gp import Domain, GpHyperparams, History, append_factor, full_factor, kernel_matrix
from .rewards import RewardSpec

ENUMERATION_LIMIT = 10**7


class LipschitzBudgetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ActionModel:
    """Reachable-location sets A(s)."""

    domain: Domain
    adjacency: Mapping[int, tuple[int, ...]]

    def __post_init__(self):
        n = len(self.domain)
        for s, nbrs in self.adjacency.items():
            if not nbrs:
                raise ValueError(f"location {s} has no reachable locations")
            bad = [j for j in nbrs if not 0 <= j < n]
            if bad:
                raise ValueError(f"location {s} lists neighbours outside the domain: {bad}")

    @classmethod
    def grid4(cls, domain: Domain) -> "ActionModel":
        """4-connected moves, truncated at the grid boundary."""
        adj = {}
        for i in range(len(domain)):
            col, row = domain.cell(i)
            nbrs = []
            # Sorted by index so ties resolve the same way everywhere.
            for dc, dr in ((0, -1), (-1, 0), (1, 0), (0, 1)):
                c, r = col + dc, row + dr
                if 0 <= c < domain.width and 0 <= r < domain.height:
                    nbrs.append(domain.index_of(c, r))
            adj[i] = tuple(sorted(nbrs))
        return cls(domain, adj)

    @classmethod
    def complete(cls, domain: Domain) -> "ActionModel":
        """Every location (including the current one) is reachable."""
        everything = tuple(range(len(domain)))
        return cls(domain, {i: everything for i in everything})

    def actions(self, s: int) -> tuple[int, ...]:
        return self.adjacency[s]

    @property
    def branching(self) -> int:
        return max(len(v) for v in self.adjacency.values())


@dataclass(frozen=True, eq=False)
class PathStats:
    """Predictive statistics of the last location of a path given its prefix."""

    gain: np.ndarray | None
    variance: float
    alpha: float
    L: float

    @property
    def sigma(self) -> float:
        return math.sqrt(self.variance)


@dataclass(frozen=True, eq=False)
class LipschitzTable:
    start: int
    root_len: int
    horizon: int
    entries: Mapping[tuple[int, ...], PathStats] = field(repr=False)

    @property
    def L0(self) -> float:
        return self.entries[()].L

    def __contains__(self, path) -> bool:
        return tuple(path) in self.entries

    def stats(self, path) -> PathStats:
        try:
            return self.entries[tuple(path)]
        except KeyError:
            raise KeyError(f"path {tuple(path)} not in Lipschitz table") from None


def lookup(table: LipschitzTable, path) -> float:
    return table.stats(path).L


def _cache_key(history0, start, actions, H, hyper, spec) -> str:
    payload = (
        actions.domain.coords.tobytes(),
        sorted(actions.adjacency.items()),
        history0.coords.tobytes(),
        start,
        H,
        (hyper.prior_mean, hyper.signal_var, hyper.noise_var, hyper.length_scales),
        spec.kind,
        sorted(spec.params.items()),
    )
    return hashlib.sha256(repr(payload).encode()).hexdigest()[:32]


def precompute(
    history0: History,
    action_model: ActionModel,
    H: int,
    hyper: GpHyperparams,
    spec: RewardSpec,
    start: int | None = None,
    cache_dir=None,
) -> LipschitzTable:
    """Tabulate σ, α and L_t for every path of length ≤ H from ``start``.

    ``start`` defaults to the last location of ``history0``.  With
    ``cache_dir`` the finished table is pickled there and reused by later calls
    with the same domain, prior locations, hyperparameters, horizon and reward.
    """
    if H < 1:
        raise ValueError(f"horizon must be >= 1, got {H}")
    if start is None:
        if not len(history0):
            raise ValueError("empty prior history needs an explicit start location")
        start = history0.locations[-1].index
    b = action_model.branching
    if b**H > ENUMERATION_LIMIT:
        raise LipschitzBudgetError(
            f"{b}^{H} paths exceed the enumeration limit {ENUMERATION_LIMIT:.0e}; use a smaller horizon"
        )

    cache_file = None
    if cache_dir is not None and spec.kind != "custom":
        key = _cache_key(history0, start, action_model, H, hyper, spec)
        cache_file = Path(cache_dir) / f"lipschitz-{key}.pkl"
        if cache_file.exists():
            with cache_file.open("rb") as fh:
                return pickle.load(fh)

    coords_all = action_model.domain.coords
    kss = hyper.signal_var + hyper.noise_var
    entries: dict[tuple[int, ...], PathStats] = {}

    def visit(path, factor, coords, gain, var, alpha) -> float:
        t = len(path)
        last = path[-1] if path else start
        if t == H:
            L = 0.0
        else:
            best = 0.0
            for s in action_model.actions(last):
                x = coords_all[s]
                if len(coords):
                    kb = kernel_matrix(coords, x[None, :], hyper)[:, 0]
                    c = solve_triangular(factor, kb, lower=True, check_finite=False)
                    g = solve_triangular(factor.T, c, lower=False, check_finite=False)
                    v = float(kss - c @ c)
                else:
                    g, v = np.empty(0), kss
                a = float(np.linalg.norm(g))
                child_factor = append_factor(factor, coords, x, hyper, path + (s,))
                L_next = visit(path + (s,), child_factor, np.vstack([coords, x]), g, v, a)
                term = a * spec.l1_plus_l2(math.sqrt(v)) + L_next * math.sqrt(1.0 + a * a)
                best = max(best, term)
            L = best
        entries[path] = PathStats(gain, var, alpha, L)
        return L

    root_coords = history0.coords
    root_factor = history0.factor if history0.factor is not None else full_factor(root_coords, hyper, history0.indices)
    visit((), root_factor, root_coords, None, float("nan"), float("nan"))
    table = LipschitzTable(start, len(history0), H, entries)

    if cache_file is not None:
        cache_file.parent.mkdir(parents=True, exist_ok=True)
        with cache_file.open("wb") as fh:
            pickle.dump(table, fh)
    return table
