"""Gaussian process prior/posterior over a discrete set of sampling locations.

Locations live in a :class:`Domain` (row-major grid or an arbitrary point
set).  A :class:`History` carries the visited locations, the measurements
taken there and the lower-triangular factor of ``Γ = Σ + σ_n² I``; appending
an observation extends that factor by one row instead of refactorizing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import solve_triangular

CONDITION_LIMIT = 1e12
FIELD_JITTER = 1e-10


class ConditioningError(np.linalg.LinAlgError):
    """Raised when a covariance factor is too ill-conditioned to trust."""

    def __init__(self, message: str, locations: Sequence[int] = ()):
        super().__init__(message)
        self.locations = tuple(int(i) for i in locations)


@dataclass(frozen=True)
class GpHyperparams:
    prior_mean: float = 0.0
    signal_var: float = 1.0
    noise_var: float = 1e-5
    length_scales: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        l1, l2 = self.length_scales
        if not self.noise_var > 0:
            raise ValueError(f"noise_var must be > 0, got {self.noise_var}")
        if not (l1 > 0 and l2 > 0):
            raise ValueError(f"length scales must be > 0, got {self.length_scales}")
        if not self.signal_var >= 0:
            raise ValueError(f"signal_var must be >= 0, got {self.signal_var}")
        object.__setattr__(self, "length_scales", (float(l1), float(l2)))


class Location(NamedTuple):
    index: int
    coords: tuple[float, float]


@dataclass(frozen=True, eq=False)
class Domain:
    """A finite set of sampling locations.

    ``width``/``height`` are set for grids; index ``i`` then sits at column
    ``i % width`` and row ``i // width``.
    """

    coords: np.ndarray
    width: int | None = None
    height: int | None = None
    cell_size: float | None = None

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float).reshape(-1, 2)
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @classmethod
    def grid(cls, width: int, height: int, cell_size: float = 1.0) -> "Domain":
        ys, xs = np.divmod(np.arange(width * height), width)
        coords = np.column_stack([xs * cell_size, ys * cell_size])
        return cls(coords, width=width, height=height, cell_size=cell_size)

    def __len__(self) -> int:
        return len(self.coords)

    def location(self, index: int) -> Location:
        x, y = self.coords[index]
        return Location(int(index), (float(x), float(y)))

    def cell(self, index: int) -> tuple[int, int]:
        """Grid (column, row) of ``index``."""
        if self.width is None:
            raise ValueError("domain is not a grid")
        row, col = divmod(int(index), self.width)
        return col, row

    def index_of(self, col: int, row: int) -> int:
        if self.width is None or self.height is None:
            raise ValueError("domain is not a grid")
        if not (0 <= col < self.width and 0 <= row < self.height):
            raise IndexError(f"cell ({col}, {row}) outside {self.width}x{self.height} grid")
        return row * self.width + col


def _coords(s) -> np.ndarray:
    return np.asarray(getattr(s, "coords", s), dtype=float)


def kernel_matrix(a: np.ndarray, b: np.ndarray, hyper: GpHyperparams) -> np.ndarray:
    """Squared-exponential covariance between two coordinate arrays."""
    scale = np.asarray(hyper.length_scales)
    diff = (np.atleast_2d(a)[:, None, :] - np.atleast_2d(b)[None, :, :]) / scale
    return hyper.signal_var * np.exp(-0.5 * np.sum(diff * diff, axis=-1))


def kernel_eval(s, s2, hyper: GpHyperparams) -> float:
    """k(s, s') = σ_y² exp(-½ (s-s')ᵀ M⁻² (s-s'))."""
    d = (_coords(s) - _coords(s2)) / np.asarray(hyper.length_scales)
    return float(hyper.signal_var * np.exp(-0.5 * float(d @ d)))


@dataclass(frozen=True)
class Posterior:
    mean: float
    variance: float

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))


@dataclass(frozen=True, eq=False)
class History:
    """Observations ``d_t``: visited locations, measurements and cached factor."""

    locations: tuple[Location, ...] = ()
    measurements: tuple[float, ...] = ()
    factor: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.locations) != len(self.measurements):
            raise ValueError(
                f"{len(self.locations)} locations but {len(self.measurements)} measurements"
            )

    def __len__(self) -> int:
        return len(self.locations)

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(loc.index for loc in self.locations)

    @property
    def coords(self) -> np.ndarray:
        if not self.locations:
            return np.empty((0, 2))
        return np.array([loc.coords for loc in self.locations], dtype=float)

    @property
    def z(self) -> np.ndarray:
        return np.asarray(self.measurements, dtype=float)

    @classmethod
    def from_observations(
        cls, locations: Sequence[Location], measurements: Sequence[float], hyper: GpHyperparams
    ) -> "History":
        h = cls(tuple(locations), tuple(float(z) for z in measurements))
        return h.with_factor(hyper)

    def with_factor(self, hyper: GpHyperparams) -> "History":
        """Return a copy whose factor is recomputed from scratch."""
        return History(self.locations, self.measurements, full_factor(self.coords, hyper, self.indices))


def _check_condition(factor: np.ndarray, indices: Sequence[int]) -> None:
    if factor.size == 0:
        return
    diag = np.abs(np.diag(factor))
    lo = diag.min()
    if not np.isfinite(diag).all() or lo <= 0 or (diag.max() / lo) ** 2 > CONDITION_LIMIT:
        raise ConditioningError(
            f"ill-conditioned covariance over locations {list(indices)}", indices
        )


def full_factor(coords: np.ndarray, hyper: GpHyperparams, indices: Sequence[int] = ()) -> np.ndarray:
    """Cholesky factor of Γ = Σ + σ_n² I for the given coordinates."""
    if len(coords) == 0:
        return np.empty((0, 0))
    gamma = kernel_matrix(coords, coords, hyper) + hyper.noise_var * np.eye(len(coords))
    try:
        factor = np.linalg.cholesky(gamma)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(str(exc), indices) from exc
    _check_condition(factor, indices)
    return factor


def append_factor(
    factor: np.ndarray, coords: np.ndarray, new: np.ndarray, hyper: GpHyperparams, indices=()
) -> np.ndarray:
    """Rank-1 extension of the Γ factor by one more location."""
    k = len(coords)
    kss = hyper.signal_var + hyper.noise_var
    if k == 0:
        out = np.array([[np.sqrt(kss)]])
    else:
        b = kernel_matrix(coords, new[None, :], hyper)[:, 0]
        c = solve_triangular(factor, b, lower=True, check_finite=False)
        d2 = kss - c @ c
        if d2 <= 0:
            raise ConditioningError("non-positive pivot in factor update", indices)
        out = np.zeros((k + 1, k + 1))
        out[:k, :k] = factor
        out[k, :k] = c
        out[k, k] = np.sqrt(d2)
    _check_condition(out, indices)
    return out


def _factor_of(history: History, hyper: GpHyperparams) -> np.ndarray:
    if history.factor is not None and len(history.factor) == len(history):
        return history.factor
    return full_factor(history.coords, hyper, history.indices)


def posterior_gain(history: History, s, hyper: GpHyperparams) -> tuple[np.ndarray, float]:
    """Return ``(Γ⁻¹ Σ_{hist,s}, σ²_{s|hist})``; both are measurement-free."""
    kss = hyper.signal_var + hyper.noise_var
    if len(history) == 0:
        return np.empty(0), kss
    factor = _factor_of(history, hyper)
    b = kernel_matrix(history.coords, _coords(s)[None, :], hyper)[:, 0]
    c = solve_triangular(factor, b, lower=True, check_finite=False)
    gain = solve_triangular(factor.T, c, lower=False, check_finite=False)
    return gain, float(kss - c @ c)


def posterior(history: History, s, hyper: GpHyperparams) -> Posterior:
    gain, var = posterior_gain(history, s, hyper)
    mean = hyper.prior_mean + float(gain @ (history.z - hyper.prior_mean)) if len(history) else hyper.prior_mean
    return Posterior(mean, var)


def alpha_norm(history: History, s, hyper: GpHyperparams) -> float:
    """Euclidean norm of Σ_{s,hist} Γ⁻¹ (0 for an empty history)."""
    gain, _ = posterior_gain(history, s, hyper)
    return float(np.linalg.norm(gain))


def extend_history(
    history: History, s: Location, z: float, hyper: GpHyperparams, incremental: bool = True
) -> History:
    """Append ``(s, z)``; the factor is extended in place of a refactorization
    unless ``incremental`` is False."""
    locations = history.locations + (s,)
    measurements = history.measurements + (float(z),)
    indices = tuple(loc.index for loc in locations)
    if incremental:
        factor = append_factor(_factor_of(history, hyper), history.coords, _coords(s), hyper, indices)
    else:
        factor = full_factor(np.array([loc.coords for loc in locations]), hyper, indices)
    return History(locations, measurements, factor)


def sample_field(domain: Domain, hyper: GpHyperparams, seed: int):
    """Draw one noise-free realization of the latent field over ``domain``."""
    from .field import FieldGrid

    n = len(domain)
    if hyper.signal_var == 0:
        values = np.full(n, hyper.prior_mean, dtype=float)
    else:
        cov = kernel_matrix(domain.coords, domain.coords, hyper)
        cov[np.diag_indices(n)] += FIELD_JITTER * hyper.signal_var
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ConditioningError(f"field covariance not positive definite: {exc}", range(n)) from exc
        rng = np.random.default_rng(seed)
        values = hyper.prior_mean + chol @ rng.standard_normal(n)
    return FieldGrid(
        width=domain.width or n,
        height=domain.height or 1,
        cell_size=domain.cell_size if domain.cell_size is not None else 1.0,
        values=values,
    )
