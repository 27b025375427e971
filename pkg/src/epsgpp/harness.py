"""Episode simulation: receding-horizon planning on a field grid.

An episode starts with one noisy observation at the start cell, then for
``steps`` rounds plans, moves to a 4-neighbour, observes ``Y(s) + noise`` and
records the realized reward.  The noise sequence is drawn up front from the
episode seed, so every policy run with the same seed sees the same noise.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .anytime import AnytimeContext, AnytimeStop, PlanNode, _best_lower, _search
from .field import FieldGrid
from .gp import GpHyperparams, History, Location, extend_history, posterior
from .lipschitz import ActionModel, precompute
from .normal import norm_cdf, norm_pdf
from .planner import BudgetMode, EpsilonGpp, argmax_lowest, ml_plan
from .rewards import make_reward, realized_reward

POLICIES = ("epsilon_gpp", "anytime", "ml_obs", "greedy_pi", "greedy_ei", "greedy_ucb")
PLANNING_POLICIES = ("epsilon_gpp", "anytime", "ml_obs")


class EpisodeError(RuntimeError):
    """A policy failed; ``step`` is the 1-based step being planned."""

    def __init__(self, step: int, cause: BaseException):
        super().__init__(f"step {step}: {type(cause).__name__}: {cause}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True)
class EpisodeConfig:
    policy: str = "epsilon_gpp"
    steps: int = 20
    horizon: int = 1
    reward_kind: str = "ucb"
    reward_params: Mapping[str, float] = field(default_factory=lambda: {"beta": 0.0})
    epsilon: float = 1.0
    budget: BudgetMode = field(default_factory=BudgetMode.analytic)
    anytime_stop: AnytimeStop = field(default_factory=lambda: AnytimeStop(max_nodes=50_000))
    xi: float = 0.0
    ucb_beta: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; expected one of {POLICIES}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")

    def lam(self, horizon: int) -> float:
        """Per-stage tolerance, re-derived from the horizon actually planned."""
        return self.epsilon / (horizon * (horizon + 1))

    @property
    def greedy_beta(self) -> float:
        if self.ucb_beta is not None:
            return self.ucb_beta
        return float(self.reward_params.get("beta", 0.0)) if self.reward_kind == "ucb" else 0.0


@dataclass(frozen=True)
class StepRecord:
    step: int
    index: int
    x: float
    y: float
    z: float
    reward: float
    reward_normalized: float
    cum_reward: float
    max_reward: float
    tree_nodes: int
    wall_ms: float
    horizon: int
    lam: float = math.nan
    n_min: int = 0
    n_max: int = 0
    tau_min: float = math.nan
    tau_max: float = math.nan
    gap: float = math.nan


@dataclass(frozen=True, eq=False)
class EpisodeResult:
    policy: str
    seed: int
    start: Location
    records: tuple[StepRecord, ...]

    @property
    def actions(self) -> tuple[int, ...]:
        return tuple(r.index for r in self.records)

    @property
    def total_reward(self) -> float:
        return math.fsum(r.reward for r in self.records)

    @property
    def max_reward(self) -> float:
        return max(r.reward for r in self.records)

    @property
    def total_nodes(self) -> int:
        return sum(r.tree_nodes for r in self.records)


def default_start(grid: FieldGrid, loaded: bool, seed: int) -> int:
    """Centre cell for simulated fields, a seeded uniform cell for loaded ones."""
    dom = grid.domain()
    if loaded:
        return int(np.random.default_rng([seed, 1]).integers(len(dom)))
    return dom.index_of(grid.width // 2, grid.height // 2)


def noise_stream(seed: int, steps: int, noise_var: float) -> np.ndarray:
    """Measurement noise for the initial observation and each step."""
    return np.random.default_rng([seed, 0]).standard_normal(steps + 1) * math.sqrt(noise_var)


def _acquisition(kind: str, mu: float, sd: float, best: float, xi: float, beta: float) -> float:
    if kind == "ucb":
        return mu + beta * sd
    imp = mu - best - xi
    if sd <= 0:
        return float(imp > 0) if kind == "pi" else max(imp, 0.0)
    u = imp / sd
    if kind == "pi":
        return float(norm_cdf(u))
    return float(imp * norm_cdf(u) + sd * norm_pdf(u))


def greedy_policy(kind: str, xi: float = 0.0, beta: float = 0.0):
    """One-step acquisition maximizer over the reachable locations.

    ``pi`` scores Φ((μ - z⁺ - ξ)/σ), ``ei`` the expected improvement over z⁺
    and ``ucb`` μ + βσ, where z⁺ is the best measurement so far.
    """
    if kind not in ("pi", "ei", "ucb"):
        raise ValueError(f"unknown greedy acquisition {kind!r}")

    def choose(history: History, candidates: Sequence[int], domain, hyper: GpHyperparams) -> int:
        best = float(np.max(history.z)) if len(history) else -math.inf
        scores = {}
        for s in candidates:
            post = posterior(history, domain.location(s), hyper)
            scores[s] = _acquisition(kind, post.mean, post.std, best, xi, beta)
        return argmax_lowest(scores)

    return choose


@dataclass
class _Decision:
    action: int
    nodes: int = 0
    lam: float = math.nan
    n_range: tuple[int, int] = (0, 0)
    tau_range: tuple[float, float] = (math.nan, math.nan)
    gap: float = math.nan


def _count_paths(actions: ActionModel, start: int, H: int) -> int:
    """Child histories in a depth-H tree with one sample per action."""
    frontier = {start: 1}
    total = 0
    for _ in range(H):
        nxt: dict[int, int] = {}
        for s, mult in frontier.items():
            for a in actions.actions(s):
                nxt[a] = nxt.get(a, 0) + mult
        total += sum(nxt.values())
        frontier = nxt
    return total


def _decide(cfg, history, here, H, spec, hyper, actions, trace) -> _Decision:
    if cfg.policy.startswith("greedy_"):
        chooser = greedy_policy(cfg.policy[len("greedy_"):], cfg.xi, cfg.greedy_beta)
        return _Decision(chooser(history, actions.actions(here), actions.domain, hyper))
    if cfg.policy == "ml_obs":
        loc, _, _ = ml_plan(history, H, spec, hyper, actions, start=here)
        return _Decision(loc.index, _count_paths(actions, here, H), n_range=(1, 1), tau_range=(0.0, 0.0))

    lam = cfg.lam(H)
    table = precompute(history, actions, H, hyper, spec, start=here)
    planner = EpsilonGpp(table, spec, hyper, actions, lam, cfg.budget)
    path, z = planner.split(history)
    if cfg.policy == "epsilon_gpp":
        acts, q = planner.q_batch(0, path, z[None, :])
        best = argmax_lowest({s: float(v) for s, v in zip(acts, q[0])})
        nodes, gap = planner.nodes, math.nan
    else:
        ctx = AnytimeContext(planner)
        root = PlanNode(0, path, np.asarray(z, dtype=float))
        _search(root, ctx, lam, cfg.anytime_stop, trace)
        best = _best_lower(root)
        nodes, gap = ctx.nodes, root.upper - root.lower
    ch = planner.used_choices()
    ns = [c.n if c.tau > 0 else 1 for c in ch]
    taus = [c.tau for c in ch]
    return _Decision(best, nodes, lam, (min(ns), max(ns)), (min(taus), max(taus)), gap)


def run_episode(
    grid: FieldGrid,
    cfg: EpisodeConfig,
    hyper: GpHyperparams,
    start: int,
    action_model: ActionModel | None = None,
    trace=None,
) -> EpisodeResult:
    """Simulate one episode; deterministic given ``cfg.seed``.

    ``trace(step, record)`` receives the per-iteration anytime trace records.
    """
    dom = grid.domain()
    actions = action_model or ActionModel.grid4(dom)
    spec = make_reward(cfg.reward_kind, cfg.reward_params)
    noise = noise_stream(cfg.seed, cfg.steps, hyper.noise_var)
    start_loc = dom.location(start)
    history = History.from_observations([start_loc], [float(grid[start] + noise[0])], hyper)
    here = start
    records = []
    cum, best = 0.0, -math.inf
    for k in range(1, cfg.steps + 1):
        H = min(cfg.horizon, cfg.steps - k + 1)
        step_trace = (lambda rec, k=k: trace(k, rec)) if trace is not None else None
        t0 = time.perf_counter()
        try:
            d = _decide(cfg, history, here, H, spec, hyper, actions, step_trace)
        except Exception as exc:
            raise EpisodeError(k, exc) from exc
        wall_ms = 1e3 * (time.perf_counter() - t0)
        loc = dom.location(d.action)
        var = posterior(history, loc, hyper).variance
        z = float(grid[d.action] + noise[k])
        reward = realized_reward(spec, z, var, history.indices + (d.action,))
        history = extend_history(history, loc, z, hyper)
        here = d.action
        cum += reward
        best = max(best, reward)
        records.append(StepRecord(
            step=k, index=d.action, x=loc.coords[0], y=loc.coords[1], z=z,
            reward=reward, reward_normalized=reward - hyper.prior_mean,
            cum_reward=cum, max_reward=best, tree_nodes=d.nodes, wall_ms=wall_ms,
            horizon=H, lam=d.lam, n_min=d.n_range[0], n_max=d.n_range[1],
            tau_min=d.tau_range[0], tau_max=d.tau_range[1], gap=d.gap,
        ))
    return EpisodeResult(cfg.policy, cfg.seed, start_loc, tuple(records))


@dataclass(frozen=True, eq=False)
class Summary:
    """Per-step mean and standard error across episodes."""

    count: int
    steps: np.ndarray
    cum_reward: np.ndarray
    cum_reward_se: np.ndarray
    max_reward: np.ndarray
    max_reward_se: np.ndarray
    cum_nodes: np.ndarray
    cum_nodes_se: np.ndarray


def _mean_se(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if len(a) < 2:
        return a.mean(axis=0), np.full(a.shape[1], np.nan)
    return a.mean(axis=0), a.std(axis=0, ddof=1) / math.sqrt(len(a))


def aggregate(results: Sequence[EpisodeResult]) -> Summary:
    """Standard errors are NaN for a single episode."""
    if not results:
        raise ValueError("nothing to aggregate")
    lengths = {len(r.records) for r in results}
    if len(lengths) != 1:
        raise ValueError(f"episodes have different lengths: {sorted(lengths)}")
    cum = np.array([[s.cum_reward for s in r.records] for r in results])
    mx = np.array([[s.max_reward for s in r.records] for r in results])
    nodes = np.cumsum(np.array([[s.tree_nodes for s in r.records] for r in results], dtype=float), axis=1)
    c, c_se = _mean_se(cum)
    m, m_se = _mean_se(mx)
    n, n_se = _mean_se(nodes)
    return Summary(len(results), np.arange(1, lengths.pop() + 1), c, c_se, m, m_se, n, n_se)


# Field settings used for the simulated and soil-potassium style experiments.
SIMULATED_FIELD = dict(
    width=20, height=20, cell_size=0.05,
    hyper=GpHyperparams(prior_mean=0.0, signal_var=1.0, noise_var=1e-5, length_scales=(0.2236, 0.2236)),
)
LGK_FIELD = dict(
    width=14, height=12, cell_size=40.0,
    hyper=GpHyperparams(prior_mean=3.26, signal_var=0.057, noise_var=0.0222, length_scales=(42.8, 103.6)),
)
