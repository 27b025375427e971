"""Experiment configuration files (YAML, strict).

Layout::

    field:
      generate: {width: 20, height: 20, cell_size: 0.05, seed: 0}
      # or  load: {path: field.csv}
      hyper: {prior_mean: 0.0, signal_var: 1.0, noise_var: 1.0e-5, length_scales: [0.2236, 0.2236]}
    planner:
      reward: {kind: ucb, params: {beta: 0.0}}
      policies:
        - {label: nonmyopic, policy: epsilon_gpp, horizon: 3, epsilon: 30.0}
        - {label: greedy, policy: greedy_ucb}
    run:
      steps: 20
      seeds: 20          # a count (0..N-1) or an explicit list
      noise_seed: 0
      out: results

Episode ``k`` of the run uses field realization ``generate.seed + k`` and
noise stream ``noise_seed + k``.  Unknown keys anywhere are errors.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .anytime import AnytimeStop
from .gp import GpHyperparams
from .harness import POLICIES, EpisodeConfig
from .planner import BudgetMode
from .rewards import KINDS, make_reward

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


def _take(d: Any, where: str, required=(), optional=()) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(d).__name__}")
    unknown = sorted(set(d) - set(required) - set(optional))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(map(str, unknown))}")
    missing = [k for k in required if k not in d]
    if missing:
        raise ConfigError(f"{where}: missing key(s) {', '.join(missing)}")
    return d


def _num(v, where: str, kind=float):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {v!r}")
    if kind is int and float(v) != int(v):
        raise ConfigError(f"{where}: expected an integer, got {v!r}")
    return kind(v)


@dataclass(frozen=True)
class FieldSection:
    hyper: GpHyperparams
    width: int | None = None
    height: int | None = None
    cell_size: float | None = None
    seed: int = 0
    path: str | None = None

    @property
    def loaded(self) -> bool:
        return self.path is not None


@dataclass(frozen=True)
class PolicySpec:
    label: str
    policy: str
    horizon: int = 1
    epsilon: float = 1.0
    budget: BudgetMode = field(default_factory=BudgetMode.analytic)
    anytime: AnytimeStop = field(default_factory=lambda: AnytimeStop(max_nodes=50_000))
    xi: float = 0.0
    ucb_beta: float | None = None


@dataclass(frozen=True)
class RunSection:
    steps: int
    seeds: tuple[int, ...]
    noise_seed: int = 0
    out: str = "results"


@dataclass(frozen=True)
class ExperimentConfig:
    field: FieldSection
    reward_kind: str
    reward_params: dict
    policies: tuple[PolicySpec, ...]
    run: RunSection
    base_dir: Path = Path(".")

    def episode(self, spec: PolicySpec, seed: int) -> EpisodeConfig:
        return EpisodeConfig(
            policy=spec.policy, steps=self.run.steps, horizon=spec.horizon,
            reward_kind=self.reward_kind, reward_params=dict(self.reward_params),
            epsilon=spec.epsilon, budget=spec.budget, anytime_stop=spec.anytime,
            xi=spec.xi, ucb_beta=spec.ucb_beta, seed=self.run.noise_seed + seed,
        )

    def field_path(self) -> Path | None:
        if self.field.path is None:
            return None
        p = Path(self.field.path)
        return p if p.is_absolute() else self.base_dir / p


def _hyper(d, where) -> GpHyperparams:
    d = _take(d, where, ("prior_mean", "signal_var", "noise_var", "length_scales"))
    ls = d["length_scales"]
    if not isinstance(ls, list) or len(ls) != 2:
        raise ConfigError(f"{where}.length_scales: expected a list of two numbers")
    try:
        return GpHyperparams(
            _num(d["prior_mean"], f"{where}.prior_mean"),
            _num(d["signal_var"], f"{where}.signal_var"),
            _num(d["noise_var"], f"{where}.noise_var"),
            tuple(_num(x, f"{where}.length_scales") for x in ls),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from exc


def _field(d, base_dir: Path) -> FieldSection:
    d = _take(d, "field", ("hyper",), ("generate", "load"))
    if ("generate" in d) == ("load" in d):
        raise ConfigError("field: exactly one of 'generate' or 'load' is required")
    hyper = _hyper(d["hyper"], "field.hyper")
    if "generate" in d:
        g = _take(d["generate"], "field.generate", ("width", "height", "cell_size"), ("seed",))
        w = _num(g["width"], "field.generate.width", int)
        h = _num(g["height"], "field.generate.height", int)
        cell = _num(g["cell_size"], "field.generate.cell_size")
        if w < 1 or h < 1 or not cell > 0:
            raise ConfigError("field.generate: width, height and cell_size must be positive")
        if w * h > 2500:
            raise ConfigError(f"field.generate: {w * h} cells is too many to sample densely (max 2500)")
        return FieldSection(hyper, w, h, cell, _num(g.get("seed", 0), "field.generate.seed", int))
    ld = _take(d["load"], "field.load", ("path",))
    path = str(ld["path"])
    full = Path(path) if Path(path).is_absolute() else base_dir / path
    if not full.exists():
        raise ConfigError(f"field.load.path: {full} does not exist")
    return FieldSection(hyper, path=path)


def _budget(d, where) -> BudgetMode:
    d = _take(d, where, ("mode",), ("n_max", "tau", "n"))
    mode = d["mode"]
    try:
        if mode == "analytic":
            _take(d, where, ("mode",))
            return BudgetMode.analytic()
        if mode == "capped":
            _take(d, where, ("mode", "n_max"))
            return BudgetMode.capped(_num(d["n_max"], f"{where}.n_max", int))
        if mode == "fixed":
            _take(d, where, ("mode", "tau", "n"))
            return BudgetMode.fixed(_num(d["tau"], f"{where}.tau"), _num(d["n"], f"{where}.n", int))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    raise ConfigError(f"{where}.mode: expected analytic, capped or fixed, got {mode!r}")


def _stop(d, where) -> AnytimeStop:
    d = _take(d, where, (), ("max_nodes", "max_iterations", "gap_target"))
    mn = d.get("max_nodes")
    mi = d.get("max_iterations")
    stop = AnytimeStop(
        None if mn is None else _num(mn, f"{where}.max_nodes", int),
        None if mi is None else _num(mi, f"{where}.max_iterations", int),
        _num(d.get("gap_target", 0.0), f"{where}.gap_target"),
    )
    if stop.max_nodes is None and stop.max_iterations is None and stop.gap_target <= 0:
        raise ConfigError(f"{where}: needs max_nodes, max_iterations or a positive gap_target")
    return stop


def _policy(d, i) -> PolicySpec:
    where = f"planner.policies[{i}]"
    d = _take(d, where, ("label", "policy"), ("horizon", "epsilon", "budget", "anytime", "xi", "ucb_beta"))
    if d["policy"] not in POLICIES:
        raise ConfigError(f"{where}.policy: unknown policy {d['policy']!r}; expected one of {POLICIES}")
    horizon = _num(d.get("horizon", 1), f"{where}.horizon", int)
    epsilon = _num(d.get("epsilon", 1.0), f"{where}.epsilon")
    if horizon < 1 or not epsilon > 0:
        raise ConfigError(f"{where}: horizon must be >= 1 and epsilon > 0")
    beta = d.get("ucb_beta")
    return PolicySpec(
        label=str(d["label"]),
        policy=d["policy"],
        horizon=horizon,
        epsilon=epsilon,
        budget=_budget(d["budget"], f"{where}.budget") if "budget" in d else BudgetMode.analytic(),
        anytime=_stop(d["anytime"], f"{where}.anytime") if "anytime" in d else AnytimeStop(max_nodes=50_000),
        xi=_num(d.get("xi", 0.0), f"{where}.xi"),
        ucb_beta=None if beta is None else _num(beta, f"{where}.ucb_beta"),
    )


def _run(d) -> RunSection:
    d = _take(d, "run", ("steps", "seeds"), ("noise_seed", "out"))
    steps = _num(d["steps"], "run.steps", int)
    if steps < 1:
        raise ConfigError("run.steps must be >= 1")
    seeds = d["seeds"]
    if isinstance(seeds, list):
        seeds = tuple(_num(s, "run.seeds", int) for s in seeds)
        if len(set(seeds)) != len(seeds):
            raise ConfigError("run.seeds: duplicate seeds")
    else:
        seeds = tuple(range(_num(seeds, "run.seeds", int)))
    if not seeds:
        raise ConfigError("run.seeds: need at least one seed")
    return RunSection(steps, seeds, _num(d.get("noise_seed", 0), "run.noise_seed", int), str(d.get("out", "results")))


def from_dict(d: dict, base_dir: Path | str = ".") -> ExperimentConfig:
    base_dir = Path(base_dir)
    d = _take(d, "config", ("field", "planner", "run"))
    fld = _field(d["field"], base_dir)
    pl = _take(d["planner"], "planner", ("reward", "policies"))
    rw = _take(pl["reward"], "planner.reward", ("kind",), ("params",))
    kind = rw["kind"]
    if kind not in KINDS or kind == "custom":
        raise ConfigError(f"planner.reward.kind: expected one of {[k for k in KINDS if k != 'custom']}, got {kind!r}")
    params = {str(k): _num(v, f"planner.reward.params.{k}") for k, v in (rw.get("params") or {}).items()}
    try:
        make_reward(kind, params)
    except ValueError as exc:
        raise ConfigError(f"planner.reward: {exc}") from exc
    pols = pl["policies"]
    if not isinstance(pols, list) or not pols:
        raise ConfigError("planner.policies: expected a nonempty list")
    policies = tuple(_policy(p, i) for i, p in enumerate(pols))
    labels = [p.label for p in policies]
    if len(set(labels)) != len(labels):
        raise ConfigError("planner.policies: labels must be unique")
    return ExperimentConfig(fld, kind, params, policies, _run(d["run"]), base_dir)


def _budget_dict(b: BudgetMode) -> dict:
    if b.kind == "capped":
        return {"mode": "capped", "n_max": b.n_max}
    if b.kind == "fixed":
        return {"mode": "fixed", "tau": b.tau, "n": b.n}
    return {"mode": "analytic"}


def to_dict(cfg: ExperimentConfig) -> dict:
    f = cfg.field
    h = f.hyper
    fd: dict = {}
    if f.loaded:
        fd["load"] = {"path": f.path}
    else:
        fd["generate"] = {"width": f.width, "height": f.height, "cell_size": f.cell_size, "seed": f.seed}
    fd["hyper"] = {"prior_mean": h.prior_mean, "signal_var": h.signal_var,
                   "noise_var": h.noise_var, "length_scales": list(h.length_scales)}
    pols = []
    for p in cfg.policies:
        pd = {"label": p.label, "policy": p.policy, "horizon": p.horizon, "epsilon": p.epsilon,
              "budget": _budget_dict(p.budget), "xi": p.xi}
        stop = {"gap_target": p.anytime.gap_target}
        if p.anytime.max_nodes is not None:
            stop["max_nodes"] = p.anytime.max_nodes
        if p.anytime.max_iterations is not None:
            stop["max_iterations"] = p.anytime.max_iterations
        pd["anytime"] = stop
        if p.ucb_beta is not None:
            pd["ucb_beta"] = p.ucb_beta
        pols.append(pd)
    return {
        "field": fd,
        "planner": {"reward": {"kind": cfg.reward_kind, "params": dict(cfg.reward_params)}, "policies": pols},
        "run": {"steps": cfg.run.steps, "seeds": list(cfg.run.seeds),
                "noise_seed": cfg.run.noise_seed, "out": cfg.run.out},
    }


def dumps(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=True)


def loads(text: str, base_dir: Path | str = ".") -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc
    return from_dict(data, base_dir)


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text, path.parent)


def content_hash(cfg: ExperimentConfig) -> str:
    """Git blob hash of the canonical serialization."""
    data = dumps(cfg).encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()
