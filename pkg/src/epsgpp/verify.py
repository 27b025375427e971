"""Oracle checks of the planning guarantees on tiny random instances.

Each check builds 2–4 location problems with horizon 2, evaluates the
planners, and compares them with quadrature oracles.  ``run_all`` prints
one line per check and returns the failures with their offending instance.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import sampling
from .anytime import AnytimeStop, anytime_chooser, anytime_plan
from .gp import Domain, GpHyperparams, History
from .lipschitz import ActionModel, precompute
from .planner import (
    BudgetInfeasible,
    BudgetMode,
    EpsilonGpp,
    PlannerConfig,
    brute_force_value,
    epsilon_chooser,
    ml_plan,
    plan,
    policy_value,
)
from .rewards import make_reward

REWARD_CYCLE = ("ucb", "log_energy", "step", "gaussian", "mes")
TOL = 1e-9


@dataclass(frozen=True, eq=False)
class TinyInstance:
    seed: int
    coords: np.ndarray
    hyper: GpHyperparams
    kind: str
    params: dict
    z0: float
    epsilon: float
    H: int = 2

    @property
    def domain(self) -> Domain:
        return Domain(self.coords)

    @property
    def action_model(self) -> ActionModel:
        return ActionModel.complete(self.domain)

    @property
    def spec(self):
        return make_reward(self.kind, self.params)

    @property
    def history(self) -> History:
        return History.from_observations([self.domain.location(0)], [self.z0], self.hyper)

    @property
    def cfg(self) -> PlannerConfig:
        return PlannerConfig(self.H, epsilon=self.epsilon)

    def table(self):
        return precompute(self.history, self.action_model, self.H, self.hyper, self.spec)

    def planner(self, budget: BudgetMode | None = None) -> EpsilonGpp:
        cfg = self.cfg
        pl = EpsilonGpp(self.table(), self.spec, self.hyper, self.action_model, cfg.lam, budget or cfg.budget)
        pl.split(self.history)
        return pl

    def to_dict(self) -> dict:
        h = self.hyper
        return {
            "seed": self.seed,
            "coords": self.coords.tolist(),
            "hyper": {
                "prior_mean": h.prior_mean, "signal_var": h.signal_var,
                "noise_var": h.noise_var, "length_scales": list(h.length_scales),
            },
            "reward": {"kind": self.kind, "params": self.params},
            "z0": self.z0,
            "epsilon": self.epsilon,
            "H": self.H,
        }


def _reward_params(kind: str, rng: np.random.Generator) -> dict:
    if kind == "ucb":
        return {"beta": float(rng.uniform(0.0, 2.0))}
    if kind == "log_energy":
        return {"cut_in": float(rng.uniform(0.3, 1.0))}
    if kind == "step":
        return {"a": float(rng.uniform(-0.5, 0.5))}
    return {}


def tiny_instance(seed: int, kind: str | None = None, locations: int | None = None,
                  epsilon: float | None = None) -> TinyInstance:
    rng = np.random.default_rng(seed)
    m = int(locations or rng.integers(2, 5))
    kind = kind or REWARD_CYCLE[seed % len(REWARD_CYCLE)]
    hyper = GpHyperparams(
        prior_mean=float(rng.uniform(-0.5, 0.5)),
        signal_var=float(rng.uniform(0.5, 1.5)),
        noise_var=float(rng.uniform(0.01, 0.2)),
        length_scales=(float(rng.uniform(0.3, 1.0)), float(rng.uniform(0.3, 1.0))),
    )
    coords = rng.uniform(0.0, 1.0, size=(m, 2))
    z0 = hyper.prior_mean + float(rng.normal(0.0, math.sqrt(hyper.signal_var)))
    eps = float(epsilon if epsilon is not None else rng.uniform(0.1, 1.0))
    return TinyInstance(seed, coords, hyper, kind, _reward_params(kind, rng), z0, eps)


@dataclass
class CheckResult:
    name: str
    passed: bool
    cases: int
    worst: float
    detail: str = ""
    failures: list = field(default_factory=list)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: {self.cases} cases, worst margin {self.worst:.3e} {self.detail}".rstrip()


def _result(name, margins, failures, detail="") -> CheckResult:
    worst = min(margins) if margins else math.inf
    return CheckResult(name, not failures, len(margins), worst, detail, failures)


def check_value_bound(instances, budget: BudgetMode | None = None, quad_nodes: int = 2000) -> CheckResult:
    """|V^ε_0 - V*_0| ≤ λH."""
    margins, failures, skipped = [], [], 0
    for inst in instances:
        cfg = inst.cfg
        if budget is not None:
            cfg = PlannerConfig(inst.H, epsilon=inst.epsilon, budget=budget)
        try:
            res = plan(inst.history, cfg, inst.table(), inst.spec, inst.hyper, inst.action_model)
        except BudgetInfeasible:
            skipped += 1
            continue
        vstar = brute_force_value(inst.history, inst.H, inst.spec, inst.hyper, inst.action_model, quad_nodes)
        m = cfg.lam * inst.H - abs(res.value - vstar)
        margins.append(m)
        if m < -TOL:
            failures.append({"instance": inst.to_dict(), "value_eps": res.value, "value_opt": vstar})
    mode = (budget or BudgetMode()).kind
    if not margins:
        failures.append({"problem": "every instance was infeasible under the budget"})
    detail = f"[{skipped} infeasible under the cap, skipped]" if skipped else ""
    return _result(f"value error within lambda*H ({mode} budget)", margins, failures, detail)


def check_policy_loss(instances, quad_nodes: int = 2000) -> CheckResult:
    """V*_0 - V^{π^ε}_0 ≤ ε."""
    margins, failures = [], []
    for inst in instances:
        args = (inst.spec, inst.hyper, inst.action_model, quad_nodes)
        vstar = brute_force_value(inst.history, inst.H, *args)
        vpi = policy_value(inst.history, inst.H, epsilon_chooser(inst.planner()), *args)
        m = inst.epsilon + 1e-6 - (vstar - vpi)
        margins.append(m)
        if m < 0:
            failures.append({"instance": inst.to_dict(), "value_opt": vstar, "value_policy": vpi})
    return _result("epsilon-GPP policy loss within epsilon", margins, failures)


def check_lipschitz(instances, perturbations: int = 500, quad_nodes: int = 2000) -> CheckResult:
    """|V*(z) - V*(z')| ≤ L_0‖z - z'‖ over random measurement pairs."""
    margins, failures = [], []
    for inst in instances:
        rng = np.random.default_rng([inst.seed, 7])
        L0 = inst.table().L0
        base = inst.z0 + rng.normal(0.0, 1.0, size=(perturbations, 1))
        other = base + rng.normal(0.0, 0.5, size=(perturbations, 1))
        v = brute_force_value(inst.history, inst.H, inst.spec, inst.hyper, inst.action_model, quad_nodes,
                              measurements=np.vstack([base, other]))
        diff = np.abs(v[:perturbations] - v[perturbations:])
        dist = np.abs(base - other)[:, 0]
        m = float(np.min(L0 * dist * (1 + 1e-9) + 1e-12 - diff))
        margins.append(m)
        if m < 0:
            k = int(np.argmin(L0 * dist - diff))
            failures.append({"instance": inst.to_dict(), "z": float(base[k, 0]), "z_other": float(other[k, 0]),
                             "L0": L0, "value_gap": float(diff[k])})
    return _result("optimal value Lipschitz in measurements", margins, failures)


def check_anytime(instances, quad_nodes: int = 2000, rollout_iterations: int = 2) -> CheckResult:
    """Per-iteration sandwich, monotone gap, matching action, and loss ≤ αH."""
    margins, failures = [], []
    for inst in instances:
        pl = inst.planner()
        exact = plan(inst.history, inst.cfg, inst.table(), inst.spec, inst.hyper, inst.action_model)
        res = anytime_plan(inst.history, inst.cfg, AnytimeStop(), pl)
        problems = []
        for rec in res.trace:
            if not rec.lower - TOL <= exact.value <= rec.upper + TOL:
                problems.append(f"sandwich broken at iteration {rec.iteration}")
                break
        gaps = [rec.gap for rec in res.trace]
        if any(b > a + TOL for a, b in zip(gaps, gaps[1:])):
            problems.append("gap increased")
        if res.action != exact.action:
            problems.append(f"action {res.action.index} != exact {exact.action.index}")
        seen: list[float] = []
        chooser = anytime_chooser(pl, inst.cfg.lam, AnytimeStop(max_iterations=rollout_iterations), seen)
        args = (inst.spec, inst.hyper, inst.action_model, quad_nodes)
        vstar = brute_force_value(inst.history, inst.H, *args)
        vpi = policy_value(inst.history, inst.H, chooser, *args)
        alpha = max(seen)
        m = alpha * inst.H + 1e-6 - (vstar - vpi)
        if m < 0:
            problems.append(f"loss {vstar - vpi:.3e} exceeds alpha*H {alpha * inst.H:.3e}")
        margins.append(m if not problems else -abs(m) - 1.0)
        if problems:
            failures.append({"instance": inst.to_dict(), "problems": problems})
    return _result("anytime bounds, convergence and loss", margins, failures)


def check_ml_degeneracy(instances) -> CheckResult:
    """Fixed τ = 0 planner agrees with the mean-substitution planner."""
    margins, failures = [], []
    for inst in instances:
        cfg = PlannerConfig(inst.H, epsilon=inst.epsilon, budget=BudgetMode.fixed(0.0, 1))
        res = plan(inst.history, cfg, inst.table(), inst.spec, inst.hyper, inst.action_model)
        loc, val, _ = ml_plan(inst.history, inst.H, inst.spec, inst.hyper, inst.action_model)
        err = abs(res.value - val)
        margins.append(1e-9 - err)
        if res.action != loc or err > 1e-9:
            failures.append({"instance": inst.to_dict(), "action": res.action.index, "ml_action": loc.index})
    return _result("single-sample planner equals mean substitution", margins, failures)


def check_partition() -> CheckResult:
    part = sampling.build_partition(0.0, 1.0, 5, 3.0)
    err = max(
        float(np.max(np.abs(part.samples - np.array([-3.0, -2.0, 0.0, 2.0, 3.0])))),
        abs(float(part.weights.sum()) - 1.0),
        abs(sampling.lambda_coefficient(2, 0.0) - math.sqrt(2 / math.pi)),
    )
    return _result("partition example and tau=0 coefficient", [1e-12 - err],
                   [] if err <= 1e-12 else [{"error": err}])


def check_budget(trials: int = 1000, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    margins, failures = [], []
    for _ in range(trials):
        lam, sigma, l = 10 ** rng.uniform(-3, 0), 10 ** rng.uniform(-2, 1), 10 ** rng.uniform(-2, 1)
        c = sampling.feasible_tau_n(lam, sigma, l)
        m = lam - sampling.lambda_coefficient(c.n, c.tau) * sigma * l
        margins.append(m / lam)
        if m < 0:
            failures.append({"lam": lam, "sigma": sigma, "l1_plus_L": l, "tau": c.tau, "n": c.n})
    return _result("analytic (tau, n) satisfies the partition bound", margins, failures)


def default_instances(count: int = 10, start: int = 0):
    return [tiny_instance(s) for s in range(start, start + count)]


CHECKS: dict[str, Callable[[], CheckResult]] = {
    "partition": check_partition,
    "budget": check_budget,
    "value_bound": lambda: check_value_bound(default_instances(20)),
    "value_bound_capped": lambda: check_value_bound(default_instances(10, 100), BudgetMode.capped(60)),
    "policy_loss": lambda: check_policy_loss(default_instances(10, 200)),
    "lipschitz": lambda: check_lipschitz(default_instances(5, 300)),
    "anytime": lambda: check_anytime(default_instances(5, 400)),
    "ml_degeneracy": lambda: check_ml_degeneracy(default_instances(10, 500)),
}


def run_all(out=print) -> list[CheckResult]:
    results = []
    for name, fn in CHECKS.items():
        t0 = time.perf_counter()
        res = fn()
        res.detail = (res.detail + f" ({time.perf_counter() - t0:.1f}s)").strip()
        out(res.line())
        results.append(res)
    return results


def failure_report(results) -> str:
    return json.dumps(
        [{"check": r.name, "failures": r.failures} for r in results if not r.passed], indent=2, default=float
    )
