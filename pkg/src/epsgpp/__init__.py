"""Nonmyopic ε-optimal Gaussian process planning."""

from .anytime import AnytimeResult, AnytimeStop, anytime_plan
from .gp import Domain, GpHyperparams, History, Location, Posterior, extend_history, posterior, sample_field
from .lipschitz import ActionModel, LipschitzTable, precompute
from .planner import BudgetMode, EpsilonGpp, PlannerConfig, PlanResult, plan, value_epsilon
from .rewards import RewardSpec, make_reward
from .sampling import Partition, build_partition, feasible_n_capped, feasible_tau_n, lambda_coefficient

__all__ = [
    "ActionModel", "AnytimeResult", "AnytimeStop", "BudgetMode", "Domain", "EpsilonGpp", "GpHyperparams",
    "History", "LipschitzTable", "Location", "Partition", "PlanResult", "PlannerConfig", "Posterior",
    "RewardSpec", "anytime_plan", "build_partition", "extend_history", "feasible_n_capped", "feasible_tau_n",
    "lambda_coefficient", "make_reward", "plan", "posterior", "precompute", "sample_field", "value_epsilon",
]
