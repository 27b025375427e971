"""Anytime ε-GPP: incremental branch-and-bound over the ε-GPP search tree.

Every node keeps upper/lower bounds on its optimal value.  Expanding a node
grows only the median-sample subtree of each action; the other samples get
bounds transferred from that pivot through the value function's Lipschitz
constant.  Iterations then descend toward the action with the largest upper
bound and the sample with the largest weighted bound gap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .gp import History, Location
from .planner import EpsilonGpp, PlannerConfig, argmax_lowest

INF = math.inf


class _Branch:
    """One action below a node: its partition, child bounds and Q bounds."""

    __slots__ = ("action", "path", "samples", "weights", "r", "r1", "L_next",
                 "upper", "lower", "children", "n_full", "q_upper", "q_lower")

    def __init__(self, action, path, samples, weights, r, r1, L_next):
        n = len(samples)
        self.action = action
        self.path = path
        self.samples = samples
        self.weights = weights
        self.r = r
        self.r1 = r1
        self.L_next = L_next
        self.upper = np.full(n, INF)
        self.lower = np.full(n, -INF)
        self.children: list[PlanNode | None] = [None] * n
        self.n_full = 0
        self.q_upper = INF
        self.q_lower = -INF

    @property
    def full(self) -> bool:
        return self.n_full == len(self.children)

    def refresh_q(self, lam: float) -> None:
        self.q_upper = self.r + float(self.weights @ (self.r1 + self.upper)) + lam
        self.q_lower = self.r + float(self.weights @ (self.r1 + self.lower)) - lam


@dataclass(eq=False)
class PlanNode:
    t: int
    path: tuple[int, ...]
    z: np.ndarray
    branches: dict[int, _Branch] = field(default_factory=dict)
    upper: float = INF
    lower: float = -INF
    expanded: bool = False
    full: bool = False

    def refresh(self) -> None:
        self.upper = max(b.q_upper for b in self.branches.values())
        self.lower = max(b.q_lower for b in self.branches.values())
        self.full = all(b.full for b in self.branches.values())


@dataclass(frozen=True)
class AnytimeStop:
    """Any-of stop rule; ``None`` disables a criterion."""

    max_nodes: int | None = None
    max_iterations: int | None = None
    gap_target: float = 0.0


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    nodes: int
    upper: float
    lower: float
    gap: float


@dataclass(frozen=True, eq=False)
class AnytimeResult:
    action: Location
    upper: float
    lower: float
    gap: float
    iterations: int
    nodes: int
    horizon: int
    per_action_lower: dict = field(default_factory=dict)
    trace: tuple[TraceRecord, ...] = ()

    @property
    def loss_bound(self) -> float:
        """Bound on V* - V^π for the policy that replans with this search at every stage."""
        return self.gap * self.horizon


class AnytimeContext:
    """Shared read-only planning state plus the node counter of one search."""

    def __init__(self, planner: EpsilonGpp):
        self.planner = planner
        self.nodes = 0

    @property
    def H(self) -> int:
        return self.planner.H

    def new_node(self, t, path, z) -> PlanNode:
        self.nodes += 1
        return PlanNode(t, path, z)

    def branch(self, node: PlanNode, s: int) -> _Branch:
        pl = self.planner
        p, mu, sigma, r, u, w = pl.stage(node.path, s, node.z[None, :])
        samples = mu[0] + sigma * u
        r1 = np.asarray(pl.spec.r1(samples), dtype=float)
        return _Branch(s, p, samples, w, float(r[0]), r1, pl.table.stats(p).L)


def refine_bounds(branch: _Branch, k: int) -> None:
    """Transfer the pivot child's bounds to its siblings via Lipschitz continuity."""
    b = branch.L_next * np.abs(branch.samples - branch.samples[k])
    up = branch.upper[k] + b
    lo = branch.lower[k] - b
    up[k] = branch.upper[k]
    lo[k] = branch.lower[k]
    np.minimum(branch.upper, up, out=branch.upper)
    np.maximum(branch.lower, lo, out=branch.lower)


def _child(ctx: AnytimeContext, branch: _Branch, parent: PlanNode, i: int) -> PlanNode:
    child = branch.children[i]
    if child is None:
        z = np.append(parent.z, branch.samples[i])
        child = ctx.new_node(parent.t + 1, branch.path, z)
        branch.children[i] = child
    return child


def _absorb(branch: _Branch, i: int, bounds: tuple[float, float]) -> None:
    # Keep the tighter of the transferred and the freshly computed bounds.
    branch.upper[i] = min(branch.upper[i], bounds[0])
    branch.lower[i] = max(branch.lower[i], bounds[1])
    branch.n_full = sum(1 for c in branch.children if c is not None and c.full)


def expand_node(node: PlanNode, lam: float, ctx: AnytimeContext) -> tuple[float, float]:
    if node.t == ctx.H:
        node.upper = node.lower = 0.0
        node.expanded = node.full = True
        return 0.0, 0.0
    last = node.path[-1] if node.path else ctx.planner.table.start
    for s in ctx.planner.actions.actions(last):
        br = ctx.branch(node, s)
        node.branches[s] = br
        if node.t + 1 == ctx.H:
            # Terminal children have value exactly 0; resolve them in bulk.
            br.upper[:] = 0.0
            br.lower[:] = 0.0
            br.n_full = len(br.samples)
            ctx.nodes += len(br.samples)
        else:
            k = len(br.samples) // 2
            child = _child(ctx, br, node, k)
            _absorb(br, k, expand_node(child, lam, ctx))
            refine_bounds(br, k)
        br.refresh_q(lam)
    node.expanded = True
    node.refresh()
    return node.upper, node.lower


def _select_action(node: PlanNode) -> _Branch:
    open_ = {s: b.q_upper for s, b in node.branches.items() if not b.full}
    return node.branches[argmax_lowest(open_)]


def _select_child(branch: _Branch) -> int:
    best, pick = -INF, -1
    for i, c in enumerate(branch.children):
        if c is not None and c.full:
            continue
        score = branch.weights[i] * (branch.upper[i] - branch.lower[i])
        if score > best:
            best, pick = score, i
    return pick


def construct_tree_iteration(root: PlanNode, lam: float, ctx: AnytimeContext) -> tuple[float, float]:
    """One descend-expand-backpropagate pass."""
    if not root.expanded:
        return expand_node(root, lam, ctx)
    if root.full:
        return root.upper, root.lower
    br = _select_action(root)
    i = _select_child(br)
    child = _child(ctx, br, root, i)
    _absorb(br, i, construct_tree_iteration(child, lam, ctx))
    refine_bounds(br, i)
    br.refresh_q(lam)
    root.refresh()
    return root.upper, root.lower


def _search(root: PlanNode, ctx: AnytimeContext, lam: float, stop: AnytimeStop, trace=None) -> int:
    it = 0
    while True:
        up, lo = construct_tree_iteration(root, lam, ctx)
        it += 1
        if trace is not None:
            trace(TraceRecord(it, ctx.nodes, up, lo, up - lo))
        if root.full:
            return it
        if stop.max_iterations is not None and it >= stop.max_iterations:
            return it
        if stop.max_nodes is not None and ctx.nodes >= stop.max_nodes:
            return it
        if up - lo <= stop.gap_target:
            return it


def _best_lower(root: PlanNode) -> int:
    return argmax_lowest({s: b.q_lower for s, b in root.branches.items()})


def anytime_plan(
    history: History,
    cfg: PlannerConfig,
    stop: AnytimeStop,
    planner: EpsilonGpp,
    trace: Callable[[TraceRecord], None] | None = None,
) -> AnytimeResult:
    """Grow the tree until ``stop`` fires or it is fully expanded.

    The returned action maximizes the lower Q bound at the root.
    """
    path, z = planner.split(history)
    ctx = AnytimeContext(planner)
    root = PlanNode(len(path), path, np.asarray(z, dtype=float))
    if root.t >= ctx.H:
        raise ValueError("no planning stages left")
    records: list[TraceRecord] = []

    def record(rec):
        records.append(rec)
        if trace is not None:
            trace(rec)

    it = _search(root, ctx, cfg.lam, stop, record)
    dom = planner.actions.domain
    return AnytimeResult(
        action=dom.location(_best_lower(root)),
        upper=root.upper,
        lower=root.lower,
        gap=root.upper - root.lower,
        iterations=it,
        nodes=ctx.nodes,
        horizon=ctx.H - root.t,
        per_action_lower={dom.location(s): b.q_lower for s, b in root.branches.items()},
        trace=tuple(records),
    )


def anytime_chooser(planner: EpsilonGpp, lam: float, stop: AnytimeStop, gaps: list | None = None):
    """Batch policy that runs a fresh anytime search from every history row.

    Used by quadrature rollouts; ``gaps`` collects the final root gap of each search.
    """

    def choose(t, path, Z):
        out = np.empty(len(Z), dtype=int)
        for row, z in enumerate(Z):
            ctx = AnytimeContext(planner)
            root = PlanNode(t, tuple(path), np.asarray(z, dtype=float))
            _search(root, ctx, lam, stop)
            out[row] = _best_lower(root)
            if gaps is not None:
                gaps.append(root.upper - root.lower)
        return out

    return choose
