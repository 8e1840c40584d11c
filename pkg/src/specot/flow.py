"""Exact coupling solvers via bipartite max-flow.

The relaxed coupling problem (row sums at most p(i), column sums at most
the draft-tuple mass, mass only where the token appears in the tuple) is
a transportation problem, so its optimum is a max flow on the bipartite
network tokens -> tuples with a source feeding rows and a sink draining
columns.  Tuples that are permutations of one another are
interchangeable, so the right side aggregates them into multisets with
their combined draft mass; an ordered-tuple mode exists for differential
testing at tiny sizes.

Three networks cover the full problem and its two complementary halves:
the full network computes the optimal acceptance as its flow value, and
the outer/inner restrictions (tokens outside/inside the optimal set H*)
verify the split solved approximately by the convex path.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .dist import (
    ProblemInstance,
    enumerate_multisets,
    multiset_mass,
    tuple_mass,
)
from .residuals import OuterResiduals
from .subset import SubsetSolution

# Residual capacity at or below this counts as saturated; augmenting
# along float dust would otherwise never terminate.
FLOW_EPS = 1e-12

MAX_RIGHT_NODES = 2_000_000


class MaxFlowNetwork:
    """Dinic's algorithm on adjacency lists with real capacities."""

    def __init__(self, num_nodes: int):
        self.num_nodes = num_nodes
        self.adj: list[list[int]] = [[] for _ in range(num_nodes)]
        self.to: list[int] = []
        self.cap: list[float] = []
        self.initial_cap: list[float] = []

    def add_edge(self, u: int, v: int, capacity: float) -> int:
        """Add a directed edge, returning its id for later flow queries."""
        eid = len(self.to)
        self.adj[u].append(eid)
        self.to.append(v)
        self.cap.append(capacity)
        self.initial_cap.append(capacity)
        self.adj[v].append(eid + 1)
        self.to.append(u)
        self.cap.append(0.0)
        self.initial_cap.append(0.0)
        return eid

    def flow_on(self, eid: int) -> float:
        used = self.initial_cap[eid] - self.cap[eid]
        return used if used > 0.0 else 0.0

    def _bfs_levels(self, s: int, t: int) -> list[int] | None:
        level = [-1] * self.num_nodes
        level[s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for eid in self.adj[u]:
                v = self.to[eid]
                if level[v] < 0 and self.cap[eid] > FLOW_EPS:
                    level[v] = level[u] + 1
                    queue.append(v)
        return level if level[t] >= 0 else None

    def _augment_once(self, s: int, t: int, level: list[int], it: list[int]) -> float:
        """Push one augmenting path along the level graph (iterative DFS)."""
        path: list[int] = []
        u = s
        while True:
            if u == t:
                bottleneck = min(self.cap[eid] for eid in path)
                for eid in path:
                    self.cap[eid] -= bottleneck
                    self.cap[eid ^ 1] += bottleneck
                return bottleneck
            advanced = False
            while it[u] < len(self.adj[u]):
                eid = self.adj[u][it[u]]
                v = self.to[eid]
                if self.cap[eid] > FLOW_EPS and level[v] == level[u] + 1:
                    path.append(eid)
                    u = v
                    advanced = True
                    break
                it[u] += 1
            if advanced:
                continue
            # dead end: prune u from the level graph and back up one edge
            level[u] = -1
            if not path:
                return 0.0
            eid = path.pop()
            u = self.to[eid ^ 1]
            it[u] += 1

    def max_flow(self, s: int, t: int) -> float:
        total = 0.0
        while True:
            level = self._bfs_levels(s, t)
            if level is None:
                return total
            it = [0] * self.num_nodes
            while True:
                pushed = self._augment_once(s, t, level, it)
                if pushed <= 0.0:
                    break
                total += pushed


@dataclass
class SparsePlan:
    """Sparse coupling: maps (token, draft multiset) to mass.

    Holds either a relaxed solution S (mass only where the token appears
    in the tuple) or, after residual completion, the full coupling C
    whose extra rows refill target mass through resampling.
    """

    entries: dict[tuple[int, tuple[int, ...]], float] = field(default_factory=dict)

    @property
    def objective(self) -> float:
        return float(math.fsum(self.entries.values()))

    def acceptance(self) -> float:
        """Mass placed on pairs where the token is inside its tuple."""
        return float(
            math.fsum(v for (i, ms), v in self.entries.items() if i in ms)
        )

    def row_sums(self, vocab_size: int) -> np.ndarray:
        rows = [0.0] * vocab_size
        acc: dict[int, list[float]] = {}
        for (i, _), v in self.entries.items():
            acc.setdefault(i, []).append(v)
        for i, vals in acc.items():
            rows[i] = math.fsum(vals)
        return np.asarray(rows)

    def col_sums(self) -> dict[tuple[int, ...], float]:
        acc: dict[tuple[int, ...], list[float]] = {}
        for (_, ms), v in self.entries.items():
            acc.setdefault(ms, []).append(v)
        return {ms: float(math.fsum(vals)) for ms, vals in acc.items()}


@dataclass
class BipartiteNetwork:
    """A built token -> draft-group network, ready to solve."""

    network: MaxFlowNetwork
    left_tokens: list[int]
    right_groups: list[tuple[int, ...]]
    right_mass: list[float]
    edge_ids: dict[tuple[int, tuple[int, ...]], int]
    source: int
    sink: int

    def solve(self) -> tuple[float, SparsePlan]:
        value = self.network.max_flow(self.source, self.sink)
        entries = {}
        for key, eid in self.edge_ids.items():
            f = self.network.flow_on(eid)
            if f > 0.0:
                entries[key] = f
        return value, SparsePlan(entries)


def _build(
    left: list[int],
    left_caps: list[float],
    groups: list[tuple[int, ...]],
    masses: list[float],
    connect: dict[int, list[int]],
) -> BipartiteNetwork:
    """Wire source -> tokens -> groups -> sink.

    ``connect[g]`` lists indices into ``left`` wired to group g.  Middle
    edges get effectively infinite capacity: one plus the total sink
    capacity can never bind.
    """
    if len(groups) > MAX_RIGHT_NODES:
        raise ValueError(
            f"{len(groups)} draft groups exceeds the {MAX_RIGHT_NODES} limit"
        )
    num_nodes = 2 + len(left) + len(groups)
    net = MaxFlowNetwork(num_nodes)
    source = 0
    sink = num_nodes - 1
    inf_cap = 1.0 + math.fsum(masses)
    for li, tok in enumerate(left):
        net.add_edge(source, 1 + li, left_caps[li])
    edge_ids: dict[tuple[int, tuple[int, ...]], int] = {}
    for gi, group in enumerate(groups):
        gnode = 1 + len(left) + gi
        net.add_edge(gnode, sink, masses[gi])
        for li in connect[gi]:
            eid = net.add_edge(1 + li, gnode, inf_cap)
            edge_ids[(left[li], group)] = eid
    return BipartiteNetwork(
        network=net,
        left_tokens=list(left),
        right_groups=list(groups),
        right_mass=list(masses),
        edge_ids=edge_ids,
        source=source,
        sink=sink,
    )


def _check_group_count(num_tokens: int, n: int, ordered_tuples: bool) -> None:
    # cheap closed-form count so oversized requests fail before enumeration
    count = num_tokens**n if ordered_tuples else math.comb(num_tokens + n - 1, n)
    if count > MAX_RIGHT_NODES:
        raise ValueError(
            f"{count} draft groups exceeds the {MAX_RIGHT_NODES} limit; "
            "use the truncated solver instead"
        )


def _group_catalog(
    instance: ProblemInstance, ordered_tuples: bool
) -> tuple[list[tuple[int, ...]], list[float]]:
    active = [int(t) for t in instance.active_vocab]
    _check_group_count(len(active), instance.n, ordered_tuples)
    if ordered_tuples:
        groups = [tuple(t) for t in product(active, repeat=instance.n)]
        masses = [tuple_mass(instance.q, g) for g in groups]
    else:
        groups = enumerate_multisets(active, instance.n)
        masses = [multiset_mass(instance.q, g) for g in groups]
    return groups, masses


def build_full_network(
    instance: ProblemInstance, ordered_tuples: bool = False
) -> BipartiteNetwork:
    """Whole problem: every active token against every draft group."""
    left = [int(t) for t in instance.active_vocab]
    pos = {tok: li for li, tok in enumerate(left)}
    caps = [float(instance.p.mass[t]) for t in left]
    groups, masses = _group_catalog(instance, ordered_tuples)
    connect = {
        gi: [pos[t] for t in sorted(set(g))] for gi, g in enumerate(groups)
    }
    return _build(left, caps, groups, masses, connect)


def build_outer_network(
    instance: ProblemInstance,
    subset_solution: SubsetSolution,
    residuals: OuterResiduals,
    ordered_tuples: bool = False,
) -> BipartiteNetwork:
    """Tokens outside H* against draft groups not fully inside H*.

    Row capacities are the greedy row totals; a max flow saturates every
    source edge exactly when those totals are feasible, and the columns
    then fill completely as well.
    """
    h = subset_solution.h_star
    left = [int(t) for t in instance.active_vocab if int(t) not in h]
    pos = {tok: li for li, tok in enumerate(left)}
    caps = [float(residuals.p_lower[t]) for t in left]
    groups_all, masses_all = _group_catalog(instance, ordered_tuples)
    groups, masses, connect = [], [], {}
    for g, mass in zip(groups_all, masses_all):
        outside = sorted(set(g) - h)
        if not outside:
            continue
        connect[len(groups)] = [pos[t] for t in outside]
        groups.append(g)
        masses.append(mass)
    return _build(left, caps, groups, masses, connect)


def build_inner_network(
    instance: ProblemInstance,
    subset_solution: SubsetSolution,
    ordered_tuples: bool = False,
) -> BipartiteNetwork:
    """Tokens inside H* against draft groups drawn entirely from H*.

    Rows carry the full target mass of H* and must all saturate; columns
    may go slack, and their leftovers feed the residual resampling row.
    """
    h = sorted(subset_solution.h_star)
    left = [int(t) for t in h]
    pos = {tok: li for li, tok in enumerate(left)}
    caps = [float(instance.p.mass[t]) for t in left]
    _check_group_count(len(left), instance.n, ordered_tuples)
    if ordered_tuples:
        groups = [tuple(t) for t in product(left, repeat=instance.n)]
        masses = [tuple_mass(instance.q, g) for g in groups]
    else:
        groups = enumerate_multisets(left, instance.n)
        masses = [multiset_mass(instance.q, g) for g in groups]
    connect = {
        gi: [pos[t] for t in sorted(set(g))] for gi, g in enumerate(groups)
    }
    return _build(left, caps, groups, masses, connect)


def solve_relaxed_exact(
    instance: ProblemInstance, ordered_tuples: bool = False
) -> SparsePlan:
    """Exact optimum of the relaxed coupling problem via one max flow.

    The plan's objective equals the optimal acceptance probability.
    """
    _, plan = build_full_network(instance, ordered_tuples).solve()
    return plan


def solve_optimized_exact(
    instance: ProblemInstance,
    subset_solution: SubsetSolution,
    residuals: OuterResiduals,
    omega: tuple[int, ...] | list[int],
) -> SparsePlan:
    """Exact solve of just the half relevant to the drafted tuple ``omega``.

    Tuples not fully inside H* touch only the outer system; tuples inside
    touch only the inner one.  Both networks shrink sharply relative to
    the full problem, which is the point of the split.
    """
    inside = all(int(t) in subset_solution.h_star for t in omega)
    if inside:
        net = build_inner_network(instance, subset_solution)
    else:
        net = build_outer_network(instance, subset_solution, residuals)
    _, plan = net.solve()
    return plan


def complete_plan(instance: ProblemInstance, plan: SparsePlan) -> SparsePlan:
    """Extend a relaxed solution S to a full coupling C.

    Unmatched target mass p(i) - row_i and unmatched draft mass per
    column pair up proportionally: the verifier resamples the leftover
    target distribution whenever the coupling leaves a draft group slack.
    """
    rows = plan.row_sums(instance.full_vocab_size)
    res_p = np.clip(instance.p.mass - rows, 0.0, None)
    denom = float(math.fsum(res_p.tolist()))
    entries = dict(plan.entries)
    if denom <= 1e-12:
        return SparsePlan(entries)
    groups = enumerate_multisets([int(t) for t in instance.active_vocab], instance.n)
    cols = plan.col_sums()
    share = res_p / denom
    holders = np.flatnonzero(res_p > 0.0)
    for g in groups:
        slack = multiset_mass(instance.q, g) - cols.get(g, 0.0)
        if slack <= 1e-15:
            continue
        for i in holders:
            key = (int(i), g)
            entries[key] = entries.get(key, 0.0) + slack * float(share[i])
    return SparsePlan(entries)
