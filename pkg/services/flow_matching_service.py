"""Matching under multiplicity constraints as minimum-cost flow.

The network is source -> treated [m_t, M_t] -> control [0, 1] at cost d -> sink
[m_c, M_c], closed by a sink -> source bypass arc fixed at the pair count k. Lower
bounds are moved into node excesses and routed from a super source to a super sink
with successive shortest paths; node potentials keep reduced costs nonnegative so
Dijkstra applies to real-valued distances.
"""
import logging
from itertools import combinations
from typing import Literal

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import csgraph_from_dense, dijkstra, maximum_flow

from models.errors import InfeasibleSpecError, InstanceTooLargeError
from models.matching import DistanceMatrix, Match, MatchSolution, MatchSpec

logger = logging.getLogger(__name__)

TOL = 1e-9
BRUTE_FORCE_LIMIT = 36

Objective = Literal["avg", "total"]


def _values(D: DistanceMatrix | np.ndarray) -> np.ndarray:
    if isinstance(D, DistanceMatrix):
        return D.values
    values = np.asarray(D, dtype=float)
    if values.ndim != 2 or not np.all(np.isfinite(values)) or np.any(values < 0.0):
        raise ValueError("distances must be a finite nonnegative matrix")
    return values


def _pair_bounds(n_t: int, n_c: int, spec: MatchSpec) -> tuple[int, int]:
    k_min = max(n_t * spec.m_t, n_c * spec.m_c)
    k_max = min(n_t * min(spec.M_t, n_c), n_c * min(spec.M_c, n_t))
    return k_min, k_max


class FlowNetwork:
    """Arc list of the matching network; arcs are stored in insertion order."""

    def __init__(self: "FlowNetwork", costs: np.ndarray, spec: MatchSpec) -> None:
        self.costs = costs
        self.spec = spec
        self.n_t, self.n_c = costs.shape
        self.source = 0
        self.sink = 1 + self.n_t + self.n_c
        self.super_source = self.sink + 1
        self.super_sink = self.sink + 2
        self.node_count = self.sink + 3

        treated = 1 + np.arange(self.n_t)
        control = 1 + self.n_t + np.arange(self.n_c)
        tails = [np.zeros(self.n_t, dtype=int), np.repeat(treated, self.n_c), control]
        heads = [treated, np.tile(control, self.n_t), np.full(self.n_c, self.sink)]
        lowers = [np.full(self.n_t, spec.m_t), np.zeros(self.n_t * self.n_c, dtype=int), np.full(self.n_c, spec.m_c)]
        uppers = [np.full(self.n_t, spec.M_t), np.ones(self.n_t * self.n_c, dtype=int), np.full(self.n_c, spec.M_c)]
        arc_costs = [np.zeros(self.n_t), costs.reshape(-1), np.zeros(self.n_c)]

        self.tail = np.concatenate(tails)
        self.head = np.concatenate(heads)
        self.lower = np.concatenate(lowers).astype(int)
        self.upper = np.concatenate(uppers).astype(int)
        self.cost = np.concatenate(arc_costs).astype(float)
        self.pair_arcs = slice(self.n_t, self.n_t + self.n_t * self.n_c)
        self.arc_index = np.full((self.node_count, self.node_count), -1, dtype=int)
        self.arc_index[self.tail, self.head] = np.arange(self.tail.size)

    def excess(self: "FlowNetwork", k: int) -> np.ndarray:
        """Node excess after forcing every arc to its lower bound (bypass carries k)."""
        b = np.zeros(self.node_count, dtype=int)
        np.add.at(b, self.head, self.lower)
        np.subtract.at(b, self.tail, self.lower)
        b[self.source] += k
        b[self.sink] -= k
        return b

    def is_feasible(self: "FlowNetwork", k: int) -> bool:
        b = self.excess(k)
        capacity = np.zeros((self.node_count, self.node_count), dtype=np.int32)
        np.add.at(capacity, (self.tail, self.head), self.upper - self.lower)
        positive = np.flatnonzero(b > 0)
        negative = np.flatnonzero(b < 0)
        capacity[self.super_source, positive] = b[positive]
        capacity[negative, self.super_sink] = -b[negative]
        flow = maximum_flow(csr_matrix(capacity), self.super_source, self.super_sink)
        return int(flow.flow_value) == int(b[positive].sum())


class MinCostFlowSolver:
    """Successive shortest paths with potentials for an exact pair count k."""

    def __init__(self: "MinCostFlowSolver", network: FlowNetwork) -> None:
        self.network = network
        self.k: int | None = None
        self.__flow = np.zeros(network.tail.size, dtype=int)
        self.__potential = np.zeros(network.node_count)
        self.__super_tail = np.empty(0, dtype=int)
        self.__super_head = np.empty(0, dtype=int)
        self.__super_cap = np.empty(0, dtype=int)
        self.__super_flow = np.empty(0, dtype=int)

    def solve(self: "MinCostFlowSolver", k: int) -> bool:
        net = self.network
        b = net.excess(k)
        positive = np.flatnonzero(b > 0)
        negative = np.flatnonzero(b < 0)
        self.__super_tail = np.concatenate([np.full(positive.size, net.super_source), negative])
        self.__super_head = np.concatenate([positive, np.full(negative.size, net.super_sink)])
        self.__super_cap = np.concatenate([b[positive], -b[negative]]).astype(int)
        self.__super_flow = np.zeros(self.__super_cap.size, dtype=int)
        self.__flow[:] = 0
        self.__potential[:] = 0.0
        self.k = None

        required = int(b[positive].sum())
        sent = 0
        while sent < required:
            pushed = self.__augment(net.super_source, net.super_sink, include_super=True, limit=required - sent)
            if pushed == 0:
                return False
            sent += pushed
        self.k = k
        return True

    def extend(self: "MinCostFlowSolver") -> bool:
        """Push one more pair through the solved network: optimal flow for k + 1."""
        if self.k is None:
            raise ValueError("solve() must succeed before extend()")
        net = self.network
        if self.__augment(net.source, net.sink, include_super=False, limit=1) == 0:
            return False
        self.k += 1
        return True

    @property
    def total_cost(self: "MinCostFlowSolver") -> float:
        net = self.network
        return float(np.dot(self.__flow[net.pair_arcs], net.cost[net.pair_arcs]))

    def edges(self: "MinCostFlowSolver") -> list[tuple[int, int]]:
        net = self.network
        used = np.flatnonzero(self.__flow[net.pair_arcs] > 0)
        return [(int(arc // net.n_c), int(arc % net.n_c)) for arc in used]

    def __augment(
        self: "MinCostFlowSolver", start: int, target: int, include_super: bool, limit: int
    ) -> int:
        net = self.network
        tail, head, cost = net.tail, net.head, net.cost
        residual = net.upper - net.lower - self.__flow
        if include_super:
            tail = np.concatenate([tail, self.__super_tail])
            head = np.concatenate([head, self.__super_head])
            cost = np.concatenate([cost, np.zeros(self.__super_tail.size)])
            residual = np.concatenate([residual, self.__super_cap - self.__super_flow])
            flow = np.concatenate([self.__flow, self.__super_flow])
        else:
            flow = self.__flow

        pi = self.__potential
        reduced = np.full((net.node_count, net.node_count), np.inf)
        forward = residual > 0
        reduced[tail[forward], head[forward]] = cost[forward] + pi[tail[forward]] - pi[head[forward]]
        backward = flow > 0
        reduced[head[backward], tail[backward]] = -cost[backward] + pi[head[backward]] - pi[tail[backward]]
        np.maximum(reduced, 0.0, out=reduced)

        graph = csgraph_from_dense(reduced, null_value=np.inf)
        distance, predecessor = dijkstra(graph, directed=True, indices=start, return_predecessors=True)
        if not np.isfinite(distance[target]):
            return 0
        self.__potential += np.minimum(distance, distance[target])

        path = [target]
        while path[-1] != start:
            path.append(int(predecessor[path[-1]]))
        path.reverse()

        original = net.tail.size
        steps = []
        for u, v in zip(path[:-1], path[1:]):
            if u == net.super_source or v == net.super_sink:
                # super arcs only ever start or end a path
                steps.append((original + self.__super_arc(u, v), 1))
                continue
            arc = net.arc_index[u, v]
            if arc >= 0 and residual[arc] > 0:
                steps.append((int(arc), 1))
            else:
                steps.append((int(net.arc_index[v, u]), -1))
        amount = min(limit, *[residual[a] if sign > 0 else flow[a] for a, sign in steps])

        for arc, sign in steps:
            if arc < original:
                self.__flow[arc] += sign * amount
            else:
                self.__super_flow[arc - original] += sign * amount
        return int(amount)

    def __super_arc(self: "MinCostFlowSolver", u: int, v: int) -> int:
        matches = np.flatnonzero((self.__super_tail == u) & (self.__super_head == v))
        return int(matches[0])


class _PairCostOracle:
    """Caches f(k), the minimum total distance over matches with exactly k pairs."""

    def __init__(self: "_PairCostOracle", costs: np.ndarray, spec: MatchSpec) -> None:
        self.network = FlowNetwork(costs, spec)
        self.solver = MinCostFlowSolver(self.network)
        self.costs: dict[int, float | None] = {}
        self.edges: dict[int, list[tuple[int, int]]] = {}

    def pair(self: "_PairCostOracle", k: int) -> tuple[float | None, float | None]:
        if k not in self.costs or k + 1 not in self.costs:
            if not self.solver.solve(k):
                self.costs[k] = None
                return None, None
            self.__record(k)
            if self.solver.extend():
                self.__record(k + 1)
            else:
                self.costs[k + 1] = None
        return self.costs[k], self.costs[k + 1]

    def at(self: "_PairCostOracle", k: int) -> float | None:
        if k not in self.costs:
            self.costs[k] = self.__record(k) if self.solver.solve(k) else None
        return self.costs[k]

    def __record(self: "_PairCostOracle", k: int) -> float:
        self.costs[k] = self.solver.total_cost
        self.edges[k] = self.solver.edges()
        logger.debug("f(%d) = %.12g", k, self.costs[k])
        return self.costs[k]


def feasible_pair_range(n_t: int, n_c: int, spec: MatchSpec) -> tuple[int, int]:
    """(k_min, k_max) of feasible pair counts, at least one pair; raises when empty."""
    if n_t == 0 or n_c == 0:
        raise InfeasibleSpecError(f"matching needs both groups nonempty (n_t={n_t}, n_c={n_c})")
    if spec.m_t > n_c:
        raise InfeasibleSpecError(f"lower bound m_t={spec.m_t} exceeds the {n_c} control units")
    if spec.m_c > n_t:
        raise InfeasibleSpecError(f"lower bound m_c={spec.m_c} exceeds the {n_t} treated units")
    k_min, k_max = _pair_bounds(n_t, n_c, spec)
    if n_c * spec.m_c > n_t * spec.M_t:
        raise InfeasibleSpecError(
            f"control lower bound m_c*n_c={n_c * spec.m_c} exceeds treated capacity M_t*n_t={n_t * spec.M_t}"
        )
    if n_t * spec.m_t > n_c * spec.M_c:
        raise InfeasibleSpecError(
            f"treated lower bound m_t*n_t={n_t * spec.m_t} exceeds control capacity M_c*n_c={n_c * spec.M_c}"
        )
    k_min = max(k_min, 1)
    if k_min > k_max:
        raise InfeasibleSpecError(f"no pair count satisfies the bounds (k_min={k_min}, k_max={k_max})")

    network = FlowNetwork(np.zeros((n_t, n_c)), spec)
    for k in (k_min, k_max):
        if not network.is_feasible(k):
            raise InfeasibleSpecError(f"feasibility flow failed for k={k} under {spec}")
    return k_min, k_max


def mcf_exact_pairs(
    D: DistanceMatrix | np.ndarray, spec: MatchSpec, k: int
) -> tuple[float, Match] | None:
    """Cheapest match with exactly k pairs, or None when k is infeasible."""
    if k < 0:
        raise ValueError(f"pair count must be nonnegative, got {k}")
    values = _values(D)
    n_t, n_c = values.shape
    k_min, k_max = _pair_bounds(n_t, n_c, spec)
    if k < k_min or k > k_max:
        return None
    solver = MinCostFlowSolver(FlowNetwork(values, spec))
    if not solver.solve(k):
        return None
    return solver.total_cost, Match.from_edges(solver.edges(), values)


def _search(values: np.ndarray, spec: MatchSpec, objective: Objective) -> MatchSolution:
    n_t, n_c = values.shape
    k_lo, k_hi = feasible_pair_range(n_t, n_c, spec)
    oracle = _PairCostOracle(values, spec)

    def rises(k: int) -> bool:
        # f is convex in k, so both criteria switch from False to True exactly once
        f0, f1 = oracle.pair(k)
        if f0 is None:
            raise InfeasibleSpecError(f"pair count {k} inside [{k_lo}, {k_hi}] is infeasible")
        if f1 is None:
            return True
        if objective == "avg":
            return f1 / (k + 1) > f0 / k + TOL
        return f1 > f0 + TOL

    lo, hi = k_lo, k_hi
    while lo < hi:
        mid = (lo + hi) // 2
        logger.debug("search k=%d in [%d, %d]", mid, lo, hi)
        if rises(mid):
            hi = mid
        else:
            lo = mid + 1

    if oracle.at(lo) is None:
        raise InfeasibleSpecError(f"pair count {lo} is infeasible under {spec}")
    match = Match.from_edges(oracle.edges[lo], values)
    logger.info(
        "%s-objective match: k=%d in [%d, %d], total=%.6g, average=%.6g",
        objective, len(match), k_lo, k_hi, match.total, match.average,
    )
    probes = {k: v for k, v in oracle.costs.items() if v is not None}
    return MatchSolution(match=match, objective=objective, probes=probes)


def min_total_match(D: DistanceMatrix | np.ndarray, spec: MatchSpec) -> MatchSolution:
    return _search(_values(D), spec, "total")


def min_avg_match(D: DistanceMatrix | np.ndarray, spec: MatchSpec) -> MatchSolution:
    return _search(_values(D), spec, "avg")


def solve_match(D: DistanceMatrix | np.ndarray, spec: MatchSpec, objective: Objective = "avg") -> MatchSolution:
    if objective == "avg":
        return min_avg_match(D, spec)
    if objective == "total":
        return min_total_match(D, spec)
    raise ValueError(f"unknown objective {objective!r}")


def brute_force_match(
    D: DistanceMatrix | np.ndarray, spec: MatchSpec, objective: Objective = "avg"
) -> MatchSolution:
    """Exact search over every pair set obeying the multiplicity bounds.

    Treated rows are added one at a time. A state is the control-degree vector and
    holds the cheapest total for every pair count reached so far; the match is
    recovered by walking the row tables backwards.
    """
    values = _values(D)
    n_t, n_c = values.shape
    if n_t * n_c > BRUTE_FORCE_LIMIT:
        raise InstanceTooLargeError(f"{n_t}x{n_c} instance exceeds {BRUTE_FORCE_LIMIT} candidate pairs")

    width = n_t * n_c + 1
    base = spec.M_c + 1
    powers = base ** np.arange(n_c, dtype=np.int64)
    sizes = range(spec.m_t, min(spec.M_t, n_c) + 1)
    options = [subset for size in sizes for subset in combinations(range(n_c), size)]
    increments = np.zeros((len(options), n_c), dtype=np.int64)
    for o, subset in enumerate(options):
        increments[o, list(subset)] = 1
    steps = increments @ powers
    row_costs = np.array([[values[i, list(subset)].sum() for subset in options] for i in range(n_t)])

    codes = np.zeros(1, dtype=np.int64)
    costs = np.full((1, width), np.inf)
    costs[0, 0] = 0.0
    tables = [(codes, costs)]
    for row in range(n_t):
        remaining = n_t - row - 1
        degrees = (codes[:, None] // powers) % base
        reached_codes, reached_costs = [], []
        for o, subset in enumerate(options):
            after = degrees + increments[o]
            ok = np.all(after <= spec.M_c, axis=1) & np.all(after + remaining >= spec.m_c, axis=1)
            if not ok.any():
                continue
            size = len(subset)
            shifted = np.full((int(ok.sum()), width), np.inf)
            shifted[:, size:] = costs[ok, : width - size] + row_costs[row, o]
            reached_codes.append(codes[ok] + steps[o])
            reached_costs.append(shifted)
        if not reached_codes:
            raise InfeasibleSpecError(f"no match satisfies {spec} on a {n_t}x{n_c} instance")
        codes, inverse = np.unique(np.concatenate(reached_codes), return_inverse=True)
        costs = np.full((codes.size, width), np.inf)
        np.minimum.at(costs, inverse.reshape(-1), np.vstack(reached_costs))
        tables.append((codes, costs))

    best_k, best_score = None, np.inf
    totals = costs.min(axis=0)
    for k in range(1, width):
        if not np.isfinite(totals[k]):
            continue
        score = totals[k] / k if objective == "avg" else totals[k]
        # k ascends, so a tie moves the choice to the larger pair count
        if best_k is None or score <= best_score + TOL:
            best_k, best_score = k, min(score, best_score)
    if best_k is None:
        raise InfeasibleSpecError(f"no match satisfies {spec} on a {n_t}x{n_c} instance")

    edges: list[tuple[int, int]] = []
    k = best_k
    state = int(np.argmin(costs[:, k]))
    for row in range(n_t - 1, -1, -1):
        codes, costs = tables[row + 1]
        parent_codes, parent_costs = tables[row]
        code, target = codes[state], costs[state, k]
        digits = (code // powers) % base
        for o, subset in enumerate(options):
            size = len(subset)
            if size > k or np.any(digits < increments[o]):
                continue
            parent = int(np.searchsorted(parent_codes, code - steps[o]))
            if parent >= parent_codes.size or parent_codes[parent] != code - steps[o]:
                continue
            if parent_costs[parent, k - size] + row_costs[row, o] == target:
                edges.extend((row, j) for j in subset)
                state, k = parent, k - size
                break
    return MatchSolution(match=Match.from_edges(edges, values), objective=objective)
