"""Open-path tour optimization for experienced search.

The objective discounts each leg by the destination node's prior weight:
cost = sum over consecutive pairs (i -> j) of d(i, j) * (1 - beta * w_j).
With beta = 0 this is plain path length. Tours start at node 0 (the robot)
and visit every node once without returning.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

MAX_EXACT_NODES = 12


@dataclass(frozen=True)
class TourNode:
    ident: int
    position: tuple[float, float]
    weight: float = 0.0


@dataclass
class TourProblem:
    """Nodes, pairwise travel costs in meters, and the discount factor beta."""

    nodes: list[TourNode]
    distances: np.ndarray
    beta: float = 0.0

    def __post_init__(self) -> None:
        n = len(self.nodes)
        self.distances = np.asarray(self.distances, dtype=np.float64)
        if self.distances.shape != (n, n):
            raise ValueError("distance matrix must be square over the nodes")
        if (self.distances.diagonal() != 0.0).any():
            raise ValueError("distance matrix diagonal must be zero")
        finite = self.distances[np.isfinite(self.distances)]
        if (finite < 0).any():
            raise ValueError("distances must be nonnegative")
        if self.nodes and self.nodes[0].weight != 0.0:
            self.nodes[0] = TourNode(self.nodes[0].ident, self.nodes[0].position, 0.0)
        for node in self.nodes:
            if not 0.0 <= node.weight <= 1.0:
                raise ValueError("node weights must lie in [0, 1]")
            if self.beta * node.weight >= 1.0:
                raise ValueError("beta * weight must stay below 1 to keep legs positive")

    @property
    def n(self) -> int:
        return len(self.nodes)

    def discounted(self) -> np.ndarray:
        """Edge costs with the destination-weight discount applied."""
        w = np.array([node.weight for node in self.nodes])
        return self.distances * (1.0 - self.beta * w)[None, :]


@dataclass(frozen=True)
class Tour:
    order: tuple[int, ...]
    cost: float


def _check_order(problem: TourProblem, order: Sequence[int]) -> None:
    if len(order) != problem.n or sorted(order) != list(range(problem.n)):
        raise ValueError("order must be a permutation of all nodes")
    if order[0] != 0:
        raise ValueError("tours start at node 0")


def tour_cost(problem: TourProblem, order: Sequence[int]) -> float:
    """Discounted cost of visiting the nodes in the given order."""
    _check_order(problem, order)
    disc = problem.discounted()
    return float(sum(disc[a, b] for a, b in zip(order[:-1], order[1:])))


def solve_exact(problem: TourProblem) -> Tour:
    """Globally optimal tour by dynamic programming over subsets.

    Limited to MAX_EXACT_NODES nodes. Cost ties resolve to the
    lexicographically smallest visiting order.
    """
    n = problem.n
    if n > MAX_EXACT_NODES:
        raise ValueError("use heuristic")
    if n == 1:
        return Tour((0,), 0.0)
    disc = problem.discounted()
    # bit b of a mask stands for node b+1; states hold (cost, path) so equal
    # costs compare by path and the lexicographic tie-break falls out
    states: dict[tuple[int, int], tuple[float, tuple[int, ...]]] = {}
    for j in range(1, n):
        states[(1 << (j - 1), j)] = (disc[0, j], (0, j))
    full = (1 << (n - 1)) - 1
    for mask in range(1, full + 1):
        for last in range(1, n):
            state = states.get((mask, last))
            if state is None:
                continue
            cost, path = state
            for nxt in range(1, n):
                bit = 1 << (nxt - 1)
                if mask & bit:
                    continue
                cand = (cost + disc[last, nxt], path + (nxt,))
                key = (mask | bit, nxt)
                if key not in states or cand < states[key]:
                    states[key] = cand
    best = min(states[(full, last)] for last in range(1, n) if (full, last) in states)
    return Tour(best[1], best[0])


def nearest_neighbor_order(problem: TourProblem) -> tuple[int, ...]:
    """Greedy construction on discounted edge costs; index breaks ties."""
    disc = problem.discounted()
    order = [0]
    remaining = set(range(1, problem.n))
    while remaining:
        here = order[-1]
        nxt = min(remaining, key=lambda j: (disc[here, j], j))
        order.append(nxt)
        remaining.remove(nxt)
    return tuple(order)


def _leg_sum(disc: np.ndarray, seq: Sequence[int]) -> float:
    return float(sum(disc[a, b] for a, b in zip(seq[:-1], seq[1:])))


def two_opt(problem: TourProblem, order: Sequence[int]) -> tuple[int, ...]:
    """Best-improvement 2-opt (segment reversal) until no move helps.

    The discount makes edge costs direction-dependent, so each candidate is
    evaluated by full recomputation; moves are only taken when they strictly
    reduce cost, which keeps improvement monotone.
    """
    _check_order(problem, order)
    disc = problem.discounted()
    current = list(order)
    current_cost = _leg_sum(disc, current)
    while True:
        best = None
        for i in range(1, problem.n - 1):
            for j in range(i + 1, problem.n):
                candidate = current[:i] + current[i : j + 1][::-1] + current[j + 1 :]
                cand_cost = _leg_sum(disc, candidate)
                if cand_cost < current_cost - 1e-12 and (best is None or cand_cost < best[0]):
                    best = (cand_cost, candidate)
        if best is None:
            return tuple(current)
        current_cost, current = best


def _relocate(problem: TourProblem, order: Sequence[int]) -> tuple[int, ...]:
    """Or-opt companion move: re-insert single nodes and pairs elsewhere."""
    disc = problem.discounted()
    current = list(order)
    current_cost = _leg_sum(disc, current)
    improved = True
    while improved:
        improved = False
        for seg_len in (1, 2):
            for i in range(1, problem.n - seg_len + 1):
                seg = current[i : i + seg_len]
                rest = current[:i] + current[i + seg_len :]
                for k in range(1, len(rest) + 1):
                    candidate = rest[:k] + seg + rest[k:]
                    cand_cost = _leg_sum(disc, candidate)
                    if cand_cost < current_cost - 1e-12:
                        current, current_cost = candidate, cand_cost
                        improved = True
                        break
                if improved:
                    break
            if improved:
                break
    return tuple(current)


def solve_heuristic(problem: TourProblem) -> Tour:
    """Nearest-neighbor start polished by alternating 2-opt and relocation
    passes until neither improves; deterministic, never worse than the
    nearest-neighbor tour."""
    if problem.n < 2:
        raise ValueError("heuristic needs at least 2 nodes")
    order = nearest_neighbor_order(problem)
    cost = tour_cost(problem, order)
    while True:
        order = _relocate(problem, two_opt(problem, order))
        new_cost = tour_cost(problem, order)
        if new_cost >= cost - 1e-12:
            break
        cost = new_cost
    return Tour(order, cost)


def solve(problem: TourProblem) -> Tour:
    """Exact solver when small enough, heuristic otherwise."""
    if problem.n <= MAX_EXACT_NODES:
        return solve_exact(problem)
    return solve_heuristic(problem)
