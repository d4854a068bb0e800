"""Peer-to-peer version of the probability solver.

Each node owns one target model and talks only to its graph neighbors,
yet the network has to agree on a single distribution. The key
observation is that the only global quantity the bisection needs, the
total probability demand at a trial budget, is the network average of
the per-node demands times the node count, and averages are exactly what
linear consensus computes. So every node runs the same outer bisection
in lockstep on an agreed starting bracket, computes its own inner demand
each step, and replaces the sum with a consensus estimate.

Consensus uses Metropolis weights, which average correctly on any
connected undirected graph. Disagreement decays geometrically, so
iterations continue until the remaining spread cannot flip any node's
comparison against 1; all nodes then take the same branch and the
network reproduces the centralized iterate for iterate. Setup (bracket
growth in degenerate floor cases) and the final read-out of the full
probability vector use plain neighbor flooding instead, which is exact
after diameter-many exchanges.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import LtiTarget, ScheduleDistribution
from .optimizer import (
    Constraints,
    InfeasibilityWarning,
    PerTargetReport,
    SolveReport,
    _bisect_min_q,
    _bracket,
    _CostOracle,
    _critical_floor,
)

__all__ = [
    "NodeState",
    "DistributedReport",
    "complete_graph",
    "ring_graph",
    "line_graph",
    "metropolis_weights",
    "graph_diameter",
    "average_consensus",
    "solve_distributed",
]


def complete_graph(n: int) -> np.ndarray:
    adj = np.ones((n, n), dtype=bool)
    np.fill_diagonal(adj, False)
    return adj


def ring_graph(n: int) -> np.ndarray:
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        adj[i, (i + 1) % n] = adj[(i + 1) % n, i] = True
    np.fill_diagonal(adj, False)
    return adj


def line_graph(n: int) -> np.ndarray:
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n - 1):
        adj[i, i + 1] = adj[i + 1, i] = True
    return adj


def _check_adjacency(adj: np.ndarray) -> np.ndarray:
    adj = np.asarray(adj, dtype=bool)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError("adjacency must be a square matrix")
    if np.any(adj != adj.T):
        raise ValueError("adjacency must be symmetric (undirected graph)")
    if np.any(np.diag(adj)):
        raise ValueError("adjacency must have no self loops")
    if not np.all(_hop_counts(adj) < adj.shape[0] + 1):
        raise ValueError("graph must be connected")
    return adj


def _hop_counts(adj: np.ndarray) -> np.ndarray:
    """All-pairs hop distances by breadth-first search (small graphs)."""
    n = adj.shape[0]
    dist = np.full((n, n), n + 1, dtype=int)
    for s in range(n):
        dist[s, s] = 0
        frontier = [s]
        d = 0
        while frontier:
            d += 1
            nxt = []
            for u in frontier:
                for v in np.nonzero(adj[u])[0]:
                    if dist[s, v] > n:
                        dist[s, v] = d
                        nxt.append(v)
            frontier = nxt
    return dist


def graph_diameter(adj: np.ndarray) -> int:
    adj = np.asarray(adj, dtype=bool)
    if adj.shape[0] == 1:
        return 0
    return int(_hop_counts(adj).max())


def metropolis_weights(adj: np.ndarray) -> np.ndarray:
    """Symmetric doubly stochastic weights for average consensus.

    Edge (i, j) gets 1 / (1 + max(deg_i, deg_j)) and the diagonal absorbs
    the remainder, so the all-ones vector is preserved in both directions
    and repeated application converges to the mean on any connected graph.
    """
    adj = _check_adjacency(adj)
    deg = adj.sum(axis=1)
    W = np.zeros(adj.shape, dtype=float)
    ii, jj = np.nonzero(adj)
    W[ii, jj] = 1.0 / (1.0 + np.maximum(deg[ii], deg[jj]))
    np.fill_diagonal(W, 1.0 - W.sum(axis=1))
    return W


@dataclass(frozen=True)
class NodeState:
    """One node's view after an outer bisection step."""

    node_id: int
    lo: float
    hi: float
    gamma: float
    q_local: float
    rounds: int


@dataclass(frozen=True, eq=False)
class DistributedReport:
    """Distributed solution plus protocol accounting.

    `solution` has the same shape a centralized solve returns. The
    trajectory lists one NodeState per node per outer step, and
    consensus_rounds the message rounds each step spent agreeing on the
    demand (flooding rounds for setup and read-out are in total_rounds).
    """

    solution: SolveReport
    trajectory: tuple[tuple[NodeState, ...], ...]
    consensus_rounds: tuple[int, ...]
    total_rounds: int


def average_consensus(
    values: np.ndarray,
    weights: np.ndarray,
    tol: float = 1e-12,
    max_rounds: int = 100_000,
) -> tuple[np.ndarray, int]:
    """Iterative averaging x <- Wx until every node is within tol of the mean.

    Returns the per-node values and the round count. The simulation knows
    the exact mean and stops against it; a deployed node would instead
    bound the rounds through the weight matrix's spectral gap. Raises if
    max_rounds passes without settling.
    """
    x = np.asarray(values, dtype=float).copy()
    mean = x.mean()
    rounds = 0
    while np.max(np.abs(x - mean)) > tol:
        if rounds >= max_rounds:
            raise RuntimeError(
                f"consensus residual {np.max(np.abs(x - mean)):.3g} "
                f"after {max_rounds} rounds"
            )
        x = weights @ x
        rounds += 1
    return x, rounds


def _flood_values(values: np.ndarray, adj: np.ndarray) -> int:
    """Rounds for every node to learn every entry (diameter of the graph).

    The values themselves travel unchanged, so the simulation only needs
    to count rounds; after them each node holds the identical full vector.
    """
    return graph_diameter(adj)


def _consensus_demand(local: np.ndarray, W: np.ndarray, tol: float, max_rounds: int):
    """Per-node estimates of the total demand, by averaging.

    Iterates x <- W x until the spread is below tol and no node's implied
    total (n times its average) lies within ten worst-case errors of the
    feasibility threshold 1, so every node is guaranteed to branch the
    same way. Returns (estimates, rounds, decided).
    """
    n = local.shape[0]
    x = local.astype(float).copy()
    rounds = 0
    while True:
        spread = float(x.max() - x.min())
        margin = 10.0 * n * spread
        if spread <= tol and not np.any(np.abs(n * x - 1.0) <= margin):
            return n * x, rounds, True
        if rounds >= max_rounds:
            return n * x, rounds, False
        x = W @ x
        rounds += 1


def solve_distributed(
    targets: list[LtiTarget],
    adjacency: np.ndarray | None = None,
    constraints: Constraints | None = None,
    outer_tol: float = 1e-3,
    inner_tol: float = 1e-5,
    mare_tol: float = 1e-9,
    consensus_tol: float = 1e-12,
    max_consensus_rounds: int = 100_000,
) -> DistributedReport:
    """Solve the shared-budget problem with one node per target.

    Produces the same solution as `solve_distribution` on the same
    tolerances (bit for bit when consensus settles every comparison,
    which the decision margin enforces outside of razor-edge cases).
    Defaults to a complete graph; any connected undirected adjacency
    works. Node i knows only targets[i], its constraint entries, and the
    shared tolerances; the starting bracket is agreed during setup.
    """
    if not targets:
        raise ValueError("need at least one target")
    n = len(targets)
    adj = complete_graph(n) if adjacency is None else _check_adjacency(np.asarray(adjacency))
    if adj.shape[0] != n:
        raise ValueError(f"adjacency is {adj.shape[0]} nodes, expected {n}")
    W = metropolis_weights(adj) if n > 1 else np.ones((1, 1))
    cons = constraints or Constraints()
    for name in ("priorities", "loss"):
        v = getattr(cons, name)
        if v is not None and v.shape[0] != n:
            raise ValueError(f"{name} has length {v.shape[0]}, expected {n}")

    losses = [cons.loss_rate(i) for i in range(n)]
    oracles = [_CostOracle(t, mare_tol, loss=losses[i]) for i, t in enumerate(targets)]
    crit = [_critical_floor(t, losses[i], inner_tol, mare_tol) for i, t in enumerate(targets)]
    qcs = [c[0] for c in crit]
    floors = [max(cons.priority(i), crit[i][1]) for i in range(n)]
    total_rounds = 0

    # Feasibility and the starting bracket need one exchange of scalars
    # (floor, cost at q=1, cost at the padded floor); flooding settles
    # them exactly in diameter-many rounds.
    total_rounds += 2 * _flood_values(np.array(floors), adj)
    unstabilizable = any(not np.isfinite(o.cost(1.0)) for o in oracles)
    if sum(floors) > 1.0 or unstabilizable:
        reason = (
            "a target diverges even under constant observation"
            if unstabilizable
            else "priorities and loss-adjusted critical probabilities "
            f"demand total probability {sum(floors):.6g} > 1"
        )
        warnings.warn(reason, InfeasibilityWarning, stacklevel=2)
        per = tuple(
            PerTargetReport(q=float("nan"), cost=float("inf"), q_critical=qcs[i])
            for i in range(n)
        )
        solution = SolveReport(
            gamma_star=float("inf"),
            q_star=None,
            per_target=per,
            outer_iterations=0,
            inner_iterations=0,
            feasible=False,
        )
        return DistributedReport(solution, tuple(() for _ in range(n)), (), total_rounds)

    lo, hi = _bracket(oracles, floors, inner_tol)
    inner_total = 0

    def local_demands(gamma: float) -> np.ndarray:
        nonlocal inner_total
        qs = np.empty(n)
        for i, o in enumerate(oracles):
            q, steps, _ = _bisect_min_q(o, gamma, crit[i][1], inner_tol)
            inner_total += steps
            qs[i] = max(q, cons.priority(i))
        return qs

    # Bracket growth mirrors the centralized solver; these few decisions
    # ride on flooded exact sums rather than averaging.
    prev_mu = float("inf")
    for _ in range(60):
        mu_hi = float(local_demands(hi).sum())
        total_rounds += _flood_values(np.empty(n), adj)
        if mu_hi <= 1.0:
            break
        if mu_hi >= prev_mu:
            warnings.warn(
                "floors leave no slack; they are honored only to within "
                "the inner tolerance",
                InfeasibilityWarning,
                stacklevel=2,
            )
            hi = lo
            break
        prev_mu = mu_hi
        lo, hi = hi, 2.0 * hi

    node_lo = np.full(n, lo)
    node_hi = np.full(n, hi)
    trajectory: list[list[NodeState]] = [[] for _ in range(n)]
    rounds_per_step: list[int] = []
    outer = 0

    while float(node_hi[0] - node_lo[0]) > outer_tol:
        # Lockstep check: every node must hold the same bracket, hence
        # probe the same budget.
        if np.any(node_lo != node_lo[0]) or np.any(node_hi != node_hi[0]):
            raise RuntimeError("nodes fell out of lockstep; consensus margin too small")
        gamma = (node_lo + node_hi) / 2.0
        qs = local_demands(float(gamma[0]))
        mu_est, rounds, decided = _consensus_demand(
            qs, W, consensus_tol, max_consensus_rounds
        )
        if not decided:
            # The total demand sits essentially on the threshold and
            # averaging cannot separate it; fall back to flooding the
            # demands so the branch is exact and unanimous.
            mu_est = np.full(n, qs.sum())
            rounds += _flood_values(qs, adj)
        total_rounds += rounds
        feasible_here = mu_est <= 1.0
        node_hi = np.where(feasible_here, gamma, node_hi)
        node_lo = np.where(feasible_here, node_lo, gamma)
        outer += 1
        rounds_per_step.append(rounds)
        for i in range(n):
            trajectory[i].append(
                NodeState(
                    node_id=i,
                    lo=float(node_lo[i]),
                    hi=float(node_hi[i]),
                    gamma=float(gamma[i]),
                    q_local=float(qs[i]),
                    rounds=rounds,
                )
            )

    gamma_star = float(node_hi[0])
    qs = local_demands(gamma_star)
    total_rounds += _flood_values(qs, adj)
    mu = float(qs.sum())
    q_star = qs / mu
    per = tuple(
        PerTargetReport(
            q=float(q_star[i]),
            cost=oracles[i].cost(float(q_star[i])),
            q_critical=qcs[i],
        )
        for i in range(n)
    )
    solution = SolveReport(
        gamma_star=gamma_star,
        q_star=ScheduleDistribution(q_star),
        per_target=per,
        outer_iterations=outer,
        inner_iterations=inner_total,
        feasible=True,
    )
    return DistributedReport(
        solution=solution,
        trajectory=tuple(tuple(t) for t in trajectory),
        consensus_rounds=tuple(rounds_per_step),
        total_rounds=total_rounds,
    )
