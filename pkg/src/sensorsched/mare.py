"""Riccati fixed points under intermittent observation.

When a target is observed in any sampling period independently with
probability q, the expected one-step-ahead error covariance of its Kalman
filter is bounded by the fixed point of the modified Riccati map

    g_q(X) = A X A^T + Q - q * A X C^T (C X C^T + R)^(-1) C X A^T,

the ordinary Riccati update with the correction term scaled by q. This
module computes g_q, its fixed points (by iterating the map, which is
monotone and converges from any positive semidefinite start whenever a
fixed point exists), the exact fixed point for scalar plants with delayed
measurements, and the critical observation probability below which no
fixed point exists.

Covariance matrices are plain numpy arrays; `check_covariance` enforces
the symmetry and positive-semidefiniteness invariants where inputs enter
the public API.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np

from .model import DelayChainSpec, LtiTarget

__all__ = [
    "MareStatus",
    "MareResult",
    "ConditioningWarning",
    "symmetrize",
    "check_covariance",
    "g_q",
    "solve_mare",
    "closed_form_delay_chain",
    "critical_probability",
    "TRACE_DIVERGENCE_CAP",
]

# A trajectory whose trace passes this cap has certainly diverged.
TRACE_DIVERGENCE_CAP = 1e12
# The growth-ratio divergence signal: trace growing by more than RATIO_EPS
# per step for RATIO_STREAK consecutive iterations, counted only after
# iteration RATIO_START and only once the trace exceeds RATIO_TRACE_FLOOR.
# The floor keeps slowly converging near-critical runs (which can hold a
# per-step growth above 1e-6 for hundreds of iterations while heading to a
# moderate fixed point) from being declared divergent; genuinely divergent
# runs pass any floor on their way to the cap and are only caught sooner.
_RATIO_EPS = 1e-6
_RATIO_STREAK = 50
_RATIO_START = 200
_RATIO_TRACE_FLOOR = 1e8


class ConditioningWarning(UserWarning):
    """Emitted when a solve runs close enough to criticality to be slow."""


class MareStatus(enum.Enum):
    CONVERGED = "converged"
    DIVERGED = "diverged"
    MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True, eq=False)
class MareResult:
    """Outcome of a fixed-point solve.

    X is the fixed point when converged, the last iterate when the
    iteration budget ran out, and None when the trajectory diverged.
    `residual` is ||g_q(X) - X||_F at exit (inf on divergence).
    """

    status: MareStatus
    X: np.ndarray | None
    iterations: int
    residual: float

    @property
    def converged(self) -> bool:
        return self.status is MareStatus.CONVERGED


def symmetrize(M: np.ndarray) -> np.ndarray:
    """Average away the antisymmetric part accumulated by floating point."""
    return (M + M.T) / 2


def check_covariance(X: np.ndarray, name: str = "X") -> np.ndarray:
    """Validate a covariance matrix: symmetric, positive semidefinite.

    Symmetry is required within 1e-10 relative to the largest entry;
    eigenvalues may be negative only below 1e-9 relative to the largest
    one. Returns the symmetrized array.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ValueError(f"{name} must be square, got shape {X.shape}")
    scale = max(1.0, float(np.abs(X).max()))
    if np.abs(X - X.T).max() > 1e-10 * scale:
        raise ValueError(f"{name} is not symmetric")
    X = symmetrize(X)
    eigs = np.linalg.eigvalsh(X)
    if eigs[0] < -1e-9 * max(1.0, eigs[-1]):
        raise ValueError(f"{name} is not positive semidefinite (min eigenvalue {eigs[0]:.3e})")
    return X


def g_q(target: LtiTarget, q: float, X: np.ndarray, *, validate: bool = True) -> np.ndarray:
    """One application of the modified Riccati map.

    Parameters
    ----------
    target : LtiTarget
        Supplies A, C, Q, R.
    q : float
        Observation probability, in [0, 1]. q = 1 is the ordinary Riccati
        update, q = 0 the open-loop (Lyapunov) update.
    X : ndarray
        Current covariance; validated unless `validate=False` (hot loops).

    Returns the symmetrized image, which is again positive semidefinite:
    the map is a convex combination of the open-loop update (q = 0 part)
    and the full Riccati update, both of which preserve the cone.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q!r}")
    if validate:
        X = check_covariance(X)
    A, C, Q, R = target.A, target.C, target.Q, target.R
    M = A @ X @ C.T
    S = C @ X @ C.T + R
    out = A @ X @ A.T + Q - q * (M @ np.linalg.solve(S, M.T))
    return symmetrize(out)


def _near_critical_check(target: LtiTarget, q: float) -> None:
    # q^c is itself defined through solve_mare, so the warning can only use
    # an estimate cached by an earlier critical_probability call.
    cached = [v for v in target._qc_cache.values() if v is not None]
    if cached and 0.0 < q - min(cached) < 1e-3:
        warnings.warn(
            f"q = {q:.6g} is within 1e-3 of the critical probability; "
            "convergence will be slow and the fixed point large",
            ConditioningWarning,
            stacklevel=3,
        )


def solve_mare(
    target: LtiTarget,
    q: float,
    tol: float = 1e-9,
    max_iter: int = 100_000,
    x0: np.ndarray | None = None,
) -> MareResult:
    """Fixed point of g_q by direct iteration.

    Starts from X = Q (or `x0`) and iterates X <- g_q(X) until the step
    ||X_next - X||_F falls below tol * (1 + ||X||_F). Divergence is
    declared when the trace passes TRACE_DIVERGENCE_CAP, or when it grows
    by a factor above 1 + 1e-6 for 50 consecutive iterations past
    iteration 200 while already above 1e8 (slow blowups near the critical
    probability). Exceeding `max_iter` returns MAX_ITERATIONS with the
    last iterate; callers that need a certificate treat that as "no fixed
    point found", never as convergence.

    The iteration converges from any positive semidefinite start when a
    fixed point exists, so x0 only affects the iteration count.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q!r}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    _near_critical_check(target, q)
    X = check_covariance(target.Q, "Q") if x0 is None else check_covariance(x0, "x0")
    tr_prev = float(np.trace(X))
    streak = 0
    for k in range(1, max_iter + 1):
        Xn = g_q(target, q, X, validate=False)
        tr = float(np.trace(Xn))
        if tr > TRACE_DIVERGENCE_CAP:
            return MareResult(MareStatus.DIVERGED, None, k, float("inf"))
        if k > _RATIO_START and tr > tr_prev * (1 + _RATIO_EPS) and tr > _RATIO_TRACE_FLOOR:
            streak += 1
            if streak >= _RATIO_STREAK:
                return MareResult(MareStatus.DIVERGED, None, k, float("inf"))
        else:
            streak = 0
        if np.linalg.norm(Xn - X) <= tol * (1 + np.linalg.norm(X)):
            residual = float(np.linalg.norm(g_q(target, q, Xn, validate=False) - Xn))
            return MareResult(MareStatus.CONVERGED, Xn, k, residual)
        X, tr_prev = Xn, tr
    residual = float(np.linalg.norm(g_q(target, q, X, validate=False) - X))
    return MareResult(MareStatus.MAX_ITERATIONS, X, max_iter, residual)


def closed_form_delay_chain(spec: DelayChainSpec, q: float) -> np.ndarray | None:
    """Exact fixed point for a delayed scalar plant, or None if none exists.

    For the augmented chain produced by `expand_delay_chain` the fixed
    point has the explicit form X[i, j] = a^|i-j| * x[min(i, j)] with the
    diagonal sequence

        a = 1:      x_1 = (Q + sqrt(Q^2 + 4 q Q R)) / (2 q),
                    x_j = x_1 + (j - 1) Q,
        a != 1:     x_1 = (R a^2 - R + Q + sqrt((R a^2 - R + Q)^2
                          - 4 (a^2 - 1 - a^2 q) Q R))
                          / (2 (1 + a^2 q - a^2)),
                    x_j = a^(2(j-1)) x_1 + (1 - a^(2(j-1))) / (1 - a^2) Q,

    and it exists exactly when a^2 (1 - q) < 1: stable chains always
    converge, a marginally stable chain (a = 1) needs q > 0, and an
    unstable one needs q above 1 - 1/a^2. Indices above are 1-based.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q!r}")
    a, Q, R = spec.a, spec.Q, spec.R
    n = spec.d + 1
    if a * a * (1.0 - q) >= 1.0:
        return None
    if a == 1.0:
        x1 = (Q + np.sqrt(Q * Q + 4.0 * q * Q * R)) / (2.0 * q)
        xs = x1 + Q * np.arange(n)
    else:
        u = R * a * a - R + Q
        disc = u * u - 4.0 * (a * a - 1.0 - a * a * q) * Q * R
        x1 = (u + np.sqrt(disc)) / (2.0 * (1.0 + a * a * q - a * a))
        pw = (a * a) ** np.arange(n)  # a^(2(j-1)), safe for negative a
        xs = pw * x1 + (1.0 - pw) / (1.0 - a * a) * Q
    i = np.arange(n)
    X = (a ** np.abs(i[:, None] - i[None, :])) * xs[np.minimum(i[:, None], i[None, :])]
    return symmetrize(X)


def critical_probability(
    target: LtiTarget,
    tol: float = 1e-4,
    *,
    mare_tol: float = 1e-9,
    mare_max_iter: int = 300_000,
) -> float:
    """Least observation probability with a certified fixed point.

    Stable and marginally stable targets (spectral radius <= 1) return 0.0
    exactly. Otherwise the feasibility frontier is bracketed by bisection
    on q with solve_mare convergence as the predicate, to width `tol`, and
    the feasible endpoint is returned (so the result errs upward, never
    below the true critical probability by more than the solver can
    certify). If even q = 1 fails to converge the target cannot be
    scheduled at all: returns 1.0 and emits a RuntimeWarning.

    Certifying convergence at distance delta above the frontier takes on
    the order of 1/delta iterations, hence the larger default iteration
    budget than solve_mare's. Results are cached on the target per tol.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if tol in target._qc_cache:
        return target._qc_cache[tol]
    rho = float(np.max(np.abs(np.linalg.eigvals(target.A))))
    if rho <= 1.0:
        target._qc_cache[tol] = 0.0
        return 0.0
    if not solve_mare(target, 1.0, tol=mare_tol, max_iter=mare_max_iter).converged:
        warnings.warn(
            f"target {target.label or '?'}: no fixed point even at q = 1; "
            "it cannot be stabilized by any schedule",
            RuntimeWarning,
            stacklevel=2,
        )
        target._qc_cache[tol] = 1.0
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if solve_mare(target, mid, tol=mare_tol, max_iter=mare_max_iter).converged:
            hi = mid
        else:
            lo = mid
    target._qc_cache[tol] = hi
    return hi
