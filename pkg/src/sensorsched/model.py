"""Target models for shared-sensor scheduling.

A scenario is a collection of independent discrete-time linear systems
("targets"), each evolving as x[k+1] = A x[k] + w[k] with measurement
y[k] = C x[k] + v[k], observed by a single shared sensor. One target is
observed per sampling period, so scheduling amounts to choosing which
target gets the sensor at each step, or with what probability.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LtiTarget",
    "DelayChainSpec",
    "ScheduleDistribution",
    "ValidationReport",
    "validate_target",
    "expand_delay_chain",
]

# Relative singular-value threshold for the PBH rank tests below.
_PBH_RTOL = 1e-8


def _as_square(name: str, value) -> np.ndarray:
    M = np.atleast_2d(np.asarray(value, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    return M


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class LtiTarget:
    """One linear target: x[k+1] = A x[k] + w, y[k] = C x[k] + v.

    Q is the process noise covariance, R the measurement noise covariance.
    `cost_weights`, when given, is a vector of nonnegative diagonal weights
    selecting which state variances count toward the target's estimation
    cost; the default (None) counts every state, i.e. the cost of an error
    covariance X is its full trace. Delay-augmented targets use this to
    score only the physical state, see `expand_delay_chain`.

    Arrays are copied and frozen; dimension mismatches raise immediately.
    """

    A: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    label: str = ""
    cost_weights: np.ndarray | None = None
    # critical-probability estimates keyed by bisection width, filled lazily
    _qc_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        A = _as_square("A", self.A)
        n = A.shape[0]
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if C.shape[1] != n:
            raise ValueError(f"C has {C.shape[1]} columns, expected {n}")
        Q = _as_square("Q", self.Q)
        if Q.shape[0] != n:
            raise ValueError(f"Q is {Q.shape[0]}x{Q.shape[0]}, expected {n}x{n}")
        R = _as_square("R", self.R)
        if R.shape[0] != C.shape[0]:
            raise ValueError(
                f"R is {R.shape[0]}x{R.shape[0]}, expected {C.shape[0]}x{C.shape[0]}"
            )
        w = self.cost_weights
        if w is not None:
            w = np.asarray(w, dtype=float).reshape(-1)
            if w.shape[0] != n:
                raise ValueError(f"cost_weights has length {w.shape[0]}, expected {n}")
            if np.any(w < 0):
                raise ValueError("cost_weights must be nonnegative")
            w = _freeze(w)
        object.__setattr__(self, "A", _freeze(A))
        object.__setattr__(self, "C", _freeze(C))
        object.__setattr__(self, "Q", _freeze(Q))
        object.__setattr__(self, "R", _freeze(R))
        object.__setattr__(self, "cost_weights", w)

    @property
    def n(self) -> int:
        """State dimension."""
        return self.A.shape[0]

    @property
    def p(self) -> int:
        """Measurement dimension."""
        return self.C.shape[0]

    def cost_of(self, X: np.ndarray) -> float:
        """Estimation cost of an error covariance: weighted trace."""
        d = np.diag(np.asarray(X))
        if self.cost_weights is None:
            return float(d.sum())
        return float(self.cost_weights @ d)


@dataclass(frozen=True)
class DelayChainSpec:
    """Scalar plant a with a d-step measurement delay.

    The physical state obeys x[k+1] = a x[k] + w[k], Var(w) = Q, and the
    sensor sees y[k] = x[k-d] + v[k], Var(v) = R. `expand_delay_chain`
    turns this into an augmented LtiTarget whose extra states shift the
    delayed value toward the output.
    """

    a: float
    Q: float
    R: float
    d: int = 0

    def __post_init__(self):
        if self.Q <= 0:
            raise ValueError("Q must be positive")
        if self.R <= 0:
            raise ValueError("R must be positive")
        if int(self.d) != self.d or self.d < 0:
            raise ValueError("d must be a nonnegative integer")
        object.__setattr__(self, "d", int(self.d))


@dataclass(frozen=True, eq=False)
class ScheduleDistribution:
    """Probabilities of observing each target in one sampling period.

    Entries must lie in [0, 1] and sum to 1 within 1e-9.
    """

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(-1)
        if q.size == 0:
            raise ValueError("distribution must have at least one entry")
        if np.any(q < 0) or np.any(q > 1):
            raise ValueError(f"probabilities must lie in [0, 1], got {q}")
        if abs(q.sum() - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {q.sum()!r}, expected 1")
        object.__setattr__(self, "q", _freeze(q))

    def __len__(self) -> int:
        return self.q.shape[0]

    def __getitem__(self, i: int) -> float:
        return float(self.q[i])


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of validate_target: hard failures plus advisory warnings."""

    failures: tuple[str, ...]
    warnings: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.failures


def _symmetric(M: np.ndarray, rtol: float = 1e-10) -> bool:
    scale = max(1.0, float(np.abs(M).max()))
    return bool(np.abs(M - M.T).max() <= rtol * scale)


def _psd_sqrt(Q: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((Q + Q.T) / 2)
    vals = np.clip(vals, 0.0, None)
    return vecs @ np.diag(np.sqrt(vals)) @ vecs.T


def _pbh_rank(M: np.ndarray) -> int:
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > _PBH_RTOL * s[0]))


def validate_target(target: LtiTarget) -> ValidationReport:
    """Check a target's noise covariances and structural properties.

    Failures: Q not symmetric positive semidefinite, R not symmetric
    positive definite, or an unobservable mode of A on or outside the unit
    circle (the filter error would then grow without bound no matter how
    often the target is observed). Warnings: Q only positive semidefinite
    (singular) while (A, Q^(1/2)) stays controllable, which the fixed-point
    theory tolerates but full-rank process noise would not require.

    Rank decisions use PBH tests with singular values thresholded at 1e-8
    relative to the largest one.
    """
    failures: list[str] = []
    warns: list[str] = []
    A, C, Q, R = target.A, target.C, target.Q, target.R
    n = target.n

    if not _symmetric(Q):
        failures.append("Q is not symmetric")
    if not _symmetric(R):
        failures.append("R is not symmetric")

    q_eigs = np.linalg.eigvalsh((Q + Q.T) / 2)
    q_scale = max(q_eigs.max(), 0.0)
    if q_eigs.min() < -1e-9 * max(1.0, q_scale):
        failures.append(f"Q has a negative eigenvalue ({q_eigs.min():.3e})")
    r_eigs = np.linalg.eigvalsh((R + R.T) / 2)
    if r_eigs.min() <= 0:
        failures.append(f"R must be positive definite (min eigenvalue {r_eigs.min():.3e})")

    eigs = np.linalg.eigvals(A)

    # Detectability: every mode on or outside the unit circle must be observable.
    for lam in eigs:
        if abs(lam) >= 1.0 - 1e-12:
            pencil = np.vstack([A - lam * np.eye(n), C.astype(complex)])
            if _pbh_rank(pencil) < n:
                failures.append(
                    f"mode {lam:.6g} (|mode| = {abs(lam):.6g}) is unobservable; "
                    "the estimation error diverges even under constant observation"
                )

    # Controllability of (A, Q^(1/2)): needed for the fixed-point convergence
    # guarantees; only a warning when it fails alongside full-rank Q.
    Qh = _psd_sqrt(Q)
    qh_rank = _pbh_rank(Qh)
    controllable = True
    for lam in eigs:
        pencil = np.hstack([A - lam * np.eye(n), Qh.astype(complex)])
        if _pbh_rank(pencil) < n:
            controllable = False
            warns.append(f"(A, Q^(1/2)) is not controllable at mode {lam:.6g}")
            break
    if qh_rank < n and controllable:
        warns.append(
            "Q is singular (positive semidefinite only); accepted because "
            "(A, Q^(1/2)) is controllable"
        )

    return ValidationReport(failures=tuple(failures), warnings=tuple(warns))


def expand_delay_chain(spec: DelayChainSpec, label: str = "") -> LtiTarget:
    """Augment a delayed scalar plant into an explicit LtiTarget.

    The n = d+1 dimensional state stacks the delayed values so that the
    first coordinate is the measured (d steps old) one and the last is the
    physical state: A has ones on the superdiagonal and `a` in the bottom
    right corner, noise enters only the last state (Q_full = B Q B^T with
    B the last unit vector), and C reads the first state. The returned
    target scores estimation cost on the physical state alone
    (cost_weights selects the last coordinate): the other coordinates are
    bookkeeping copies, and counting them would bias scheduling toward
    long chains.
    """
    n = spec.d + 1
    A = np.zeros((n, n))
    for i in range(n - 1):
        A[i, i + 1] = 1.0
    A[n - 1, n - 1] = spec.a
    C = np.zeros((1, n))
    C[0, 0] = 1.0
    Q = np.zeros((n, n))
    Q[n - 1, n - 1] = spec.Q
    R = np.array([[spec.R]])
    w = np.zeros(n)
    w[n - 1] = 1.0
    return LtiTarget(A=A, C=C, Q=Q, R=R, label=label, cost_weights=w)
