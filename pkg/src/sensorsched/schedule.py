"""Concrete observation schedules drawn from a probability distribution.

Three generators shape the same distribution three ways: i.i.d. random
sampling (what the probabilities literally describe), a deterministic
periodic sequence that keeps the gaps between visits as even as the
occurrence counts allow, and an event-driven contention simulation where
estimators race backoff timers inversely proportional to their
probabilities. All three are deterministic given their seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ScheduleDistribution

__all__ = [
    "ScheduleSequence",
    "BackoffConfig",
    "sample_stochastic_schedule",
    "build_min_consecutive_schedule",
    "max_run_length",
    "simulate_csma_schedule",
    "write_sequence",
    "read_sequence",
]


@dataclass(frozen=True, eq=False)
class ScheduleSequence:
    """A length-L assignment of one target index per sampling step."""

    steps: np.ndarray
    n_targets: int

    def __post_init__(self):
        steps = np.asarray(self.steps, dtype=np.int64).reshape(-1)
        if steps.size == 0:
            raise ValueError("sequence must be nonempty")
        if self.n_targets < 1:
            raise ValueError("n_targets must be positive")
        if steps.min() < 0 or steps.max() >= self.n_targets:
            raise ValueError("sequence entries must be valid target indices")
        steps.flags.writeable = False
        object.__setattr__(self, "steps", steps)

    def __len__(self) -> int:
        return int(self.steps.size)

    def counts(self) -> np.ndarray:
        """Occurrences of each target, length n_targets."""
        return np.bincount(self.steps, minlength=self.n_targets)


@dataclass(frozen=True)
class BackoffConfig:
    """Timing knobs for the contention simulation.

    alpha is the backoff time unit and must be far below the sampling
    period (normalized to 1 here; checked as alpha <= 0.01).
    epsilon_jitter bounds the random probability nudge used to break
    timer collisions. duration is the number of sampling periods, i.e.
    the length of the returned sequence.
    """

    alpha: float = 0.01
    epsilon_jitter: float = 1e-3
    duration: int = 1000

    def __post_init__(self):
        if not 0 < self.alpha <= 0.01:
            raise ValueError("alpha must be in (0, 0.01]: one backoff tick "
                             "must be much shorter than a sampling period")
        if self.epsilon_jitter <= 0:
            raise ValueError("epsilon_jitter must be positive")
        if self.duration < 1:
            raise ValueError("duration must be at least 1")


def sample_stochastic_schedule(q: ScheduleDistribution, L: int, seed: int) -> ScheduleSequence:
    """L independent draws from the categorical distribution q."""
    if L < 1:
        raise ValueError("L must be at least 1")
    rng = np.random.default_rng(seed)
    steps = rng.choice(len(q), size=L, p=q.q)
    return ScheduleSequence(steps=steps, n_targets=len(q))


def _apportion_counts(q: ScheduleDistribution, L: int) -> np.ndarray:
    """Integer occurrence counts summing to L.

    Starts from floor(q_i * L) and hands the remaining slots to the
    targets with the largest fractional parts (ties to the lower index).
    Raises if any floor is zero: the requested length cannot represent
    the distribution, a longer L is needed.
    """
    scaled = q.q * L
    counts = np.floor(scaled).astype(np.int64)
    if np.any(counts == 0):
        worst = int(np.argmin(counts))
        raise ValueError(
            f"floor(q*L) is zero for target {worst} (q={q.q[worst]:.4g}, L={L}); "
            "choose a larger L so every target appears at least once"
        )
    leftovers = L - int(counts.sum())
    if leftovers > 0:
        frac = scaled - counts
        # argsort is stable, so equal fractions go to lower indices first.
        order = np.argsort(-frac, kind="stable")
        counts[order[:leftovers]] += 1
    return counts


def _interleave(counts: np.ndarray) -> tuple[list[int], int]:
    """Algorithmic core: arrange `counts` occurrences with even gaps.

    The most frequent target lays down the backbone; each other target is
    dealt out after every m-th backbone occurrence, m chosen so its
    occurrences divide the backbone as evenly as possible. Occurrences
    that the even deal does not reach are folded in after the last few
    backbone occurrences, which keeps the tail from ending in a long
    constant run. Returns the sequence and a primitive-operation count
    used to assert linear runtime.
    """
    order = sorted(range(len(counts)), key=lambda i: -counts[i])
    ids = [i for i in order if counts[i] > 0]
    primary = ids[0]
    n1 = int(counts[primary])
    after: list[list[int]] = [[] for _ in range(n1 + 1)]
    ops = n1
    for i in ids[1:]:
        ni = int(counts[i])
        m = math.ceil(n1 / (ni + 1))
        placed = min(ni, n1 // m)
        for k in range(1, placed + 1):
            after[k * m].append(i)
            ops += 1
        for j in range(n1 - (ni - placed) + 1, n1 + 1):
            after[j].append(i)
            ops += 1
    seq: list[int] = []
    for j in range(1, n1 + 1):
        seq.append(primary)
        seq.extend(after[j])
        ops += 1 + len(after[j])
    return seq, ops


def build_min_consecutive_schedule(q: ScheduleDistribution, L: int) -> ScheduleSequence:
    """Deterministic length-L sequence matching q with minimal bunching.

    Occurrence counts come from floor(q_i * L) plus largest-fraction
    rounding. For two targets the construction provably minimizes the
    longest constant run among all sequences with those counts; for more
    targets it is a good heuristic with the same even-gap intent.
    """
    if L < 1:
        raise ValueError("L must be at least 1")
    counts = _apportion_counts(q, L)
    seq, _ = _interleave(counts)
    return ScheduleSequence(steps=np.array(seq, dtype=np.int64), n_targets=len(q))


def max_run_length(seq: ScheduleSequence | np.ndarray) -> int:
    """Length of the longest constant run in the sequence."""
    steps = seq.steps if isinstance(seq, ScheduleSequence) else np.asarray(seq)
    if steps.size == 0:
        raise ValueError("sequence must be nonempty")
    boundaries = np.flatnonzero(
        np.concatenate(([True], steps[1:] != steps[:-1], [True]))
    )
    return int(np.diff(boundaries).max())


def simulate_csma_schedule(
    q: ScheduleDistribution,
    cfg: BackoffConfig,
    seed: int,
    with_diagnostics: bool = False,
):
    """Contention-based schedule: timers T_i = alpha / q_i race per slot.

    Every estimator counts its timer down while the channel is idle and
    freezes it while the channel is busy; the first timer to expire takes
    the next whole sampling period and resets to alpha / q_i. Expiries
    closer together than the time resolution (alpha * 1e-9) collide; the
    colliders redraw with probability nudged down by a random epsilon in
    (0, epsilon_jitter] and race again. Over many periods each target's
    observation frequency approaches q_i. Returns the sequence, plus the
    collision count when with_diagnostics is set.
    """
    probs = q.q
    if np.any(probs <= 0):
        raise ValueError("contention simulation needs strictly positive probabilities")
    if cfg.epsilon_jitter >= probs.min():
        raise ValueError(
            "epsilon_jitter must stay below the smallest probability, "
            f"got {cfg.epsilon_jitter} vs {probs.min():.4g}"
        )
    rng = np.random.default_rng(seed)
    resolution = cfg.alpha * 1e-9
    remaining = cfg.alpha / probs
    steps = np.empty(cfg.duration, dtype=np.int64)
    collisions = 0
    for k in range(cfg.duration):
        while True:
            t_min = remaining.min()
            contenders = np.flatnonzero(remaining - t_min <= resolution)
            if contenders.size == 1:
                break
            collisions += 1
            eps = rng.uniform(0.0, cfg.epsilon_jitter, size=contenders.size)
            # uniform() can return 0.0; the nudge must be strictly positive.
            eps = np.maximum(eps, cfg.epsilon_jitter * 1e-12)
            remaining[contenders] = cfg.alpha / (probs[contenders] - eps)
        winner = int(contenders[0])
        # Idle time t_min elapses for everyone, then the channel is busy
        # for the period and frozen timers carry over.
        remaining -= t_min
        remaining[winner] = cfg.alpha / probs[winner]
        steps[k] = winner
    seq = ScheduleSequence(steps=steps, n_targets=len(q))
    return (seq, collisions) if with_diagnostics else seq


def write_sequence(seq: ScheduleSequence, path: str | Path) -> None:
    """Plain text: a header line, then one target index per line."""
    lines = [f"# L={len(seq)} N={seq.n_targets}"]
    lines.extend(str(int(s)) for s in seq.steps)
    Path(path).write_text("\n".join(lines) + "\n")


def read_sequence(path: str | Path) -> ScheduleSequence:
    """Inverse of write_sequence."""
    text = Path(path).read_text().strip().splitlines()
    if not text or not text[0].startswith("# L="):
        raise ValueError(f"{path}: not a schedule file (missing header)")
    head = text[0].lstrip("# ").split()
    L = int(head[0].split("=", 1)[1])
    n = int(head[1].split("=", 1)[1])
    steps = np.array([int(line) for line in text[1:]], dtype=np.int64)
    if steps.size != L:
        raise ValueError(f"{path}: header says L={L} but found {steps.size} steps")
    return ScheduleSequence(steps=steps, n_targets=n)
