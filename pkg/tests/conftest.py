"""Shared scenario builders for the test suite.

Two scenarios carry most of the frozen numbers: a pair of second-order
stable systems with very different noise levels competing for one sensor,
and a trio of marginally stable scalar plants observed through
measurement delays.
"""
from __future__ import annotations

import sys

import numpy as np
import pytest

from sensorsched import DelayChainSpec, LtiTarget, expand_delay_chain


def make_pair() -> list[LtiTarget]:
    noisy = LtiTarget(
        A=[[0.0, 1.0], [-0.49, 1.4]],
        C=[[1.0, 0.0]],
        Q=5.0 * np.eye(2),
        R=[[0.5]],
        label="noisy",
    )
    drifty = LtiTarget(
        A=[[0.0, 1.0], [-0.72, 1.7]],
        C=[[1.0, 0.0]],
        Q=np.eye(2),
        R=[[1.0]],
        label="drifty",
    )
    return [noisy, drifty]


def make_chain_trio() -> list[LtiTarget]:
    specs = [
        (DelayChainSpec(a=1.0, Q=1.0, R=1.0, d=1), "near"),
        (DelayChainSpec(a=1.0, Q=2.0, R=1.0, d=2), "mid"),
        (DelayChainSpec(a=1.0, Q=5.0, R=1.0, d=2), "far"),
    ]
    return [expand_delay_chain(s, label=lbl) for s, lbl in specs]


@pytest.fixture()
def pair() -> list[LtiTarget]:
    return make_pair()


@pytest.fixture(scope="session")
def unstable_scalar() -> LtiTarget:
    """Scalar plant with a = 2, so q^c = 0.75.

    Session-scoped on purpose: locating the critical probability is the
    slowest computation in the suite and is memoized on the instance.
    """
    return LtiTarget(A=[[2.0]], C=[[1.0]], Q=[[1.0]], R=[[1.0]], label="unstable")


@pytest.fixture()
def chain_trio() -> list[LtiTarget]:
    return make_chain_trio()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print the acceptance-criteria outcome table after the run."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULT_LINES", None) if mod else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
