"""Shared helpers for the test suite."""

import numpy as np
import pytest

from invonline.model import ConcreteQP


def random_strict_qp(rng, n_max=6, q_max=8, with_eq=False):
    """A random strictly convex, feasible, bounded inequality-form QP."""
    n = int(rng.integers(1, n_max + 1))
    q = int(rng.integers(1, q_max + 1))
    M = rng.uniform(-1, 1, (n, n))
    Q = M.T @ M + np.diag(rng.uniform(0.5, 2.0, n))
    c = rng.uniform(-2, 2, n)
    A = rng.uniform(-1, 1, (q, n))
    x0 = rng.uniform(-1, 1, n)
    b = A @ x0 - rng.uniform(0.1, 2.0, q)          # x0 strictly feasible
    if with_eq and n >= 2:
        r = int(rng.integers(1, min(n, 3)))
        Ae = rng.uniform(-1, 1, (r, n))
        be = Ae @ x0
    else:
        Ae, be = np.zeros((0, n)), np.zeros(0)
    return ConcreteQP(Q=Q, c=c, A_ineq=A, b_ineq=b, A_eq=Ae, b_eq=be)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
