"""Parameterized convex quadratic decision problems.

A decision maker solves, for an external signal u and a parameter theta,

    min_x  0.5 x'Qx + c(theta, u)'x
    s.t.   A_ineq(u) x >= b_ineq(theta, u)
           A_eq x      = b_eq(theta, u)

where the cost vector and both right-hand sides are affine in (theta, u),
and the inequality coefficient matrix may optionally depend affinely on u
(needed e.g. when prices multiply the decision in a budget constraint).
The learner's job is to recover theta from (signal, noisy decision) pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog


class ModelError(ValueError):
    """Structural problem: inconsistent dimensions or invalid data."""


def _as_matrix(a, rows, cols, name):
    a = np.zeros((rows, cols)) if a is None else np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape != (rows, cols):
        raise ModelError(f"{name}: expected shape {(rows, cols)}, got {a.shape}")
    return a


def _as_vector(a, size, name):
    a = np.zeros(size) if a is None else np.atleast_1d(np.asarray(a, dtype=float))
    if a.shape != (size,):
        raise ModelError(f"{name}: expected shape {(size,)}, got {a.shape}")
    return a


@dataclass(frozen=True)
class ConcreteQP:
    """A fully numeric convex QP:  min 0.5 x'Qx + c'x  s.t.  Ax >= b, A_eq x = b_eq."""

    Q: np.ndarray
    c: np.ndarray
    A_ineq: np.ndarray
    b_ineq: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def q(self) -> int:
        return self.A_ineq.shape[0]

    @property
    def r(self) -> int:
        return self.A_eq.shape[0]

    def objective(self, x) -> float:
        return float(0.5 * x @ self.Q @ x + self.c @ x)


@dataclass(frozen=True)
class ParamQP:
    """Forward problem whose cost vector and RHS are affine in (theta, u).

    Maps:
        c(theta, u)      = c0 + C_theta @ theta + C_u @ u
        b_ineq(theta, u) = b0_ineq + B_theta @ theta + B_u @ u
        b_eq(theta, u)   = b0_eq + E_theta @ theta + E_u @ u
        A_ineq(u)        = A_ineq + einsum(A_ineq_u, u)   (A_ineq_u optional)

    Zero blocks may be passed as None.
    """

    n: int
    p: int
    m: int
    Q: np.ndarray
    c0: np.ndarray = None
    C_theta: np.ndarray = None
    C_u: np.ndarray = None
    A_ineq: np.ndarray = None
    b0_ineq: np.ndarray = None
    B_theta: np.ndarray = None
    B_u: np.ndarray = None
    A_eq: np.ndarray = None
    b0_eq: np.ndarray = None
    E_theta: np.ndarray = None
    E_u: np.ndarray = None
    A_ineq_u: np.ndarray = None  # (q, n, m): per-row affine dependence of A_ineq on u
    q: int = field(init=False)
    r: int = field(init=False)
    lambda_min: float = field(init=False)

    def __post_init__(self):
        n, p, m = self.n, self.p, self.m
        set_ = lambda k, v: object.__setattr__(self, k, v)

        Q = _as_matrix(self.Q, n, n, "Q")
        if not np.allclose(Q, Q.T, atol=1e-9):
            raise ModelError("Q must be symmetric")
        lam = float(np.linalg.eigvalsh(0.5 * (Q + Q.T))[0]) if n else 0.0
        if lam < -1e-9:
            raise ModelError(f"Q must be positive semidefinite (min eigenvalue {lam:.3e})")
        set_("Q", Q)
        set_("lambda_min", max(lam, 0.0))

        q = 0 if self.A_ineq is None else np.atleast_2d(np.asarray(self.A_ineq)).shape[0]
        r = 0 if self.A_eq is None else np.atleast_2d(np.asarray(self.A_eq)).shape[0]
        set_("q", q)
        set_("r", r)

        set_("c0", _as_vector(self.c0, n, "c0"))
        set_("C_theta", _as_matrix(self.C_theta, n, p, "C_theta"))
        set_("C_u", _as_matrix(self.C_u, n, m, "C_u"))
        set_("A_ineq", _as_matrix(self.A_ineq, q, n, "A_ineq"))
        set_("b0_ineq", _as_vector(self.b0_ineq, q, "b0_ineq"))
        set_("B_theta", _as_matrix(self.B_theta, q, p, "B_theta"))
        set_("B_u", _as_matrix(self.B_u, q, m, "B_u"))
        set_("A_eq", _as_matrix(self.A_eq, r, n, "A_eq"))
        set_("b0_eq", _as_vector(self.b0_eq, r, "b0_eq"))
        set_("E_theta", _as_matrix(self.E_theta, r, p, "E_theta"))
        set_("E_u", _as_matrix(self.E_u, r, m, "E_u"))
        if self.A_ineq_u is not None:
            t = np.asarray(self.A_ineq_u, dtype=float)
            if t.shape != (q, n, m):
                raise ModelError(f"A_ineq_u: expected shape {(q, n, m)}, got {t.shape}")
            set_("A_ineq_u", t)
        for name in ("Q", "c0", "C_theta", "C_u", "A_ineq", "b0_ineq", "B_theta",
                     "B_u", "A_eq", "b0_eq", "E_theta", "E_u", "A_ineq_u"):
            arr = getattr(self, name)
            if arr is not None:
                arr.setflags(write=False)

    def ineq_matrix(self, u) -> np.ndarray:
        if self.A_ineq_u is None:
            return self.A_ineq
        return self.A_ineq + self.A_ineq_u @ np.asarray(u, dtype=float)

    def instantiate(self, theta, u) -> ConcreteQP:
        """Evaluate the affine maps at (theta, u) and return the numeric QP."""
        theta = _as_vector(theta, self.p, "theta")
        u = _as_vector(u, self.m, "u")
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(u))):
            raise ModelError("theta and u must be finite")
        return ConcreteQP(
            Q=self.Q,
            c=self.c0 + self.C_theta @ theta + self.C_u @ u,
            A_ineq=self.ineq_matrix(u),
            b_ineq=self.b0_ineq + self.B_theta @ theta + self.B_u @ u,
            A_eq=self.A_eq,
            b_eq=self.b0_eq + self.E_theta @ theta + self.E_u @ u,
        )

    def fix_theta(self, theta) -> "ParamQP":
        """Fold a fixed theta into the constant terms, leaving a p=0 problem."""
        theta = _as_vector(theta, self.p, "theta")
        return ParamQP(
            n=self.n, p=0, m=self.m, Q=self.Q,
            c0=self.c0 + self.C_theta @ theta, C_u=self.C_u,
            A_ineq=self.A_ineq if self.q else None,
            b0_ineq=self.b0_ineq + self.B_theta @ theta, B_u=self.B_u,
            A_eq=self.A_eq if self.r else None,
            b0_eq=self.b0_eq + self.E_theta @ theta, E_u=self.E_u,
            A_ineq_u=self.A_ineq_u,
        )


@dataclass(frozen=True)
class ParameterBox:
    """Axis-aligned hypothesis set  {theta : lo <= theta <= hi}."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ModelError("box bounds must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ModelError("box must be bounded (finite entries)")
        if np.any(lo > hi):
            raise ModelError("box requires lo <= hi elementwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        lo.setflags(write=False)
        hi.setflags(write=False)

    @property
    def p(self) -> int:
        return self.lo.shape[0]

    @property
    def D(self) -> float:
        """Largest 2-norm over the box, attained at a corner."""
        return float(np.linalg.norm(np.maximum(np.abs(self.lo), np.abs(self.hi))))

    def contains(self, theta, tol=1e-9) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lo - tol) and np.all(theta <= self.hi + tol))

    def project(self, theta) -> np.ndarray:
        return np.clip(np.asarray(theta, dtype=float), self.lo, self.hi)

    def corners(self, max_corners=64, seed=0):
        """All corners when 2^p is small, else a seeded sample of corners."""
        p = self.p
        if 2 ** p <= max_corners:
            grids = np.meshgrid(*[[self.lo[i], self.hi[i]] for i in range(p)], indexing="ij")
            return np.stack([g.ravel() for g in grids], axis=1)
        rng = np.random.default_rng(seed)
        picks = rng.integers(0, 2, size=(max_corners, p))
        return np.where(picks == 0, self.lo, self.hi).astype(float)


@dataclass(frozen=True)
class Observation:
    """One (signal, noisy decision) pair; y may be infeasible for the forward problem."""

    u: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        u = np.atleast_1d(np.asarray(self.u, dtype=float))
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(y))):
            raise ModelError("observation entries must be finite")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)
        u.setflags(write=False)
        y.setflags(write=False)


@dataclass(frozen=True)
class TheoryConstants:
    """Regularity constants used by the learning-rate schedule and monitors."""

    lam: float      # strong-convexity modulus of the forward objective
    B: float        # bound on ||x|| over sampled feasible sets
    R: float        # bound on ||y|| over observations
    kappa: float    # Lipschitz constant of the parameter-difference function
    D: float        # parameter-norm bound from the box


@dataclass(frozen=True)
class ValidationReport:
    constants: TheoryConstants
    warnings: tuple
    strongly_convex: bool


def validate(problem: ParamQP, box: ParameterBox, sample_signals,
             observations=None, seed=0) -> ValidationReport:
    """Check the regularity assumptions and estimate the associated constants.

    lam is exact (smallest eigenvalue of Q), kappa is exact for affine cost
    maps (spectral norm of C_theta), D comes from the box, and B is an
    empirical estimate from maximizing +-x_i over the feasible sets of
    sampled (signal, box-corner) pairs.  R is the largest observed ||y||
    when observations are supplied, else B is reused as a stand-in.
    """
    if box.p != problem.p:
        raise ModelError(f"box dimension {box.p} != problem parameter dimension {problem.p}")
    warnings = []
    lam = problem.lambda_min
    strongly_convex = lam > 1e-9
    if not strongly_convex:
        warnings.append("not strongly convex; solution set may be multivalued")

    kappa = float(np.linalg.norm(problem.C_theta, 2)) if problem.p else 0.0
    D = box.D

    thetas = box.corners(seed=seed) if problem.p else np.zeros((1, 0))
    B = 0.0
    for u in sample_signals:
        for theta in thetas:
            qp = problem.instantiate(theta, u)
            bounds = [(None, None)] * problem.n
            A_ub = -qp.A_ineq if qp.q else None
            b_ub = -qp.b_ineq if qp.q else None
            A_eq = qp.A_eq if qp.r else None
            b_eq = qp.b_eq if qp.r else None
            feasible = True
            for i in range(problem.n):
                for sign in (1.0, -1.0):
                    c = np.zeros(problem.n)
                    c[i] = -sign
                    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                                  bounds=bounds, method="highs")
                    if res.status == 2:
                        warnings.append(f"empty feasible set for a sampled (u, theta); sample skipped")
                        feasible = False
                        break
                    if res.status == 3:
                        warnings.append("feasible set unbounded for a sampled (u, theta)")
                        continue
                    if res.x is not None:
                        B = max(B, float(np.linalg.norm(res.x)))
                if not feasible:
                    break

    if observations is not None:
        R = max((float(np.linalg.norm(o.y)) for o in observations), default=B)
    else:
        R = B
    constants = TheoryConstants(lam=lam, B=B, R=R, kappa=kappa, D=D)
    return ValidationReport(constants=constants, warnings=tuple(warnings),
                            strongly_convex=strongly_convex)
