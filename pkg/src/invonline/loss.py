"""Prediction loss: squared distance from an observed decision to the
optimal solution set of the instantiated forward problem.

Strongly convex forward problems have a unique optimum, so one solve
suffices.  When the quadratic term is singular the solution set is the
optimal face  {x feasible : Q x = Q x*, c'x = c'x*}  (a polyhedron), and
the exact distance is a single strongly convex projection QP onto it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import qp as qpmod
from .model import ConcreteQP, Observation, ParamQP


class InfeasibleForward(Exception):
    """The instantiated forward problem has no feasible point."""


@dataclass
class LossValue:
    value: float
    x_star: np.ndarray
    solved_via: str             # "single_forward" | "kkt_projection"


def kkt_projection(problem: ParamQP, theta, obs: Observation):
    """Project obs.y onto the optimal solution set at theta (singular-Q safe).

    Solves the forward problem once, characterizes its solution set as the
    optimal face, and projects y onto that face.  Returns (value, x_star).
    """
    theta = np.asarray(theta, dtype=float)
    fwd = problem.instantiate(theta, obs.u)
    sol = qpmod.solve(fwd)
    face_rows = np.concatenate([fwd.A_eq, fwd.Q, fwd.c[None, :]], axis=0)
    face_rhs = face_rows @ sol.x
    keep = qpmod._independent_rows(face_rows)
    proj = ConcreteQP(Q=2.0 * np.eye(fwd.n), c=-2.0 * obs.y,
                      A_ineq=fwd.A_ineq, b_ineq=fwd.b_ineq,
                      A_eq=face_rows[keep], b_eq=face_rhs[keep])
    psol = qpmod.solve(proj, x0=sol.x)
    x = psol.x
    return float(np.sum((obs.y - x) ** 2)), x


def eval_loss(problem: ParamQP, theta, obs: Observation,
              node_limit=None) -> LossValue:
    """l(y, u, theta) = min_{x in S(u, theta)} ||y - x||^2."""
    theta = np.asarray(theta, dtype=float)
    try:
        if problem.lambda_min > 1e-9:
            sol = qpmod.solve(problem.instantiate(theta, obs.u))
            x = sol.x
            return LossValue(value=float(np.sum((obs.y - x) ** 2)), x_star=x,
                             solved_via="single_forward")
        value, x = kkt_projection(problem, theta, obs)
        return LossValue(value=value, x_star=x, solved_via="kkt_projection")
    except qpmod.Infeasible as e:
        raise InfeasibleForward(str(e)) from e
