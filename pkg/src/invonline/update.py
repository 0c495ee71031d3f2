"""Implicit update via branch-and-bound on KKT complementarity patterns.

The update  min_{theta in box} 0.5||theta - theta_t||^2 + eta * l(y, u, theta)
is solved exactly through its single-level form: optimize jointly over
(theta, x, duals) subject to the forward problem's KKT system, with the
complementarity conditions handled by branching instead of big-M constants.
The same machinery with theta fixed computes the exact distance from y to
the optimal solution set (used by the loss module when Q is singular).
"""

from __future__ import annotations

import heapq
import warnings
from dataclasses import dataclass

import numpy as np

from . import qp as qpmod
from .model import ConcreteQP, Observation, ParameterBox, ParamQP

DEFAULT_NODE_LIMIT = 100_000
_PRUNE_EPS = 1e-9
_COMP_TOL = 1e-8


class InfeasibleUpdate(Exception):
    """No complementarity pattern admits a feasible point: model misconfiguration."""


@dataclass
class UpdateResult:
    theta_next: np.ndarray
    x_at_opt: np.ndarray
    objective: float
    nodes_explored: int
    status: str                 # "optimal" | "node_limit"


@dataclass(frozen=True)
class BnbNode:
    fixed_active: int           # bitmask over inequality rows forced tight
    fixed_inactive: int         # bitmask over rows with dual forced to zero
    lower_bound: float = -np.inf

    def __post_init__(self):
        if self.fixed_active & self.fixed_inactive:
            raise ValueError("node fixes a constraint both active and inactive")


class _SingleLevel:
    """Numeric single-level data for one (problem, anchor, eta, observation)."""

    def __init__(self, problem: ParamQP, box, theta_anchor, eta, obs: Observation):
        self.p = problem.p
        self.n = problem.n
        self.q = problem.q
        self.r = problem.r
        self.eta = float(eta)
        self.y = obs.y
        self.anchor = np.zeros(0) if theta_anchor is None else np.asarray(theta_anchor, float)
        self.box = box
        u = obs.u
        self.Q = problem.Q
        self.A = problem.ineq_matrix(u)
        self.B_theta = problem.B_theta
        self.b_const = problem.b0_ineq + problem.B_u @ u
        self.C_theta = problem.C_theta
        self.c_const = problem.c0 + problem.C_u @ u
        self.A_eq = problem.A_eq
        self.E_theta = problem.E_theta
        self.beq_const = problem.b0_eq + problem.E_u @ u

    def _node_qp(self, fa, fi):
        """Assemble the node relaxation QP over v = (theta, x, mu_free, nu)."""
        p, n, q, r = self.p, self.n, self.q, self.r
        free = [i for i in range(q) if not (fi >> i) & 1]
        act = [i for i in range(q) if (fa >> i) & 1]
        ineq_rows = [i for i in range(q) if not (fa >> i) & 1]
        qf = len(free)
        dim = p + n + qf + r
        sx = slice(p, p + n)
        smu = slice(p + n, p + n + qf)
        snu = slice(p + n + qf, dim)

        H = np.zeros((dim, dim))
        g = np.zeros(dim)
        H[:p, :p] = np.eye(p)
        H[sx, sx] = 2.0 * self.eta * np.eye(n)
        g[:p] = -self.anchor
        g[sx] = -2.0 * self.eta * self.y
        const = 0.5 * float(self.anchor @ self.anchor) + self.eta * float(self.y @ self.y)

        n_eq = n + r + len(act)
        Aeq = np.zeros((n_eq, dim))
        beq = np.zeros(n_eq)
        # stationarity:  C_theta th + Q x - A_free' mu - A_eq' nu = -c_const
        Aeq[:n, :p] = self.C_theta
        Aeq[:n, sx] = self.Q
        if qf:
            Aeq[:n, smu] = -self.A[free].T
        if r:
            Aeq[:n, snu] = -self.A_eq.T
        beq[:n] = -self.c_const
        if r:
            Aeq[n:n + r, :p] = -self.E_theta
            Aeq[n:n + r, sx] = self.A_eq
            beq[n:n + r] = self.beq_const
        for k, i in enumerate(act):
            Aeq[n + r + k, :p] = -self.B_theta[i]
            Aeq[n + r + k, sx] = self.A[i]
            beq[n + r + k] = self.b_const[i]

        n_in = len(ineq_rows) + qf + 2 * p
        Ain = np.zeros((n_in, dim))
        bin_ = np.zeros(n_in)
        labels = []
        for k, i in enumerate(ineq_rows):
            Ain[k, :p] = -self.B_theta[i]
            Ain[k, sx] = self.A[i]
            bin_[k] = self.b_const[i]
            labels.append(("primal", i))
        off = len(ineq_rows)
        for k in range(qf):
            Ain[off + k, p + n + k] = 1.0
            labels.append(("mu", free[k]))
        off += qf
        if p:
            Ain[off:off + p, :p] = np.eye(p)
            bin_[off:off + p] = self.box.lo
            Ain[off + p:off + 2 * p, :p] = -np.eye(p)
            bin_[off + p:off + 2 * p] = -self.box.hi
            labels.extend(("lo", j) for j in range(p))
            labels.extend(("hi", j) for j in range(p))

        node_qp = ConcreteQP(Q=H, c=g, A_ineq=Ain, b_ineq=bin_, A_eq=Aeq, b_eq=beq)
        return node_qp, const, free, sx, smu, snu, labels

    def solve_node(self, fa, fi, v_start=None):
        """Relaxation bound and point for a node; None if the node is infeasible.

        `v_start` is an optional (theta, x, mu_full, nu, active_labels) warm
        start, typically the parent node's optimum: the child differs by one
        constraint, so the parent's active set is first tried as a one-shot
        optimality guess, and the parent point seeds the iterative fallback.
        """
        node_qp, const, free, sx, smu, snu, labels = self._node_qp(fa, fi)
        x0 = None
        work0 = None
        if v_start is not None:
            th0, xs0, mu0, nu0, act0 = v_start
            if act0 is not None:
                work0 = [k for k, lab in enumerate(labels) if lab in act0]
            mu_f = self._redistribute_duals(fa, fi, free, th0, xs0, mu0)
            if mu_f is None:
                mu_f = mu0[free]
                nu_f = nu0
            else:
                mu_f, nu_f = mu_f
            x0 = np.concatenate([th0, xs0, mu_f, nu_f])
        try:
            sol = qpmod.solve(node_qp, x0=x0, work0=work0)
        except qpmod.Infeasible:
            return None
        v = sol.x
        theta = v[:self.p]
        x = v[sx]
        mu = np.zeros(self.q)
        mu[free] = np.maximum(v[smu], 0.0)
        nu = v[snu]
        bound = sol.objective + const
        slack = self.A @ x - (self.b_const + self.B_theta @ theta) if self.q else np.zeros(0)
        act_labels = frozenset(lab for k, lab in enumerate(labels) if sol.active[k])
        mu, nu, viol = self._repair_duals(fa, fi, theta, x, mu, nu, slack)
        return bound, theta, x, mu, nu, slack, viol, act_labels

    def _redistribute_duals(self, fa, fi, free, theta, x, mu):
        """Least-norm stationarity duals at the parent point, if child-feasible.

        When a child only forces a dual to zero, the parent's (theta, x) still
        satisfies every primal constraint of the child node; re-solving the
        duals by least squares then yields a fully feasible warm start and the
        node QP skips phase 1 entirely.  Returns (mu_free, nu) or None.
        """
        q, r = self.q, self.r
        if q:
            res = self.A @ x - (self.b_const + self.B_theta @ theta)
            act = [i for i in range(q) if (fa >> i) & 1]
            if act and float(np.max(np.abs(res[act]))) > 1e-9:
                return None
            if float(np.min(res, initial=0.0)) < -1e-9:
                return None
        qf = len(free)
        if qf + r == 0:
            return None
        M = np.concatenate([self.A[free].T,
                            self.A_eq.T.reshape(self.n, r)], axis=1)
        rhs = self.Q @ x + self.c_const + self.C_theta @ theta
        z, *_ = np.linalg.lstsq(M, rhs, rcond=None)
        if float(np.linalg.norm(M @ z - rhs)) > 1e-8 * (1.0 + float(np.linalg.norm(rhs))):
            return None
        mu_f = z[:qf]
        if qf and float(np.min(mu_f, initial=0.0)) < -1e-9:
            return None
        return np.maximum(mu_f, 0.0), z[qf:]

    def _repair_duals(self, fa, fi, theta, x, mu, nu, slack):
        """Re-pick duals at fixed (theta, x) to minimize complementarity violation.

        The relaxation leaves duals underdetermined; the least-norm choice can
        spread mass over slack constraints.  Minimizing sum (mu_i slack_i)^2 over
        the dual polyhedron sharpens the branching score and often certifies the
        node point as fully KKT-feasible, closing the node.
        """
        q, r = self.q, self.r
        viol = np.abs(mu * slack) if q else np.zeros(0)
        for i in range(q):
            if (fa >> i) & 1 or (fi >> i) & 1:
                viol[i] = 0.0
        if q == 0 or float(np.max(viol, initial=0.0)) <= _COMP_TOL:
            return mu, nu, viol
        free = [i for i in range(q) if not (fi >> i) & 1]
        # Quick attempt: duals supported on the tight rows alone satisfy
        # complementarity by construction; accept them when they also solve
        # stationarity.  Much cheaper than the repair QP below.
        rhs = self.Q @ x + self.c_const + self.C_theta @ theta
        sup = [i for i in free if abs(slack[i]) <= _COMP_TOL]
        M = np.concatenate([self.A[sup].T, self.A_eq.T.reshape(self.n, r)], axis=1)
        z, *_ = np.linalg.lstsq(M, rhs, rcond=None)
        ok = float(np.linalg.norm(M @ z - rhs)) <= 1e-8 * (1.0 + float(np.linalg.norm(rhs)))
        if ok and float(np.min(z[:len(sup)], initial=0.0)) >= -1e-9:
            mu2 = np.zeros(q)
            mu2[sup] = np.maximum(z[:len(sup)], 0.0)
            nu2 = z[len(sup):]
            viol2 = np.abs(mu2 * slack)
            for i in range(q):
                if (fa >> i) & 1 or (fi >> i) & 1:
                    viol2[i] = 0.0
            if float(np.max(viol2, initial=0.0)) <= _COMP_TOL:
                return mu2, nu2, viol2
        qf = len(free)
        dim = qf + r
        H = np.zeros((dim, dim))
        H[:qf, :qf] = 2.0 * np.diag(slack[free] ** 2)
        Aeq = np.zeros((self.n, dim))
        Aeq[:, :qf] = self.A[free].T
        if r:
            Aeq[:, qf:] = self.A_eq.T
        Ain = np.zeros((qf, dim))
        Ain[:, :qf] = np.eye(qf)
        rep = ConcreteQP(Q=H, c=np.zeros(dim), A_ineq=Ain, b_ineq=np.zeros(qf),
                         A_eq=Aeq, b_eq=rhs)
        x0 = np.concatenate([mu[free], nu])
        try:
            sol = qpmod.solve(rep, x0=x0)
        except qpmod.QpError:
            return mu, nu, viol
        if float(np.max(np.abs(Aeq @ sol.x - rhs), initial=0.0)) > \
                1e-7 * (1.0 + float(np.max(np.abs(rhs), initial=0.0))):
            return mu, nu, viol        # repaired duals must satisfy stationarity
        mu2 = np.zeros(q)
        mu2[free] = np.maximum(sol.x[:qf], 0.0)
        nu2 = sol.x[qf:]
        viol2 = np.abs(mu2 * slack)
        for i in range(q):
            if (fa >> i) & 1 or (fi >> i) & 1:
                viol2[i] = 0.0
        if float(np.max(viol2, initial=0.0)) < float(np.max(viol, initial=0.0)):
            return mu2, nu2, viol2
        return mu, nu, viol


def _branch_and_bound(sl: _SingleLevel, incumbent, node_limit):
    """Best-first search over complementarity patterns.

    `incumbent` is an optional (value, theta, x) triple from a KKT-feasible
    point (e.g. the forward solution at the prox anchor); it makes pruning
    effective immediately.
    """
    best_val = np.inf
    best = None
    if incumbent is not None:
        best_val, bt, bx = incumbent
        best = (np.asarray(bt, float), np.asarray(bx, float))

    seq = 0
    # entries: (parent bound, seq, fixed_active, fixed_inactive, parent point)
    heap = [(-np.inf, 0, 0, 0, None)]
    explored = 0
    status = "optimal"
    while heap:
        parent_bound, _, fa, fi, v_start = heapq.heappop(heap)
        if parent_bound >= best_val - _PRUNE_EPS:
            continue
        if explored >= node_limit:
            status = "node_limit"
            warnings.warn(f"branch-and-bound node limit {node_limit} reached; "
                          "returning incumbent", RuntimeWarning)
            break
        explored += 1
        res = sl.solve_node(fa, fi, v_start)
        if res is None:
            continue
        bound, theta, x, mu, nu, slack, viol, act = res
        if bound >= best_val - _PRUNE_EPS:
            continue
        vmax = float(np.max(viol, initial=0.0))
        if vmax <= _COMP_TOL:
            best_val = bound
            best = (theta, x)
            continue
        i = int(np.argmax(viol))        # ties: argmax takes the lowest index
        v_node = (theta, x, mu, nu, act)
        if fa == 0 and fi == 0:
            # rounding dive: fix every row by its state at the root optimum;
            # the resulting leaf is complementarity-feasible by construction
            # and usually near-optimal, so it prunes far better than the
            # anchor incumbent
            leaf_fa = 0
            for k in range(sl.q):
                if slack[k] <= _COMP_TOL:
                    leaf_fa |= 1 << k
            leaf_fi = ((1 << sl.q) - 1) ^ leaf_fa
            leaf = sl.solve_node(leaf_fa, leaf_fi, v_node)
            explored += 1
            if leaf is not None:
                lb, lth, lx = leaf[0], leaf[1], leaf[2]
                lviol = leaf[6]
                if float(np.max(lviol, initial=0.0)) <= _COMP_TOL and lb < best_val:
                    best_val = lb
                    best = (lth, lx)
        for child_fa, child_fi in (((fa | (1 << i)), fi), (fa, fi | (1 << i))):
            seq += 1
            heapq.heappush(heap, (bound, seq, child_fa, child_fi, v_node))
    if best is None:
        raise InfeasibleUpdate("no feasible complementarity pattern found")
    return best_val, best[0], best[1], explored, status


def _forward_kkt_point(problem: ParamQP, theta, obs: Observation):
    """A fully KKT-feasible point of the instantiated forward problem."""
    fwd = problem.instantiate(theta, obs.u)
    sol = qpmod.solve(fwd)
    return sol.x


def implicit_update(problem: ParamQP, box: ParameterBox, theta_t, eta_t,
                    obs: Observation, incumbent_x=None,
                    node_limit=DEFAULT_NODE_LIMIT) -> UpdateResult:
    """Globally solve the proximal update over the hypothesis box.

    `incumbent_x` may supply a point of the optimal solution set at theta_t
    (e.g. from the loss evaluation of the current round) to seed pruning;
    otherwise one forward solve provides it.
    """
    theta_t = np.asarray(theta_t, dtype=float)
    if eta_t <= 0:
        raise ValueError("eta_t must be positive")
    if not box.contains(theta_t):
        raise ValueError("theta_t outside the hypothesis box")
    sl = _SingleLevel(problem, box, theta_t, eta_t, obs)
    incumbent = None
    try:
        x_inc = incumbent_x if incumbent_x is not None else _forward_kkt_point(problem, theta_t, obs)
        val = eta_t * float(np.sum((obs.y - x_inc) ** 2))
        incumbent = (val, theta_t, x_inc)
    except qpmod.Infeasible:
        pass
    val, theta, x, explored, status = _branch_and_bound(sl, incumbent, node_limit)
    theta = box.project(theta)
    return UpdateResult(theta_next=theta, x_at_opt=x, objective=val,
                        nodes_explored=explored, status=status)


def bnb_projection(problem: ParamQP, theta, obs: Observation,
                   node_limit=DEFAULT_NODE_LIMIT):
    """Exact squared distance from obs.y to the optimal solution set at theta.

    Runs the complementarity branch-and-bound with theta fixed; valid for
    singular Q where the solution set may be a face rather than a point.
    Slower than the optimal-face projection in the loss module but fully
    independent of it, so it doubles as a cross-check oracle.
    Returns (value, x_star, nodes_explored, status).
    """
    fixed = problem.fix_theta(theta)
    sl = _SingleLevel(fixed, None, None, 1.0, obs)
    x_inc = _forward_kkt_point(fixed, np.zeros(0), obs)     # raises Infeasible upward
    incumbent = (float(np.sum((obs.y - x_inc) ** 2)), np.zeros(0), x_inc)
    val, _, x, explored, status = _branch_and_bound(sl, incumbent, node_limit)
    return max(val, 0.0), x, explored, status


def relax_bound(problem: ParamQP, box: ParameterBox, theta_t, eta_t,
                obs: Observation, node: BnbNode) -> float:
    """Lower bound of the update objective restricted to a node (+inf if infeasible)."""
    sl = _SingleLevel(problem, box, np.asarray(theta_t, float), eta_t, obs)
    res = sl.solve_node(node.fixed_active, node.fixed_inactive)
    if res is None:
        return np.inf
    return res[0]
