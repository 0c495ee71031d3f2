"""Online learning loop with implicit updates, plus the KKT-residual warm start.

Each round: evaluate the prediction loss at the current hypothesis, keep the
hypothesis if the loss is below the threshold, otherwise solve the proximal
update with learning rate eta0/sqrt(t).  The warm start initializes the
hypothesis from a batch of historical pairs by minimizing squared stationarity
and complementary-slackness residuals of the forward KKT system.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from . import qp as qpmod
from .model import ConcreteQP, Observation, ParameterBox, ParamQP, TheoryConstants
from .loss import eval_loss
from .update import DEFAULT_NODE_LIMIT, implicit_update


class NotStronglyConvex(Exception):
    """The theorem's rate needs lambda > 0; supply eta0 manually instead."""


@dataclass
class LearnerConfig:
    eta0: float                          # learning rate numerator: eta_t = eta0 / sqrt(t)
    loss_threshold: float = 1e-8         # keep the hypothesis below this loss
    normalize: float | None = None       # rescale theta to this 2-norm after updates
    start: str = "cold"                  # "cold" | "warm"
    theta0: np.ndarray | None = None     # cold-start hypothesis (default: box lower corner)
    warm_history: list | None = None     # observations for the warm-start initializer
    node_limit: int = DEFAULT_NODE_LIMIT

    def __post_init__(self):
        if self.eta0 <= 0:
            raise ValueError("eta0 must be positive")
        if self.loss_threshold < 0:
            raise ValueError("loss_threshold must be nonnegative")
        if self.start not in ("cold", "warm"):
            raise ValueError("start must be 'cold' or 'warm'")


@dataclass
class RunTrace:
    """Per-round record of one online run (T rounds, T+1 hypotheses)."""

    thetas: np.ndarray               # (T+1, p)
    losses: np.ndarray               # (T,)
    cum_loss_avg: np.ndarray         # (T,)
    est_error: np.ndarray | None     # (T+1,) relative ||theta_t - theta_true|| / ||theta_true||
    wall_time_ms: np.ndarray         # (T,)
    nodes_explored: np.ndarray       # (T,) int
    update_status: list              # (T,) "optimal" | "node_limit" | "skipped"
    update_objective: np.ndarray     # (T,) optimal value of the proximal update (nan if skipped)
    eta: np.ndarray                  # (T,) learning rate used (nan if skipped)

    @property
    def T(self) -> int:
        return self.losses.shape[0]

    def to_csv(self, path):
        """One row per round; a final row carries the last hypothesis only."""
        p = self.thetas.shape[1]
        cols = ["t"] + [f"theta_{i}" for i in range(p)] + \
               ["loss", "cum_loss_avg", "est_error", "wall_time_ms", "nodes_explored"]
        with open(path, "w", newline="") as f:
            f.write(",".join(cols) + "\n")
            for t in range(1, self.T + 1):
                row = [str(t)] + [repr(float(v)) for v in self.thetas[t - 1]]
                row += [repr(float(self.losses[t - 1])), repr(float(self.cum_loss_avg[t - 1]))]
                row += [repr(float(self.est_error[t - 1])) if self.est_error is not None else ""]
                row += [repr(float(self.wall_time_ms[t - 1])), str(int(self.nodes_explored[t - 1]))]
                f.write(",".join(row) + "\n")
            row = [str(self.T + 1)] + [repr(float(v)) for v in self.thetas[self.T]]
            row += ["", "",
                    repr(float(self.est_error[self.T])) if self.est_error is not None else "",
                    "", ""]
            f.write(",".join(row) + "\n")


def schedule_eta(constants: TheoryConstants, t: int) -> float:
    """Learning rate D*lam / (2*sqrt(2)*(B+R)*kappa) / sqrt(t)."""
    if constants.lam <= 1e-9:
        raise NotStronglyConvex("lambda <= 0; choose eta0 manually")
    if t < 1:
        raise ValueError("round index starts at 1")
    return constants.D * constants.lam / (2.0 * math.sqrt(2.0) *
                                          (constants.B + constants.R) * constants.kappa) / math.sqrt(t)


def regret_bound(constants: TheoryConstants, T: int) -> float:
    """Theoretical cumulative-regret bound 4*sqrt(2)*(B+R)*D*kappa*sqrt(T)/lam."""
    if constants.lam <= 1e-9:
        raise NotStronglyConvex("lambda <= 0; bound undefined")
    return 4.0 * math.sqrt(2.0) * (constants.B + constants.R) * constants.D * \
        constants.kappa * math.sqrt(T) / constants.lam


def run(problem: ParamQP, box: ParameterBox, stream, config: LearnerConfig,
        theta_true=None) -> RunTrace:
    """Run the online loop over the observation stream and record a full trace."""
    stream = list(stream)
    if not stream:
        raise ValueError("stream must be nonempty")
    if config.start == "warm":
        if not config.warm_history:
            raise ValueError("warm start requires a nonempty history")
        theta = warm_start(problem, box, config.warm_history)
    else:
        theta = (np.asarray(config.theta0, dtype=float)
                 if config.theta0 is not None else box.lo.copy())
    if not box.contains(theta):
        raise ValueError("initial hypothesis outside the box")
    theta = box.project(theta)

    T = len(stream)
    p = problem.p
    thetas = np.zeros((T + 1, p))
    losses = np.zeros(T)
    cum = np.zeros(T)
    wall = np.zeros(T)
    nodes = np.zeros(T, dtype=int)
    statuses = []
    objs = np.full(T, np.nan)
    etas = np.full(T, np.nan)
    thetas[0] = theta

    running = 0.0
    for t in range(1, T + 1):
        obs = stream[t - 1]
        t0 = time.perf_counter()
        try:
            lv = eval_loss(problem, theta, obs, node_limit=config.node_limit)
        except Exception as e:
            raise type(e)(f"round {t}: {e}") from e
        losses[t - 1] = lv.value
        running += lv.value
        cum[t - 1] = running / t
        if lv.value < config.loss_threshold:
            statuses.append("skipped")
        else:
            eta_t = config.eta0 / math.sqrt(t)
            etas[t - 1] = eta_t
            try:
                res = implicit_update(problem, box, theta, eta_t, obs,
                                      incumbent_x=lv.x_star,
                                      node_limit=config.node_limit)
            except Exception as e:
                raise type(e)(f"round {t}: {e}") from e
            theta = res.theta_next
            nodes[t - 1] = res.nodes_explored
            objs[t - 1] = res.objective
            statuses.append(res.status)
            if config.normalize is not None:
                nrm = float(np.linalg.norm(theta))
                if nrm > 0:
                    theta = box.project(theta * (config.normalize / nrm))
        wall[t - 1] = (time.perf_counter() - t0) * 1000.0
        thetas[t] = theta

    est = None
    if theta_true is not None:
        theta_true = np.asarray(theta_true, dtype=float)
        denom = float(np.linalg.norm(theta_true))
        if denom > 0:
            est = np.linalg.norm(thetas - theta_true, axis=1) / denom
    return RunTrace(thetas=thetas, losses=losses, cum_loss_avg=cum, est_error=est,
                    wall_time_ms=wall, nodes_explored=nodes, update_status=statuses,
                    update_objective=objs, eta=etas)


def warm_start(problem: ParamQP, box: ParameterBox, history, max_iters=50) -> np.ndarray:
    """Initialize theta by minimizing squared KKT residuals over a history batch.

    Minimizes the mean of (mu' slack(y_t, u_t, theta))^2 plus the squared
    stationarity residual over theta in the box, mu_t >= 0 and free nu_t.
    When theta enters only the cost vector this is jointly convex and block
    minimization converges to the optimum; when theta shifts the RHS the
    slackness term is bilinear and ten alternating passes from mu = 0 are
    used as a documented heuristic.
    """
    history = list(history)
    if not history:
        raise ValueError("history must be nonempty")
    p, n, q, r = problem.p, problem.n, problem.q, problem.r
    if p == 0:
        return np.zeros(0)
    for obs in history:
        if not (np.all(np.isfinite(obs.u)) and np.all(np.isfinite(obs.y))):
            raise ValueError("history contains non-finite values")

    cost_only = not (np.any(problem.B_theta) or np.any(problem.E_theta))
    iters = max_iters if cost_only else 10

    pre = []
    for obs in history:
        A = problem.ineq_matrix(obs.u)
        k = problem.Q @ obs.y + problem.c0 + problem.C_u @ obs.u   # stationarity, theta-free part
        s0 = A @ obs.y - (problem.b0_ineq + problem.B_u @ obs.u)   # slack, theta-free part
        pre.append((A, k, s0))

    mus = [np.zeros(q) for _ in history]
    nus = [np.zeros(r) for _ in history]
    theta = box.project(np.zeros(p))
    for it in range(iters):
        # theta step: box-constrained least squares given the duals
        H = np.zeros((p, p))
        g = np.zeros(p)
        for (A, k, s0), mu, nu in zip(pre, mus, nus):
            resid0 = k - A.T @ mu - (problem.A_eq.T @ nu if r else 0.0)
            H += 2.0 * problem.C_theta.T @ problem.C_theta
            g += 2.0 * problem.C_theta.T @ resid0
            if not cost_only:
                w = problem.B_theta.T @ mu                  # mu' slack = a - w' theta
                a = float(mu @ s0)
                H += 2.0 * np.outer(w, w)
                g += -2.0 * a * w
        Ain = np.vstack([np.eye(p), -np.eye(p)])
        bin_ = np.concatenate([box.lo, -box.hi])
        step = qpmod.solve(ConcreteQP(Q=H + 1e-12 * np.eye(p), c=g, A_ineq=Ain,
                                      b_ineq=bin_, A_eq=np.zeros((0, p)),
                                      b_eq=np.zeros(0)), x0=theta)
        new_theta = box.project(step.x)
        # dual step: per-observation NNLS on the stacked residuals
        if q or r:
            for idx, (A, k, s0) in enumerate(pre):
                s = s0 - problem.B_theta @ new_theta
                rhs_vec = k + problem.C_theta @ new_theta
                M = np.zeros((1 + n, q + 2 * r))
                M[0, :q] = s
                M[1:, :q] = A.T
                if r:
                    M[1:, q:q + r] = problem.A_eq.T
                    M[1:, q + r:] = -problem.A_eq.T
                target = np.concatenate([[0.0], rhs_vec])
                w, _ = nnls(M, target)
                mus[idx] = w[:q]
                nus[idx] = w[q:q + r] - w[q + r:] if r else np.zeros(0)
        if cost_only and np.linalg.norm(new_theta - theta) < 1e-10:
            theta = new_theta
            break
        theta = new_theta
    return theta
