"""Desk-scale experiment generators and metrics.

Two scenario families: a consumer choosing a product bundle under a budget
(learn the utility vector or the budget), and a five-node transshipment
network with quadratic production costs (learn two edge transportation
costs).  Exact parameter tables for the originals are not public; scenarios
are regenerated from documented distributions with fixed seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import qp as qpmod
from .loss import eval_loss
from .model import Observation, ParameterBox, ParamQP
from .learner import RunTrace


@dataclass(frozen=True)
class NoiseModel:
    """Elementwise uniform noise on [-half_width, half_width]."""

    half_width: float = 0.25

    @property
    def var_per_coord(self) -> float:
        return self.half_width ** 2 / 3.0

    def expected_sq_norm(self, dim: int) -> float:
        return dim * self.var_per_coord

    def sample(self, rng, dim: int) -> np.ndarray:
        return rng.uniform(-self.half_width, self.half_width, size=dim)


# ---------------------------------------------------------------------------
# consumer behavior

@dataclass(frozen=True)
class ConsumerScenario:
    """Utility maximization over n=10 products under a linear budget.

    The concave utility is 0.5 x'Qu x + r'x with Qu = -(0.5 M'M + 8 I),
    M elementwise U(-1,1), and r elementwise U(2,5); converted to
    minimization by negation.  The curvature scale is chosen so that for
    prices U(5,25) the budget is active for most draws while every product
    stays at a strictly positive quantity: that keeps both the utility
    vector and the budget identifiable from the decision stream.
    """

    Q_utility: np.ndarray            # negative definite curvature
    r_true: np.ndarray               # true utility vector, in [0, 5]^n
    budget: float = 40.0
    price_lo: float = 5.0
    price_hi: float = 25.0
    noise: NoiseModel = field(default_factory=NoiseModel)

    @property
    def n(self) -> int:
        return self.r_true.shape[0]

    @classmethod
    def generate(cls, seed: int, n: int = 10) -> "ConsumerScenario":
        rng = np.random.default_rng(seed)
        M = rng.uniform(-1.0, 1.0, size=(n, n))
        Qu = -(0.5 * M.T @ M + 8.0 * np.eye(n))
        r = rng.uniform(2.0, 5.0, size=n)
        return cls(Q_utility=Qu, r_true=r)


def consumer_problem_utility(scn: ConsumerScenario):
    """Forward problem with theta = utility vector r; prices are the signal.

    Returns (problem, box, theta_true).
    """
    n = scn.n
    A_ineq = np.vstack([np.zeros(n), np.eye(n)])        # budget row filled from the signal
    A_u = np.zeros((n + 1, n, n))
    A_u[0] = -np.eye(n)                                 # row 0: -p'x >= -budget
    b0 = np.concatenate([[-scn.budget], np.zeros(n)])
    prob = ParamQP(n=n, p=n, m=n, Q=-scn.Q_utility, C_theta=-np.eye(n),
                   A_ineq=A_ineq, b0_ineq=b0, A_ineq_u=A_u)
    box = ParameterBox(np.zeros(n), 5.0 * np.ones(n))
    return prob, box, scn.r_true.copy()


def consumer_problem_budget(scn: ConsumerScenario):
    """Forward problem with theta = budget; the utility vector is known."""
    n = scn.n
    A_ineq = np.vstack([np.zeros(n), np.eye(n)])
    A_u = np.zeros((n + 1, n, n))
    A_u[0] = -np.eye(n)
    B_theta = np.zeros((n + 1, 1))
    B_theta[0, 0] = -1.0                                # row 0: -p'x >= -theta
    prob = ParamQP(n=n, p=1, m=n, Q=-scn.Q_utility, c0=-scn.r_true,
                   A_ineq=A_ineq, b0_ineq=np.zeros(n + 1), B_theta=B_theta,
                   A_ineq_u=A_u)
    box = ParameterBox([0.0], [100.0])
    return prob, box, np.array([scn.budget])


def gen_consumer_stream(scn: ConsumerScenario, T: int, seed: int):
    """Per round: draw prices, solve the forward problem at the truth, add noise."""
    if T < 1:
        raise ValueError("T must be >= 1")
    prob, _, theta_true = consumer_problem_utility(scn)
    rng = np.random.default_rng(seed)
    stream = []
    for _ in range(T):
        prices = rng.uniform(scn.price_lo, scn.price_hi, size=scn.n)
        x = qpmod.solve(prob.instantiate(theta_true, prices)).x
        y = x + scn.noise.sample(rng, scn.n)
        stream.append(Observation(u=prices, y=y))
    return stream


# ---------------------------------------------------------------------------
# transshipment

#: five-node stand-in network: producers 1, 2; consumers 3, 4, 5.
TRANSSHIPMENT_EDGES = ((1, 3), (1, 4), (2, 3), (2, 5), (3, 4), (4, 5))
TRANSSHIPMENT_LEARNED_EDGES = ((2, 3), (2, 5))


@dataclass(frozen=True)
class TransshipmentScenario:
    """Quadratic-production transshipment on the documented five-node network.

    Decision vector: the six edge flows in TRANSSHIPMENT_EDGES order, then
    the two production levels.  The signal is the consumer demand vector
    (nodes 3, 4, 5), drawn from U[-1.25, 0] per node.
    """

    lambda_prod: np.ndarray          # (2,) production cost curvatures, > 0
    cap_edge: np.ndarray             # (6,) flow capacities
    cap_prod: np.ndarray             # (2,) production capacities
    c_true: np.ndarray               # (6,) edge costs, in [1, 10]
    demand_lo: float = -1.25
    demand_hi: float = 0.0
    noise: NoiseModel = field(default_factory=NoiseModel)

    @property
    def learned_idx(self):
        return tuple(TRANSSHIPMENT_EDGES.index(e) for e in TRANSSHIPMENT_LEARNED_EDGES)

    @classmethod
    def generate(cls, seed: int) -> "TransshipmentScenario":
        """Draw a scenario; rejection-sample until both learned costs matter.

        Edge costs are drawn so that each learned edge competes with an
        alternative route at the production margin: (2,3) against (1,3),
        and (2,5) against the two-hop route (1,4)-(4,5).  A candidate is
        kept only if, for each learned cost, the average prediction loss
        strictly decreases along the segment from the box corner to the
        true value.  On instances without this property the loss has wide
        flat regions in the learned coordinate (the cost leaves no trace
        in the decisions there), and no amount of data can recover it.
        """
        rng = np.random.default_rng(seed)
        for _ in range(200):
            lam = rng.uniform(2.0, 4.0, size=2)
            cap_e = rng.uniform(1.5, 3.0, size=6)
            cap_p = rng.uniform(2.0, 4.0, size=2)
            c = np.empty(6)
            c[0] = rng.uniform(3.0, 7.0)        # (1,3)
            c[1] = rng.uniform(1.5, 3.5)        # (1,4)
            c[2] = rng.uniform(3.0, 7.0)        # (2,3), learned
            c[3] = rng.uniform(5.0, 8.0)        # (2,5), learned
            c[4] = rng.uniform(3.0, 7.0)        # (3,4)
            c[5] = rng.uniform(1.5, 3.5)        # (4,5)
            scn = cls(lambda_prod=lam, cap_edge=cap_e, cap_prod=cap_p, c_true=c)
            if scn._identifiable():
                return scn
        raise RuntimeError("could not draw an identifiable transshipment scenario")

    def _identifiable(self, n_draws: int = 40, min_drop: float = 0.01) -> bool:
        """True when the average loss is strictly graded toward the truth."""
        prob, _, theta_true = transshipment_problem(self)
        worst = np.full(3, self.demand_lo)
        try:
            qpmod.solve(prob.instantiate(theta_true, worst))
        except qpmod.Infeasible:
            return False
        rng = np.random.default_rng(0)
        batch = []
        for _ in range(n_draws):
            d = rng.uniform(self.demand_lo, self.demand_hi, size=3)
            x = qpmod.solve(prob.instantiate(theta_true, d)).x
            batch.append(Observation(u=d, y=x))
        for k in range(2):
            grid = np.linspace(1.0, theta_true[k], 5)
            prev = None
            for t in grid:
                th = theta_true.copy()
                th[k] = t
                cur = float(np.mean([eval_loss(prob, th, o).value for o in batch]))
                if prev is not None and cur > prev - min_drop:
                    return False
                prev = cur
        return True


def transshipment_problem(scn: TransshipmentScenario):
    """Forward problem with theta = costs of the learned edges.

    Returns (problem, box, theta_true).  Flow balance is equality-constrained
    (free duals); bounds and capacities are the inequality block.
    """
    nE, nP = 6, 2
    n = nE + nP
    Q = np.diag(np.concatenate([np.zeros(nE), scn.lambda_prod]))
    li = list(scn.learned_idx)
    c0 = scn.c_true.copy()
    c0[li] = 0.0
    c0 = np.concatenate([c0, np.zeros(nP)])
    C_theta = np.zeros((n, 2))
    C_theta[li[0], 0] = 1.0
    C_theta[li[1], 1] = 1.0

    # flow balance: node rows 1..5; out - in - production = 0 (producers),
    # out - in = demand (consumers)
    A_eq = np.zeros((5, n))
    for k, (i, j) in enumerate(TRANSSHIPMENT_EDGES):
        A_eq[i - 1, k] += 1.0
        A_eq[j - 1, k] -= 1.0
    A_eq[0, nE] = -1.0
    A_eq[1, nE + 1] = -1.0
    E_u = np.zeros((5, 3))
    E_u[2, 0] = E_u[3, 1] = E_u[4, 2] = 1.0

    A_ineq = np.vstack([np.eye(n), -np.eye(n)])
    b0 = np.concatenate([np.zeros(n), -scn.cap_edge, -scn.cap_prod])
    prob = ParamQP(n=n, p=2, m=3, Q=Q, c0=c0, C_theta=C_theta,
                   A_ineq=A_ineq, b0_ineq=b0, A_eq=A_eq, E_u=E_u)
    box = ParameterBox([1.0, 1.0], [10.0, 10.0])
    return prob, box, scn.c_true[li].copy()


def gen_transshipment_stream(scn: TransshipmentScenario, T: int, seed: int):
    """Per round: draw demands, solve for flows and production, add noise."""
    if T < 1:
        raise ValueError("T must be >= 1")
    prob, _, theta_true = transshipment_problem(scn)
    rng = np.random.default_rng(seed)
    stream = []
    for _ in range(T):
        d = rng.uniform(scn.demand_lo, scn.demand_hi, size=3)
        x = qpmod.solve(prob.instantiate(theta_true, d)).x
        y = x + scn.noise.sample(rng, prob.n)
        stream.append(Observation(u=d, y=y))
    return stream


# ---------------------------------------------------------------------------
# batch baseline and metrics

@dataclass
class BaselineConfig:
    mode: str = "coordinate"         # "grid" (p <= 3) | "coordinate"
    resolution: float = 1e-3         # grid spacing
    n_starts: int = 20               # coordinate-descent restarts
    min_step: float = 1e-4           # coordinate-descent terminal step
    seed: int = 0


def batch_baseline(problem: ParamQP, box: ParameterBox, observations,
                   config: BaselineConfig | None = None):
    """Approximate best fixed hypothesis in hindsight and its total loss.

    Quality is reported, not guaranteed; used to compute empirical regret.
    Returns (theta_star, total_loss).
    """
    config = config or BaselineConfig()
    observations = list(observations)

    def total(theta):
        return sum(eval_loss(problem, theta, o).value for o in observations)

    if config.mode == "grid":
        if box.p > 3:
            raise ValueError("grid mode supports p <= 3")
        axes = [np.arange(box.lo[i], box.hi[i] + 0.5 * config.resolution,
                          config.resolution) for i in range(box.p)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in mesh], axis=1)
        best_v, best_t = np.inf, None
        for th in pts:
            v = total(th)
            if v < best_v - 1e-15:
                best_v, best_t = v, th
        return np.asarray(best_t), float(best_v)

    if config.mode != "coordinate":
        raise ValueError(f"unknown baseline mode {config.mode!r}")
    rng = np.random.default_rng(config.seed)
    best_v, best_t = np.inf, None
    for s in range(config.n_starts):
        theta = box.lo + rng.uniform(0, 1, size=box.p) * (box.hi - box.lo)
        v = total(theta)
        step = np.max(box.hi - box.lo) / 4.0
        while step >= config.min_step:
            improved = False
            for i in range(box.p):
                for sign in (1.0, -1.0):
                    cand = theta.copy()
                    cand[i] = np.clip(cand[i] + sign * step, box.lo[i], box.hi[i])
                    if np.array_equal(cand, theta):
                        continue
                    vc = total(cand)
                    if vc < v - 1e-12:
                        theta, v = cand, vc
                        improved = True
            if not improved:
                step /= 2.0
        if v < best_v:
            best_v, best_t = v, theta
    return np.asarray(best_t), float(best_v)


@dataclass
class ExperimentReport:
    final_window_avg_loss: float
    window: int
    cum_loss_avg: np.ndarray
    losses: np.ndarray
    est_error: np.ndarray | None
    final_est_error: float | None
    regret: float | None             # total online loss minus baseline total loss


def metrics(trace: RunTrace, theta_true=None, baseline=None, window: int = 200) -> ExperimentReport:
    """Summarize a run: loss curves, final-window average, optional regret."""
    w = min(window, trace.T)
    final_avg = float(np.mean(trace.losses[-w:]))
    regret = None
    if baseline is not None:
        _, base_total = baseline
        regret = float(np.sum(trace.losses) - base_total)
    final_err = float(trace.est_error[-1]) if trace.est_error is not None else None
    return ExperimentReport(final_window_avg_loss=final_avg, window=w,
                            cum_loss_avg=trace.cum_loss_avg, losses=trace.losses,
                            est_error=trace.est_error, final_est_error=final_err,
                            regret=regret)


def regret_series(problem: ParamQP, box: ParameterBox, stream, trace: RunTrace,
                  horizons, config: BaselineConfig | None = None):
    """Empirical regret R_T at several horizons, each against its own baseline.

    Returns (R_T array, R_T/sqrt(T) array).
    """
    stream = list(stream)
    cum = np.cumsum(trace.losses)
    R = np.zeros(len(horizons))
    for k, T in enumerate(horizons):
        _, base_total = batch_baseline(problem, box, stream[:T], config)
        R[k] = cum[T - 1] - base_total
    horizons = np.asarray(list(horizons), dtype=float)
    return R, R / np.sqrt(horizons)
