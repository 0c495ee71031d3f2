"""End-to-end acceptance tests.

The first three fixtures reproduce the full experiment budgets (T = 1000,
10 repetitions, default learning rates, the same seed layout the CLI uses)
and are shared across the convergence, error-decrease, warm-start, and
progress-inequality tests.  The remaining tests exercise the numerical
core against independent oracles: exhaustive KKT enumeration, dense grid
search over the hypothesis box, a convex-programming projection oracle,
and byte-level CSV comparison.
"""

import time

import numpy as np
import pytest
from scipy.optimize import linprog

from invonline.cli import main as cli_main
from invonline.experiments import (
    BaselineConfig,
    ConsumerScenario,
    NoiseModel,
    TransshipmentScenario,
    consumer_problem_budget,
    consumer_problem_utility,
    gen_consumer_stream,
    gen_transshipment_stream,
    regret_series,
    transshipment_problem,
)
from invonline.learner import LearnerConfig, run
from invonline.loss import eval_loss
from invonline.model import Observation, ParameterBox, ParamQP
from invonline.qp import enumerate_kkt, solve
from invonline.update import implicit_update

from conftest import random_strict_qp

T_FULL = 1000
REPS = 10
WINDOW = 200
BUDGET_SECONDS = 600.0


# ---------------------------------------------------------------------------
# shared full-budget experiment runs

def _run_reps(kind):
    reps = []
    t0 = time.perf_counter()
    for rep in range(REPS):
        if kind in ("consumer", "budget"):
            scn = ConsumerScenario.generate(rep)
            prob, box, theta_true = (consumer_problem_utility(scn) if kind == "consumer"
                                     else consumer_problem_budget(scn))
            stream = gen_consumer_stream(scn, T_FULL, rep + 7919)
            cfg = LearnerConfig(eta0=5.0 if kind == "consumer" else 100.0)
            dim = scn.n
        else:
            scn = TransshipmentScenario.generate(rep)
            prob, box, theta_true = transshipment_problem(scn)
            stream = gen_transshipment_stream(scn, T_FULL, rep + 7919)
            cfg = LearnerConfig(eta0=2.0, theta0=0.5 * (box.lo + box.hi))
            dim = prob.n
        trace = run(prob, box, stream, cfg, theta_true=theta_true)
        reps.append({"problem": prob, "box": box, "theta_true": theta_true,
                     "stream": stream, "trace": trace, "eta0": cfg.eta0})
    return {"reps": reps, "elapsed": time.perf_counter() - t0,
            "expected_loss": NoiseModel().expected_sq_norm(dim)}


@pytest.fixture(scope="session")
def consumer_runs():
    return _run_reps("consumer")


@pytest.fixture(scope="session")
def budget_runs():
    return _run_reps("budget")


@pytest.fixture(scope="session")
def transshipment_runs():
    return _run_reps("transshipment")


def _mean_est_error(runs):
    return np.mean(np.stack([r["trace"].est_error for r in runs["reps"]]), axis=0)


# ---------------------------------------------------------------------------
# 1-2: average loss converges to the noise variance

def test_consumer_loss_converges_to_noise_variance(consumer_runs):
    tails = [float(np.mean(r["trace"].losses[-WINDOW:])) for r in consumer_runs["reps"]]
    mean_tail = float(np.mean(tails))
    expected = consumer_runs["expected_loss"]       # 10 * 0.25^2 / 3 = 0.2083
    assert 0.177 <= mean_tail <= 0.240, \
        f"tail loss {mean_tail:.4f} outside +-15% of {expected:.4f}"
    assert consumer_runs["elapsed"] <= BUDGET_SECONDS


def test_transshipment_loss_converges_to_noise_variance(transshipment_runs):
    tails = [float(np.mean(r["trace"].losses[-WINDOW:]))
             for r in transshipment_runs["reps"]]
    mean_tail = float(np.mean(tails))
    expected = transshipment_runs["expected_loss"]  # 8 * 0.25^2 / 3 = 0.1667
    assert abs(mean_tail - expected) <= 0.15 * expected, \
        f"tail loss {mean_tail:.4f} outside +-15% of {expected:.4f}"
    assert transshipment_runs["elapsed"] <= BUDGET_SECONDS


# ---------------------------------------------------------------------------
# 3: estimation error decreases in every experiment

@pytest.mark.parametrize("fixture_name", ["consumer_runs", "budget_runs",
                                          "transshipment_runs"])
def test_estimation_error_decreases(fixture_name, request):
    runs = request.getfixturevalue(fixture_name)
    err = _mean_est_error(runs)                     # (T+1,), err[t] after round t
    assert err[T_FULL] < 0.25 * err[10], \
        f"final error {err[T_FULL]:.4f} vs round-10 error {err[10]:.4f}"
    smoothed = np.convolve(err[1:], np.ones(50) / 50.0, mode="valid")
    upticks = np.diff(smoothed)
    assert float(np.max(upticks, initial=0.0)) <= 0.0, \
        f"smoothed mean error curve rises by {np.max(upticks):.2e}"


# ---------------------------------------------------------------------------
# 4: warm start reaches the cold run's round-200 error quickly

def test_warm_start_reaches_cold_error_within_100_rounds(consumer_runs):
    cold_err_200 = _mean_est_error(consumer_runs)[200]
    warm_errs = []
    for rep in range(REPS):
        scn = ConsumerScenario.generate(rep)
        prob, box, theta_true = consumer_problem_utility(scn)
        stream = gen_consumer_stream(scn, 100, rep + 7919)
        history = gen_consumer_stream(scn, 200, rep + 104729)
        cfg = LearnerConfig(eta0=5.0, start="warm", warm_history=history)
        warm_errs.append(run(prob, box, stream, cfg, theta_true=theta_true).est_error)
    warm_mean = np.mean(np.stack(warm_errs), axis=0)
    first_hit = next((t for t in range(101) if warm_mean[t] <= cold_err_200), None)
    assert first_hit is not None, \
        f"warm error stays above cold round-200 level {cold_err_200:.4f}"


# ---------------------------------------------------------------------------
# 5: QP solver equivalence with the exhaustive KKT oracle

def test_qp_solver_matches_enumeration_oracle():
    rng = np.random.default_rng(2024)
    for k in range(200):
        qp = random_strict_qp(rng, n_max=6, q_max=8)
        sol = solve(qp)
        ref = enumerate_kkt(qp)
        assert abs(sol.objective - ref.objective) <= 1e-6, f"instance {k}"
        assert sol.kkt_residual <= 1e-8, f"instance {k}"


# ---------------------------------------------------------------------------
# 6: implicit update reaches the global optimum

def _random_param_problem(rng, p):
    """A small parameterized problem with theta in cost and/or RHS."""
    n = int(rng.integers(1, 4))
    Q = np.diag(rng.uniform(0.5, 2.0, n))
    C_theta = rng.uniform(-1, 1, (n, p))
    A = np.vstack([np.eye(n), -np.eye(n)])
    b0 = np.concatenate([np.full(n, -1.0), np.full(n, -3.0)])
    B_theta = np.zeros((2 * n, p))
    if rng.uniform() < 0.4:                         # sometimes shift the RHS too
        B_theta[int(rng.integers(0, n)), int(rng.integers(0, p))] = -0.3
    prob = ParamQP(n=n, p=p, m=0, Q=Q, c0=rng.uniform(-1, 1, n),
                   C_theta=C_theta, A_ineq=A, b0_ineq=b0, B_theta=B_theta)
    box = ParameterBox(np.zeros(p), 2.0 * np.ones(p))
    obs = Observation(u=np.zeros(0), y=rng.uniform(-2, 2, n))
    theta_t = rng.uniform(0, 2, p)
    eta = float(rng.uniform(0.3, 2.0))
    return prob, box, theta_t, eta, obs


def _grid_objective(prob, theta_t, eta, obs, points):
    vals = np.array([0.5 * float(np.sum((g - theta_t) ** 2))
                     + eta * eval_loss(prob, g, obs).value for g in points])
    return vals


def test_update_matches_grid_search():
    rng = np.random.default_rng(99)
    res_ = 1e-3
    for k in range(35):                             # p = 1: full grid at 1e-3
        prob, box, theta_t, eta, obs = _random_param_problem(rng, 1)
        upd = implicit_update(prob, box, theta_t, eta, obs)
        grid = np.linspace(0.0, 2.0, 2001)[:, None]
        vals = _grid_objective(prob, theta_t, eta, obs, grid)
        i = int(np.argmin(vals))
        slack = max(abs(vals[min(i + 1, 2000)] - vals[i]),
                    abs(vals[max(i - 1, 0)] - vals[i])) + 1e-6
        assert upd.objective <= vals[i] + 1e-9, f"instance p1-{k}"
        assert upd.objective >= vals[i] - slack, f"instance p1-{k}"
    for k in range(15):                             # p = 2: coarse grid, 1e-3 refine
        prob, box, theta_t, eta, obs = _random_param_problem(rng, 2)
        upd = implicit_update(prob, box, theta_t, eta, obs)
        ax = np.linspace(0.0, 2.0, 101)
        coarse = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
        vals = _grid_objective(prob, theta_t, eta, obs, coarse)
        center = coarse[int(np.argmin(vals))]
        lo = np.clip(center - 0.04, 0.0, 2.0)
        hi = np.clip(center + 0.04, 0.0, 2.0)
        fx = np.arange(lo[0], hi[0] + 0.5 * res_, res_)
        fy = np.arange(lo[1], hi[1] + 0.5 * res_, res_)
        fine = np.stack(np.meshgrid(fx, fy, indexing="ij"), axis=-1).reshape(-1, 2)
        fvals = _grid_objective(prob, theta_t, eta, obs, fine)
        best = min(float(np.min(vals)), float(np.min(fvals)))
        assert upd.objective <= best + 1e-9, f"instance p2-{k}"
        assert upd.objective >= best - 0.05, f"instance p2-{k}"


def test_update_closed_forms():
    # cost learning: forward min 0.5 x^2 - theta x over [0, 4]; interior loss
    # (y - theta)^2, so theta_t = 0, eta = 1, y = 3 gives (0 + 2*3)/3 = 2
    prob = ParamQP(n=1, p=1, m=0, Q=[[1.0]], C_theta=[[-1.0]],
                   A_ineq=[[1.0], [-1.0]], b0_ineq=[0.0, -4.0])
    box = ParameterBox([0.0], [4.0])
    res = implicit_update(prob, box, [0.0], 1.0, Observation(u=np.zeros(0), y=[3.0]))
    assert abs(res.theta_next[0] - 2.0) <= 1e-6
    # RHS learning: forward min 0.5 (x-2)^2 s.t. x <= theta; for theta <= 2 the
    # loss is (y - theta)^2, so theta_t = 1, eta = 1, y = 2 gives 5/3
    prob = ParamQP(n=1, p=1, m=0, Q=[[1.0]], c0=[-2.0],
                   A_ineq=[[-1.0], [1.0]], b0_ineq=[0.0, 0.0],
                   B_theta=[[-1.0], [0.0]])
    res = implicit_update(prob, box, [1.0], 1.0, Observation(u=np.zeros(0), y=[2.0]))
    assert abs(res.theta_next[0] - 5.0 / 3.0) <= 1e-6


# ---------------------------------------------------------------------------
# 7: per-round progress inequality on every experiment run

@pytest.mark.parametrize("fixture_name", ["consumer_runs", "budget_runs",
                                          "transshipment_runs"])
def test_progress_inequality_every_round(fixture_name, request):
    runs = request.getfixturevalue(fixture_name)
    violations = 0
    for r in runs["reps"]:
        prob, stream, tr = r["problem"], r["stream"], r["trace"]
        for t in range(1, tr.T + 1):
            if tr.update_status[t - 1] == "skipped":
                continue                            # theta unchanged; trivially holds
            eta = tr.eta[t - 1]
            theta_prev, theta_next = tr.thetas[t - 1], tr.thetas[t]
            after = eval_loss(prob, theta_next, stream[t - 1]).value
            lhs = 0.5 * float(np.sum((theta_next - theta_prev) ** 2)) + eta * after
            if lhs > eta * tr.losses[t - 1] + 1e-6:
                violations += 1
    assert violations == 0


# ---------------------------------------------------------------------------
# 8: empirical regret is bounded and R_T / sqrt(T) does not grow

def test_regret_bounded_and_normalized_regret_flat():
    # small strictly convex problem so the hindsight baseline is affordable:
    # forward min 0.5||x||^2 - (theta, u)'x over [0, 3]^2, theta_true = 1.7
    prob = ParamQP(n=2, p=1, m=1, Q=np.eye(2), C_theta=[[-1.0], [0.0]],
                   C_u=[[0.0], [-1.0]],
                   A_ineq=np.vstack([np.eye(2), -np.eye(2)]),
                   b0_ineq=[0.0, 0.0, -3.0, -3.0])
    box = ParameterBox([0.0], [3.0])
    theta_true = np.array([1.7])
    rng = np.random.default_rng(7)
    noise = NoiseModel()
    stream = []
    for _ in range(T_FULL):
        u = np.array([rng.uniform(0.5, 2.5)])
        x = np.clip(np.array([theta_true[0], u[0]]), 0.0, 3.0)
        stream.append(Observation(u=u, y=x + noise.sample(rng, 2)))
    trace = run(prob, box, stream, LearnerConfig(eta0=1.5), theta_true=theta_true)
    horizons = list(range(100, 1001, 100))
    R, R_norm = regret_series(prob, box, stream, trace, horizons,
                              BaselineConfig(mode="coordinate", n_starts=3,
                                             min_step=1e-4))
    slack = 1e-6 * np.asarray(horizons, dtype=float)
    assert np.all(R >= -slack), f"negative regret beyond slack: {R}"
    # fitted drift of R_T / sqrt(T) across the horizon range stays within
    # 5% of its mean: normalized regret does not trend upward
    slope = float(np.polyfit(horizons, R_norm, 1)[0])
    drift = slope * (horizons[-1] - horizons[0])
    assert drift <= 0.05 * float(np.mean(R_norm)), \
        f"normalized regret drifts up by {drift:.4f} (mean {np.mean(R_norm):.4f})"


# ---------------------------------------------------------------------------
# 9: identical CLI invocations produce byte-identical CSVs

def test_cli_reproducibility_byte_identical(tmp_path, capsys):
    outs = []
    for name in ("first", "second"):
        out = tmp_path / name
        code = cli_main(["run-consumer", "--T", "25", "--reps", "2",
                         "--seed", "3", "--out-dir", str(out)])
        assert code == 0
        outs.append(out)
    for fname in ("rep00.csv", "rep01.csv", "aggregate.csv"):
        rows_a = (outs[0] / fname).read_text().strip().split("\n")
        rows_b = (outs[1] / fname).read_text().strip().split("\n")
        header = rows_a[0].split(",")
        keep = [i for i, h in enumerate(header) if "wall" not in h]
        strip = lambda rows: [",".join(r.split(",")[i] for i in keep) for r in rows]
        assert strip(rows_a) == strip(rows_b), fname


# ---------------------------------------------------------------------------
# 10: multivalued solution sets are handled exactly

def test_segment_loss_value():
    # forward min x1 + x2 s.t. x1 + x2 >= 1, x in [0,1]^2: the optimal set is
    # the segment from (1,0) to (0,1); y = (0.6, 0.6) projects to (0.5, 0.5)
    prob = ParamQP(n=2, p=0, m=0, Q=np.zeros((2, 2)), c0=[1.0, 1.0],
                   A_ineq=np.vstack([[1.0, 1.0], np.eye(2), -np.eye(2)]),
                   b0_ineq=[1.0, 0.0, 0.0, -1.0, -1.0])
    lv = eval_loss(prob, np.zeros(0), Observation(u=np.zeros(0), y=[0.6, 0.6]))
    assert abs(lv.value - 0.02) <= 1e-6


def _projection_oracle(A, b, c, y):
    """Distance from y to the LP's optimal face, via HiGHS + cvxopt."""
    from cvxopt import matrix, solvers
    lp = linprog(c, A_ub=-A, b_ub=-b, bounds=[(None, None)] * len(c),
                 method="highs")
    assert lp.status == 0
    n = len(c)
    sol = solvers.qp(P=matrix(2.0 * np.eye(n)), q=matrix(-2.0 * y),
                     G=matrix(-A), h=matrix(-b),
                     A=matrix(np.asarray(c, dtype=float)[None, :]),
                     b=matrix([float(lp.fun)]),
                     options={"show_progress": False,
                              "abstol": 1e-10, "reltol": 1e-10})
    assert sol["status"] == "optimal"
    x = np.asarray(sol["x"]).ravel()
    return float(np.sum((y - x) ** 2))


def test_multivalued_loss_matches_projection_oracle():
    rng = np.random.default_rng(404)
    for k in range(20):
        n = int(rng.integers(2, 6))
        box_rows = np.vstack([np.eye(n), -np.eye(n)])
        box_rhs = np.concatenate([np.full(n, -2.0), np.full(n, -2.0)])
        extra = rng.uniform(-1, 1, (2, n))
        x0 = rng.uniform(-1, 1, n)
        A = np.vstack([box_rows, extra])
        b = np.concatenate([box_rhs, extra @ x0 - rng.uniform(0.2, 1.0, 2)])
        c = rng.uniform(-1, 1, n)
        prob = ParamQP(n=n, p=0, m=0, Q=np.zeros((n, n)), c0=c,
                       A_ineq=A, b0_ineq=b)
        y = rng.uniform(-2.5, 2.5, n)
        lv = eval_loss(prob, np.zeros(0), Observation(u=np.zeros(0), y=y))
        ref = _projection_oracle(A, b, c, y)
        assert abs(lv.value - ref) <= 1e-6, f"instance {k}"
