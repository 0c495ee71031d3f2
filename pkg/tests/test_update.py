"""Unit tests for the implicit (proximal) update solved by branch-and-bound."""

import numpy as np
import pytest

from invonline.loss import eval_loss
from invonline.model import Observation, ParameterBox, ParamQP
from invonline.update import bnb_projection, implicit_update, relax_bound, BnbNode


def cost_toy():
    # forward: min 0.5 x^2 - theta x  over [0, 4]  ->  x* = clip(theta, 0, 4)
    prob = ParamQP(n=1, p=1, m=0, Q=[[1.0]], C_theta=[[-1.0]],
                   A_ineq=[[1.0], [-1.0]], b0_ineq=[0.0, -4.0])
    return prob, ParameterBox([0.0], [4.0])


def rhs_toy():
    # forward: min 0.5 (x - 2)^2  s.t.  x <= theta  ->  x* = min(theta, 2)
    prob = ParamQP(n=1, p=1, m=0, Q=[[1.0]], c0=[-2.0],
                   A_ineq=[[-1.0], [1.0]], b0_ineq=[0.0, 0.0],
                   B_theta=[[-1.0], [0.0]])
    return prob, ParameterBox([0.0], [4.0])


def test_closed_form_cost_update():
    # interior region: loss = (y - theta)^2, minimizer (theta_t + 2 eta y)/(1 + 2 eta)
    # with theta_t = 0, eta = 1, y = 3 the update lands exactly at 2
    prob, box = cost_toy()
    res = implicit_update(prob, box, [0.0], 1.0, Observation(u=np.zeros(0), y=[3.0]))
    assert res.theta_next[0] == pytest.approx(2.0, abs=1e-6)
    assert res.status == "optimal"


def test_closed_form_rhs_update():
    # for theta <= 2: loss = (y - theta)^2; theta_t = 1, eta = 1, y = 2
    # minimizes 0.5 (th - 1)^2 + (2 - th)^2 at theta = 5/3 with value 1/3
    prob, box = rhs_toy()
    res = implicit_update(prob, box, [1.0], 1.0, Observation(u=np.zeros(0), y=[2.0]))
    assert res.theta_next[0] == pytest.approx(5.0 / 3.0, abs=1e-6)
    assert res.objective == pytest.approx(1.0 / 3.0, abs=1e-6)


def test_update_beats_grid_search():
    rng = np.random.default_rng(21)
    prob, box = cost_toy()
    grid = np.linspace(box.lo[0], box.hi[0], 2001)
    for _ in range(8):
        th_t = np.array([rng.uniform(0, 4)])
        eta = float(rng.uniform(0.2, 3.0))
        obs = Observation(u=np.zeros(0), y=[float(rng.uniform(-1, 5))])
        res = implicit_update(prob, box, th_t, eta, obs)
        best = min(0.5 * (g - th_t[0]) ** 2 + eta * eval_loss(prob, [g], obs).value
                   for g in grid)
        assert res.objective <= best + 1e-9
        assert res.objective >= best - 1e-2     # grid overshoots by its resolution


def test_objective_never_worse_than_staying_put():
    rng = np.random.default_rng(22)
    prob, box = rhs_toy()
    for _ in range(8):
        th_t = np.array([rng.uniform(0, 4)])
        eta = float(rng.uniform(0.2, 3.0))
        obs = Observation(u=np.zeros(0), y=[float(rng.uniform(0, 3))])
        res = implicit_update(prob, box, th_t, eta, obs)
        stay = eta * eval_loss(prob, th_t, obs).value
        assert res.objective <= stay + 1e-9


def test_anchor_outside_box_rejected():
    prob, box = cost_toy()
    with pytest.raises(ValueError):
        implicit_update(prob, box, [9.0], 1.0, Observation(u=np.zeros(0), y=[1.0]))


def test_nonpositive_eta_rejected():
    prob, box = cost_toy()
    with pytest.raises(ValueError):
        implicit_update(prob, box, [1.0], 0.0, Observation(u=np.zeros(0), y=[1.0]))


def test_bnb_projection_matches_eval_loss():
    rng = np.random.default_rng(23)
    prob, _ = cost_toy()
    for _ in range(10):
        th = np.array([rng.uniform(0, 4)])
        obs = Observation(u=np.zeros(0), y=[float(rng.uniform(-1, 5))])
        val = bnb_projection(prob, th, obs)[0]
        assert val == pytest.approx(eval_loss(prob, th, obs).value, abs=1e-8)


def test_relax_bound_below_restricted_optimum():
    prob, box = cost_toy()
    th_t = np.array([1.0])
    obs = Observation(u=np.zeros(0), y=[3.0])
    res = implicit_update(prob, box, th_t, 1.0, obs)
    root = relax_bound(prob, box, th_t, 1.0, obs, BnbNode(0, 0))
    assert root <= res.objective + 1e-9


def test_node_cannot_fix_row_both_ways():
    with pytest.raises(ValueError):
        BnbNode(fixed_active=1, fixed_inactive=1)


def test_progress_inequality_on_toy_sequence():
    prob, box = cost_toy()
    rng = np.random.default_rng(24)
    theta = np.array([0.0])
    for t in range(1, 21):
        obs = Observation(u=np.zeros(0), y=[float(rng.uniform(0, 4))])
        eta = 1.0 / np.sqrt(t)
        before = eval_loss(prob, theta, obs).value
        res = implicit_update(prob, box, theta, eta, obs)
        after = eval_loss(prob, res.theta_next, obs).value
        lhs = 0.5 * float(np.sum((res.theta_next - theta) ** 2)) + eta * after
        assert lhs <= eta * before + 1e-6
        theta = res.theta_next
