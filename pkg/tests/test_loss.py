"""Unit tests for the set-distance loss."""

import numpy as np
import pytest

from invonline.loss import InfeasibleForward, eval_loss, kkt_projection
from invonline.model import Observation, ParamQP


def strictly_convex_problem():
    # forward: min 0.5 x'Qx - theta'x  over the square [0, 4]^2
    return ParamQP(n=2, p=2, m=1, Q=np.eye(2), C_theta=-np.eye(2),
                   A_ineq=np.vstack([np.eye(2), -np.eye(2)]),
                   b0_ineq=[0.0, 0.0, -4.0, -4.0])


def segment_problem():
    # forward: min x1 + x2  s.t.  x1 + x2 >= 1,  x in [0, 1]^2
    # optimal set is the whole segment between (1, 0) and (0, 1)
    return ParamQP(n=2, p=0, m=0, Q=np.zeros((2, 2)), c0=[1.0, 1.0],
                   A_ineq=np.vstack([[1.0, 1.0], np.eye(2), -np.eye(2)]),
                   b0_ineq=[1.0, 0.0, 0.0, -1.0, -1.0])


def test_singleton_loss_is_distance_to_unique_optimum():
    prob = strictly_convex_problem()
    theta = np.array([1.0, 2.0])            # interior optimum x* = theta
    y = np.array([1.5, 1.0])
    lv = eval_loss(prob, theta, Observation(u=[0.0], y=y))
    assert lv.value == pytest.approx(float(np.sum((y - theta) ** 2)), abs=1e-9)
    assert np.allclose(lv.x_star, theta, atol=1e-8)


def test_zero_loss_at_exact_decision():
    prob = strictly_convex_problem()
    lv = eval_loss(prob, [1.0, 1.0], Observation(u=[0.0], y=[1.0, 1.0]))
    assert lv.value == pytest.approx(0.0, abs=1e-10)


def test_segment_projection():
    lv = eval_loss(segment_problem(), np.zeros(0),
                   Observation(u=np.zeros(0), y=[0.6, 0.6]))
    assert lv.value == pytest.approx(0.02, abs=1e-9)
    assert np.allclose(lv.x_star, [0.5, 0.5], atol=1e-6)


def test_multivalued_picks_nearest_point_of_face():
    # y near one end of the segment projects onto that end's neighborhood
    lv = eval_loss(segment_problem(), np.zeros(0),
                   Observation(u=np.zeros(0), y=[1.2, -0.1]))
    assert np.allclose(lv.x_star, [1.0, 0.0], atol=1e-6)
    assert lv.value == pytest.approx(0.04 + 0.01, abs=1e-8)


def test_infeasible_forward_raises():
    prob = ParamQP(n=1, p=0, m=0, Q=[[1.0]],
                   A_ineq=[[1.0], [-1.0]], b0_ineq=[1.0, 0.0])
    with pytest.raises(InfeasibleForward):
        eval_loss(prob, np.zeros(0), Observation(u=np.zeros(0), y=[0.0]))


def test_kkt_projection_matches_eval_loss_for_singular_q():
    rng = np.random.default_rng(9)
    prob = segment_problem()
    for _ in range(10):
        y = rng.uniform(-0.5, 1.5, 2)
        obs = Observation(u=np.zeros(0), y=y)
        val, _x = kkt_projection(prob, np.zeros(0), obs)
        lv = eval_loss(prob, np.zeros(0), obs)
        assert val == pytest.approx(lv.value, abs=1e-10)
