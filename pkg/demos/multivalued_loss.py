"""Exact loss when the forward problem has many optimal solutions.

With a linear objective (zero quadratic term) the optimal solution set can
be a whole face of the feasible polyhedron.  The loss is then the distance
to the nearest point of that face, not to an arbitrary optimizer — using a
single solver answer would overstate the loss and corrupt the updates.

Run:  python3 demos/multivalued_loss.py
"""

import numpy as np

from invonline import Observation, ParamQP, eval_loss, solve

# forward: min x1 + x2  s.t.  x1 + x2 >= 1, x in [0, 1]^2
# every point of the segment (1,0) -- (0,1) is optimal
prob = ParamQP(n=2, p=0, m=0, Q=np.zeros((2, 2)), c0=[1.0, 1.0],
               A_ineq=np.vstack([[1.0, 1.0], np.eye(2), -np.eye(2)]),
               b0_ineq=[1.0, 0.0, 0.0, -1.0, -1.0])

y = np.array([0.6, 0.6])
one_solution = solve(prob.instantiate(np.zeros(0), np.zeros(0))).x
lv = eval_loss(prob, np.zeros(0), Observation(u=np.zeros(0), y=y))

print(f"observed decision y = {y}")
print(f"one optimizer returned by the QP solver: {np.round(one_solution, 4)}")
print(f"  naive squared distance to it: {float(np.sum((y - one_solution) ** 2)):.4f}")
print(f"exact set distance (projection onto the optimal face): {lv.value:.4f}")
print(f"  nearest optimal point: {np.round(lv.x_star, 4)}   (expected (0.5, 0.5), loss 0.02)")
