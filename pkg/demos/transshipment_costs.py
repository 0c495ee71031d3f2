"""Learn two hidden edge costs on a small transshipment network.

Two producers ship to three consumers over six edges; production costs are
quadratic.  We observe noisy flow/production decisions under fluctuating
demands and recover the transportation costs of edges (2,3) and (2,5).

Run:  python3 demos/transshipment_costs.py
"""

import numpy as np

from invonline import (
    LearnerConfig,
    NoiseModel,
    TransshipmentScenario,
    gen_transshipment_stream,
    run,
    transshipment_problem,
)

T = 300
scn = TransshipmentScenario.generate(seed=0)
prob, box, theta_true = transshipment_problem(scn)
stream = gen_transshipment_stream(scn, T, seed=7919)

print(f"true costs of the learned edges (2,3), (2,5): {np.round(theta_true, 3)}")
print(f"learning from {T} rounds of noisy network flows...")

cfg = LearnerConfig(eta0=2.0, theta0=0.5 * (box.lo + box.hi))
trace = run(prob, box, stream, cfg, theta_true=theta_true)

for t in (1, 10, 50, 100, 200, T):
    print(f"  round {t:4d}: estimate {np.round(trace.thetas[t], 3)}   "
          f"relative error {trace.est_error[t]:.4f}")

noise_floor = NoiseModel().expected_sq_norm(prob.n)
tail = float(np.mean(trace.losses[-100:]))
print(f"\nlast-100-round average loss {tail:.4f} "
      f"(noise floor E[eps'eps] = {noise_floor:.4f})")
