"""Learn a consumer's utility vector from purchase decisions.

A consumer picks a bundle of 10 products each day by maximizing a concave
utility under a budget of 40, at prices we observe.  We watch the (noisy)
bundles and recover the 10 marginal-utility coefficients online.

Run:  python3 demos/consumer_utility.py
"""

import numpy as np

from invonline import (
    ConsumerScenario,
    LearnerConfig,
    NoiseModel,
    consumer_problem_utility,
    gen_consumer_stream,
    run,
)

T = 300
scn = ConsumerScenario.generate(seed=0)
prob, box, theta_true = consumer_problem_utility(scn)
stream = gen_consumer_stream(scn, T, seed=7919)

print(f"true utility vector: {np.round(theta_true, 3)}")
print(f"learning from {T} rounds of noisy purchases at random prices...")

trace = run(prob, box, stream, LearnerConfig(eta0=5.0), theta_true=theta_true)

for t in (1, 10, 50, 100, 200, T):
    print(f"  round {t:4d}: loss {trace.losses[t - 1]:.4f}   "
          f"relative estimation error {trace.est_error[t]:.4f}")

noise_floor = NoiseModel().expected_sq_norm(scn.n)
tail = float(np.mean(trace.losses[-100:]))
print(f"\nlast-100-round average loss {tail:.4f} "
      f"(noise floor E[eps'eps] = {noise_floor:.4f})")
print(f"estimate after {T} rounds: {np.round(trace.thetas[-1], 3)}")
