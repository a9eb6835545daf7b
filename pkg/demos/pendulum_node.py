"""
Neural ODE on a damped pendulum
===============================

Fit the vector field of a damped pendulum from a sampled trajectory, first
from data alone and then with a physics term that pulls the learned field
toward the known dynamics.
"""

import numpy as np

from regimescope.benchmarks import ProblemSpec
from regimescope.training import OptimizerConfig, Recipe, train_full

problem = ProblemSpec("pendulum", 0.5, horizon=20.0)
adam = OptimizerConfig(method="adam", lr=1e-3, epochs=300, batch_size=32)

###############################################################################
# ``node_window=1`` trains on one-step predictions from every observed state

for model, weight in (("node", 0.0), ("pinode", 1.0)):
    res = train_full(Recipe(model, problem, (adam,), node_window=1, physics_weight=weight))
    s = res.summary
    print(f"{model:7s} train {s['train_loss']:.2e}  rollout {s['rollout_loss']:.3e}  test {s['test_error']:.3e}")

###############################################################################
# With the physics weight at zero the physics-informed model is the plain one

a = train_full(Recipe("node", problem, (adam,), node_window=1))
b = train_full(Recipe("pinode", problem, (adam,), node_window=1, physics_weight=0.0))
print("identical traces:", np.array_equal(a.trace.losses(), b.trace.losses()))
