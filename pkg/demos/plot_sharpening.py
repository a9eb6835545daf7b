"""
Sharpening during L-BFGS training of a convection PINN
======================================================

Train one network on the easy convection problem (beta = 5) and watch the
top Hessian eigenvalue grow while the loss falls by several decades.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from regimescope.benchmarks import ProblemSpec
from regimescope.training import OptimizerConfig, Recipe, train_full

problem = ProblemSpec("convection", 5.0, n_res=1000)
lbfgs = OptimizerConfig(method="lbfgs", lr=1.0, epochs=500, history=100)

# lambda_max is estimated by power iteration every 10 iterations
recipe = Recipe("pinn", problem, (lbfgs,), seed=0, lambda_max_every=10)
result = train_full(recipe)
print(result.summary)

###############################################################################
# The loss and the sharpness on shared iterations

it, lam = np.array(result.trace.lambda_max).T
fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9, 3.5))
ax0.semilogy(result.trace.losses())
ax0.set_xlabel("iteration")
ax0.set_ylabel("training loss")
ax1.semilogy(it, lam, "o-", ms=3)
ax1.set_xlabel("iteration")
ax1.set_ylabel("top Hessian eigenvalue")
fig.tight_layout()
fig.savefig("sharpening.png", dpi=120)
print(f"lambda_max grew {lam.max() / lam[0]:.1f}x")
