"""
Loss-landscape diagnostics at a trained PINN
============================================

Spectrum, trace, a 2-D slice and mode connectivity between two seeds, all
through Hessian-vector products.
"""

import matplotlib

matplotlib.use("Agg")

from regimescope import figures
from regimescope.benchmarks import ProblemSpec
from regimescope.diffcore import HvpOracle
from regimescope.landscape import hessian_trace, mode_connectivity, negative_mass, slq_density, surface_slice, top_eigs
from regimescope.training import OptimizerConfig, Recipe, train_full
from regimescope.training.recipe import build

problem = ProblemSpec("reaction", 5.0, n_res=500)
lbfgs = OptimizerConfig(method="lbfgs", lr=1.0, epochs=300, history=100)
runs = [train_full(Recipe("pinn", problem, (lbfgs,), seed=s)) for s in (0, 1)]
obj = build(Recipe("pinn", problem, (lbfgs,), seed=0)).objective
theta = runs[0].params.theta
hvp = HvpOracle(obj, theta, "exact")

###############################################################################
# Curvature summaries

eigs = top_eigs(hvp, theta.size, k=3, seed=0)
print("top eigenvalues", eigs.values)
print("trace", hessian_trace(hvp, theta.size, seed=0))
density = slq_density(hvp, theta.size, seed=0)
print("negative mass", negative_mass(density))
figures.density_plot(density, "density.svg")

###############################################################################
# A filter-normalised slice around the solution

slice_ = surface_slice(obj, runs[0].params, hvp, radius=1.0, grid_n=21, seed=0)
figures.surface_plot(slice_, "surface.svg")

###############################################################################
# Bezier path between the two seeds; a negative value is a barrier

mc = mode_connectivity(obj, theta, runs[1].params.theta, steps=100, seed=0)
print(f"mode connectivity {mc.mc:.3e} at t = {mc.t_star:.2f}")
figures.curve_plot(mc, "connectivity.svg")
