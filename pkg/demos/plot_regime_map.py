"""
A small regime map
==================

Sweep the convection coefficient against the number of collocation points
on a tiny grid, then label each cell as Regime I (trains and generalises),
II (fails to train) or III (trains but does not generalise).

The budget here is far too small for converged runs; it shows the workflow.
Use ``configs/convection_sweep.yaml`` with ``python -m regimescope sweep``
for the real map.
"""

import matplotlib

matplotlib.use("Agg")
from pathlib import Path

from regimescope import figures
from regimescope.benchmarks import ProblemSpec
from regimescope.regime import DEFAULT_THRESHOLDS, SweepConfig, build_regime_map, run_sweep
from regimescope.training import OptimizerConfig, Recipe

base = Recipe(
    "pinn",
    ProblemSpec("convection", 5.0, n_res=100),
    (OptimizerConfig(method="lbfgs", lr=1.0, epochs=100, history=50),),
)
sweep = SweepConfig(base, "coeff", (5.0, 40.0), "n_res", (100, 1000), seeds=(0,))

out = Path("demo_sweep")
grid = run_sweep(sweep, out, workers=1, progress=lambda run_dir: print("finished", run_dir))

###############################################################################
# Labels use the published thresholds for L-BFGS on convection

T_train, T_test = DEFAULT_THRESHOLDS[("pinn", "convection", "lbfgs")]
rmap = build_regime_map(grid, T_train, T_test)
print(rmap.labels[::-1])
figures.regime_heatmap(rmap, "train", out / "train.svg")
figures.regime_heatmap(rmap, "test", out / "test.svg")
