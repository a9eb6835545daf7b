"""Loss-landscape diagnostics over a Hessian-vector-product oracle."""

from .connectivity import ConnectivityResult, bezier, mc_from_samples, mode_connectivity
from .powerlaw import PowerLawFit, fit_power_law, pl_exponent, post_threshold_steps
from .spectrum import (
    EigenResult,
    SpectralDensity,
    hessian_trace,
    lambda_max,
    lanczos,
    negative_mass,
    slq_density,
    top_eigs,
)
from .surface import SurfaceSlice, filter_normalize, surface_slice

__all__ = [
    "ConnectivityResult",
    "EigenResult",
    "PowerLawFit",
    "SpectralDensity",
    "SurfaceSlice",
    "bezier",
    "filter_normalize",
    "fit_power_law",
    "hessian_trace",
    "lambda_max",
    "lanczos",
    "mc_from_samples",
    "mode_connectivity",
    "negative_mass",
    "pl_exponent",
    "post_threshold_steps",
    "slq_density",
    "surface_slice",
    "top_eigs",
]
