"""Numerical laboratory for dispersive estimates of Schrodinger evolutions
with long-range non-trapping metric perturbations.

Submodules
----------
geometry     metric families, decay certification, Hamiltonian flow
eikonal      stationary Hamilton-Jacobi phase tables on conic regions
symbols      quantization, cutoffs, dyadic partitions, transport amplitudes
propagators  discrete operators, exact/reference/fast propagation, FIOs
estimates    quantitative experiments for every measured inequality
snapshots    binary container and CSV dumps
config, cli  reproducible experiment orchestration
"""

from .errors import *  # noqa: F401,F403
from .geometry import (ConicRegion, CotangentPoint, Metric, bump_metric,
                       flat_metric, hamiltonian_flow, long_range_metric,
                       metric_from_dict, nontrapping_certificate,
                       principal_symbol, subprincipal_symbol,
                       trapping_demo_metric, verify_long_range)
from .grids import GridFunction, GridSpec, delta_column, gaussian_state
from .windows import SpectralWindow

__all__ = [
    "ConicRegion", "CotangentPoint", "Metric", "bump_metric", "flat_metric",
    "hamiltonian_flow", "long_range_metric", "metric_from_dict",
    "nontrapping_certificate", "principal_symbol", "subprincipal_symbol",
    "trapping_demo_metric", "verify_long_range", "GridFunction", "GridSpec",
    "delta_column", "gaussian_state", "SpectralWindow",
]
