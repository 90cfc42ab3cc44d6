"""Stein operators, kernel Stein discrepancies and weighted Laplacians on
simple Riemannian manifolds (circle, spheres, hyperbolic space, flat tori and
Euclidean space)."""

__version__ = "0.1.0"

from .errors import ConfigError, GeoSteinError  # noqa: E402
from .geometry import (  # noqa: E402
    GeodesicBall,
    ManifoldSpec,
    Point,
    Punctured,
    Tangent,
    distance,
    exp_map,
    log_map,
    orthonormal_frame,
    validate_point,
)
from .ksd import Kernel, gof_wild_bootstrap, ksd_estimate, stein_gram, stein_kernel  # noqa: E402
from .measures import TargetDensity  # noqa: E402
from .operator import DiffConfig, TestFunction, stein_apply, stein_identity_mc  # noqa: E402
from .sampling import ChainConfig, SampleSet, contaminate, geodesic_rw_mh  # noqa: E402
from .spectral import GridSpec, discretize, kernel_dimension, solve_stein_equation, spectral_gap  # noqa: E402,E501

__all__ = [
    "ChainConfig", "ConfigError", "DiffConfig", "GeoSteinError", "GeodesicBall", "GridSpec",
    "Kernel", "ManifoldSpec", "Point", "Punctured", "SampleSet", "Tangent", "TargetDensity",
    "TestFunction", "contaminate", "discretize", "distance", "exp_map", "geodesic_rw_mh",
    "gof_wild_bootstrap", "kernel_dimension", "ksd_estimate", "log_map", "orthonormal_frame",
    "solve_stein_equation", "spectral_gap", "stein_apply", "stein_gram",
    "stein_identity_mc", "stein_kernel", "validate_point",
]
