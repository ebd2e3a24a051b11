"""Brownian polymer in a correlated Gaussian environment: simulation and exact checks."""

__version__ = "0.1.0"

from .kernel import CovKernel, make_kernel
from .gaussian_core import FieldSample, GaussianFunctional, GridSpec, SpectralBasis, build_basis, sample_field
from .polymer_mc import McEstimate, PolymerPath, sample_path

__all__ = [
    "CovKernel",
    "FieldSample",
    "GaussianFunctional",
    "GridSpec",
    "McEstimate",
    "PolymerPath",
    "SpectralBasis",
    "build_basis",
    "make_kernel",
    "sample_field",
    "sample_path",
]
