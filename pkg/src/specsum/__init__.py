"""Sampling estimators for normalized spectral sums of sparse Hermitian matrices."""

from .errors import (
    CheckError,
    ConditioningGuardError,
    DegreeGuardError,
    DepthGuardError,
    GuardError,
    InputError,
    ScaleGuardError,
)
from .estimator import EstimateReport, EstimateRequest, estimate, sample_count
from .estimators import LocalSpectralSumEstimator, SpectralSumEstimator
from .local_ham import LocalHamiltonian, LocalTerm
from .oracle import DenseOracle, MatrixOracle, SparseOracle, SpectralBounds, synth_family
from .polyapprox import Polynomial

__all__ = [
    "CheckError", "ConditioningGuardError", "DegreeGuardError", "DepthGuardError",
    "DenseOracle", "EstimateReport", "EstimateRequest", "GuardError", "InputError",
    "LocalHamiltonian", "LocalSpectralSumEstimator", "LocalTerm", "MatrixOracle",
    "Polynomial", "ScaleGuardError", "SparseOracle", "SpectralBounds",
    "SpectralSumEstimator", "estimate", "sample_count", "synth_family",
]
__version__ = "0.1.0"
