"""scikit-learn style wrappers around the sampling estimators.

``fit`` takes the matrix (an oracle, a dense array or a LocalHamiltonian) and
stores the report; there is no ``y`` and nothing to predict.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import estimator as est
from . import local_ham
from .errors import InputError
from .validation import check_bounds, check_oracle, check_positive, check_probability

_TARGETS = {"logdet": "logdet", "trinv": "trace-inverse", "power": "trace-power",
            "partition": "partition", "trace": "normalized-trace"}


class _SpectralBase(BaseEstimator):
    def _request(self) -> est.EstimateRequest:
        if self.target not in _TARGETS:
            raise InputError(f"target must be one of {sorted(_TARGETS)}, got {self.target!r}")
        samples = None if self.samples is None else check_positive("samples", self.samples, integer=True)
        return est.EstimateRequest(
            _TARGETS[self.target], check_probability("eps", self.eps),
            check_probability("delta", self.delta), self.method, int(self.seed), samples,
            check_positive("workers", self.workers, integer=True),
        )

    def _store(self, rep: est.EstimateReport):
        self.report_ = rep
        self.value_ = rep.value
        self.degree_ = rep.degree
        self.samples_ = rep.samples
        return self

    @property
    def estimate_(self) -> float:
        if not hasattr(self, "report_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet")
        return self.value_


class SpectralSumEstimator(_SpectralBase):
    """Normalized spectral sum of a sparse Hermitian matrix.

    ``kappa`` or ``bounds`` is required for logdet and trinv; ``p`` for
    power and ``beta`` for partition.
    """

    def __init__(self, target="logdet", eps=0.05, delta=1e-3, method="taylor", seed=0,
                 kappa=None, bounds=None, p=None, beta=None, samples=None, workers=1):
        self.target = target
        self.eps = eps
        self.delta = delta
        self.method = method
        self.seed = seed
        self.kappa = kappa
        self.bounds = bounds
        self.p = p
        self.beta = beta
        self.samples = samples
        self.workers = workers

    def fit(self, X, y=None):
        req = self._request()
        A = check_oracle(X)
        bounds = check_bounds(self.bounds, self.kappa)
        if bounds is None:
            bounds = getattr(A, "bounds", None)
        params = {"bounds": bounds}
        if self.p is not None:
            params["p"] = check_positive("p", self.p, integer=True)
        if self.beta is not None:
            params["beta"] = check_positive("beta", self.beta)
        return self._store(est.estimate(A, req, **params))


class LocalSpectralSumEstimator(_SpectralBase):
    """Same interface for a LocalHamiltonian, via the local-term sampler."""

    def __init__(self, target="logdet", eps=0.05, delta=1e-3, seed=0, bounds=None, beta=None,
                 samples=None, workers=1):
        self.target = target
        self.eps = eps
        self.delta = delta
        self.seed = seed
        self.bounds = bounds
        self.beta = beta
        self.samples = samples
        self.workers = workers

    method = "taylor"

    def fit(self, X, y=None):
        if not isinstance(X, local_ham.LocalHamiltonian):
            raise InputError(f"expected a LocalHamiltonian, got {type(X).__name__}")
        req = self._request()
        if self.target == "logdet":
            rep = local_ham.estimate_local_logdet(X, check_bounds(self.bounds), req)
        elif self.target == "trinv":
            rep = local_ham.estimate_local_trace_inverse(X, check_bounds(self.bounds), req)
        elif self.target == "partition":
            rep = local_ham.estimate_local_partition(X, check_positive("beta", self.beta), req)
        else:
            raise InputError(f"target {self.target!r} is not available for local Hamiltonians")
        return self._store(rep)
