"""Sampling estimators for normalized spectral sums.

Every driver follows the same pattern: pick a polynomial ``p`` that is
uniformly close to the target function on the declared spectral interval,
then estimate ``tr[p(A)] / N`` by averaging ``p(A)(i, i)`` over uniformly
random diagonal indices. Each diagonal value comes from one walk traversal
(:func:`specsum.walker.diagonal_powers`) and the number of samples is fixed
in advance by Hoeffding's inequality.

The sample count only depends on the half-width of the range of a single
sample, so drivers pass that half-width (``ln kappa``, ``kappa``, ``e**beta``)
instead of dividing the coefficients by it and multiplying the mean back.
The two are the same estimator; skipping the round trip keeps constant
polynomials bit-exact.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import polyapprox
from .errors import InputError
from .oracle import AffineOracle, MatrixOracle, SpectralBounds
from .polyapprox import Polynomial
from .walker import DEFAULT_CACHE_LIMIT, check_depth, diagonal_powers

TARGETS = (
    "normalized-trace",
    "poly-trace",
    "logdet",
    "trace-inverse",
    "trace-power",
    "partition",
)
METHODS = ("taylor", "chebyshev")
MAX_BETA = 700.0
BOUNDS_TOL = 1e-12
DRAW_BLOCK = 1 << 22


def sample_count(b: float, eps: float, delta: float) -> int:
    """Least ``T`` with ``2 exp(-2 T eps**2 / (2b)**2) <= delta``."""
    if not b > 0:
        raise InputError(f"range half-width must be positive, got {b}")
    if not eps > 0:
        raise InputError(f"eps must be positive, got {eps}")
    if not 0 < delta < 1:
        raise InputError(f"delta must lie in (0, 1), got {delta}")
    t = (2.0 * b) ** 2 * math.log(2.0 / delta) / (2.0 * eps**2)
    # Round away representation noise so exact cases (e.g. t == 4) are not bumped.
    return max(1, math.ceil(round(t, 9)))


@dataclass(frozen=True)
class EstimateRequest:
    target: str = "normalized-trace"
    eps: float = 0.05
    delta: float = 1e-3
    method: str = "taylor"
    seed: int = 0
    samples: int | None = None
    workers: int = 1
    memo: bool = True

    def __post_init__(self):
        if self.target not in TARGETS:
            raise InputError(f"unknown target {self.target!r}; expected one of {TARGETS}")
        if self.method not in METHODS:
            raise InputError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not 0 < self.eps < 1:
            raise InputError(f"eps must lie in (0, 1), got {self.eps}")
        if not 0 < self.delta < 1:
            raise InputError(f"delta must lie in (0, 1), got {self.delta}")
        if not 0 <= int(self.seed) < 2**64:
            raise InputError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.samples is not None and self.samples < 1:
            raise InputError(f"sample override must be >= 1, got {self.samples}")
        if self.workers < 1:
            raise InputError(f"workers must be >= 1, got {self.workers}")


@dataclass(frozen=True)
class EstimateReport:
    value: float
    eps: float
    delta: float
    samples: int
    degree: int | None
    method: str
    scale: float
    queries: int
    elapsed_ms: float
    seed: int
    target: str = "normalized-trace"
    relative_bound: float | None = None

    def __post_init__(self):
        if self.samples < 1:
            raise InputError("a report needs at least one sample")
        if not math.isfinite(self.value):
            raise InputError(f"non-finite estimate {self.value}")

    def to_dict(self, timing: bool = True) -> dict:
        out = {
            "target": self.target,
            "value": float(self.value),
            "eps": float(self.eps),
            "delta": float(self.delta),
            "samples": int(self.samples),
            "degree": None if self.degree is None else int(self.degree),
            "method": self.method,
            "scale": float(self.scale),
            "queries": int(self.queries),
            "elapsed_ms": float(self.elapsed_ms) if timing else 0.0,
            "seed": int(self.seed),
        }
        if self.relative_bound is not None:
            out["relative_bound"] = float(self.relative_bound)
        return out

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing))


def draw_indices(seed: int, N: int, T: int) -> np.ndarray:
    """``T`` uniform indices in ``[0, N)`` from a counter-based stream keyed by ``seed``.

    numpy's bounded integer generation rejects out-of-range draws, so there
    is no modulo bias; the Philox counter makes the stream a pure function
    of ``(seed, sample index)``.
    """
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    return rng.integers(0, N, size=T, dtype=np.int64)


class PowerCache:
    """Reusable store of diagonal power vectors.

    Keyed by ``(oracle, shift, scale, memo)`` and index; a stored vector of
    degree ``d`` answers every request of degree ``<= d``. Lets repeated
    estimates on one matrix (for example many seeds) share walker work.
    """

    def __init__(self):
        self._store: dict = {}

    def __len__(self):
        return len(self._store)

    def get(self, key, i: int, d: int):
        hit = self._store.get((key, i))
        if hit is not None and hit.size > d:
            return hit[: d + 1]
        return None

    def put(self, key, i: int, values: np.ndarray) -> None:
        old = self._store.get((key, i))
        if old is None or old.size < values.size:
            self._store[(key, i)] = values


def _diagonal_chunk(args):
    B, d, indices, memo, cache_limit = args
    rows, queries = [], 0
    for i in indices:
        pd = diagonal_powers(B, d, int(i), memo=memo, cache_limit=cache_limit)
        rows.append(pd.values)
        queries += pd.query_count
    return rows, queries


def diagonal_table(
    B: MatrixOracle,
    d: int,
    indices: np.ndarray,
    memo: bool = True,
    workers: int = 1,
    cache: PowerCache | None = None,
    cache_key=None,
    cache_limit: int = DEFAULT_CACHE_LIMIT,
) -> tuple[np.ndarray, int]:
    """``B^k(i, i)`` for every ``i`` in ``indices`` (unique, sorted) and ``k <= d``.

    Returns the ``(len(indices), d + 1)`` table and the oracle queries issued.
    Rows are assembled by position, so the result does not depend on how
    the work was split between processes.
    """
    table = np.empty((len(indices), d + 1))
    missing = []
    for pos, i in enumerate(indices):
        hit = cache.get(cache_key, int(i), d) if cache is not None else None
        if hit is None:
            missing.append(pos)
        else:
            table[pos] = hit
    queries = 0
    if missing:
        todo = [int(indices[p]) for p in missing]
        if workers > 1 and len(todo) > 1:
            chunks = np.array_split(np.array(todo), min(workers, len(todo)))
            jobs = [(B, d, c.tolist(), memo, cache_limit) for c in chunks]
            with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
                results = list(pool.map(_diagonal_chunk, jobs))
            rows = [r for part, _ in results for r in part]
            queries = sum(q for _, q in results)
        else:
            rows, queries = _diagonal_chunk((B, d, todo, memo, cache_limit))
        for pos, row in zip(missing, rows):
            table[pos] = row
            if cache is not None:
                cache.put(cache_key, int(indices[pos]), np.array(row))
    return table, queries


def _mean_of_draws(values: np.ndarray, counts: np.ndarray, T: int) -> float:
    """Mean over ``T`` draws given per-unique-index values and multiplicities.

    Summed as an offset from the first value with ``math.fsum``, which is
    exact for constant samples and independent of any work split.
    """
    x0 = float(values[0])
    return x0 + math.fsum((counts * (values - x0)).tolist()) / T


def index_counts(seed: int, N: int, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Sorted distinct indices among ``T`` draws and their multiplicities.

    Draws in blocks of ``DRAW_BLOCK`` from one stream so memory stays bounded
    for very large ``T``.
    """
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    uniq = np.empty(0, dtype=np.int64)
    counts = np.empty(0, dtype=np.int64)
    left = T
    while left > 0:
        block = rng.integers(0, N, size=min(left, DRAW_BLOCK), dtype=np.int64)
        left -= block.size
        u, c = np.unique(block, return_counts=True)
        if uniq.size == 0:
            uniq, counts = u, c
            continue
        merged, inv = np.unique(np.concatenate([uniq, u]), return_inverse=True)
        counts = np.bincount(inv, weights=np.concatenate([counts, c]), minlength=merged.size).astype(np.int64)
        uniq = merged
    return uniq, counts


def _sample_plan(A: MatrixOracle, req: EstimateRequest, b: float, eps: float):
    T = req.samples if req.samples is not None else sample_count(b, eps, req.delta)
    uniq, counts = index_counts(req.seed, A.dim, T)
    return T, uniq, counts


def estimate_normalized_trace(A: MatrixOracle, req: EstimateRequest) -> EstimateReport:
    """Mean of uniformly sampled diagonal entries; assumes ``||A|| <= 1``."""
    t0 = time.perf_counter()
    T, uniq, counts = _sample_plan(A, req, 1.0, req.eps)
    vals = np.array([A.entry(int(i), int(i)).real for i in uniq])
    value = _mean_of_draws(vals, counts, T)
    return EstimateReport(
        value, req.eps, req.delta, T, None, req.method, 1.0, len(uniq),
        1000.0 * (time.perf_counter() - t0), int(req.seed), "normalized-trace",
    )


def poly_walk_oracle(A: MatrixOracle, p: Polynomial) -> MatrixOracle:
    """The oracle whose powers ``p``'s coefficients multiply: ``shift*I + scale*A``."""
    if p.shift == 0.0 and p.scale == 1.0:
        return A
    return AffineOracle(A, p.shift, p.scale)


def poly_diagonal(A: MatrixOracle, p: Polynomial, i: int, memo: bool = True) -> float:
    """A single sample ``p(A)(i, i)``."""
    B = poly_walk_oracle(A, p)
    pd = diagonal_powers(B, p.degree, i, memo=memo)
    return float(pd.values @ p.coeffs)


def estimate_poly_trace(
    A: MatrixOracle,
    p: Polynomial,
    req: EstimateRequest,
    halfwidth: float | None = None,
    cache: PowerCache | None = None,
) -> EstimateReport:
    """Estimate ``tr[p(A)] / N`` to within ``req.eps`` with probability ``1 - req.delta``.

    ``halfwidth`` bounds ``|p|`` on the spectrum and sets the sample count;
    it defaults to ``max(1, p.cert_sup)``.
    """
    t0 = time.perf_counter()
    polyapprox.check_conditioning(p)
    if halfwidth is None:
        halfwidth = max(1.0, p.cert_sup)
    if not math.isfinite(halfwidth):
        raise InputError("polynomial has no finite sup bound; pass halfwidth explicitly")
    B = poly_walk_oracle(A, p)
    d = p.degree
    if not req.memo:
        check_depth(d, B.sparsity)
    if d == 0:
        T = req.samples if req.samples is not None else sample_count(halfwidth, req.eps, req.delta)
        value, queries = float(p.coeffs[0]), 0
    else:
        T, uniq, counts = _sample_plan(A, req, halfwidth, req.eps)
        key = (A, p.shift, p.scale, req.memo)
        table, queries = diagonal_table(
            B, d, uniq, memo=req.memo, workers=req.workers, cache=cache, cache_key=key
        )
        value = _mean_of_draws(table @ p.coeffs, counts, T)
    return EstimateReport(
        value, req.eps, req.delta, T, d, req.method, 1.0, queries,
        1000.0 * (time.perf_counter() - t0), int(req.seed), "poly-trace",
    )


def _kappa_from(bounds: SpectralBounds | None) -> float:
    if bounds is None:
        raise InputError("spectral bounds are required for this target")
    if bounds.lambda_min <= 0:
        raise InputError(f"spectrum must be positive, got lambda_min={bounds.lambda_min}")
    if bounds.lambda_max > 1 + BOUNDS_TOL:
        raise InputError(f"spectrum must lie below 1, got lambda_max={bounds.lambda_max}")
    kappa = 1.0 / bounds.lambda_min
    if kappa < 1:
        raise InputError(f"kappa must be >= 1, got {kappa}")
    return kappa


def _finish(rep: EstimateReport, req, target, scale, t0, **kw) -> EstimateReport:
    return replace(
        rep, eps=req.eps, target=target, scale=scale, method=req.method,
        elapsed_ms=1000.0 * (time.perf_counter() - t0), **kw,
    )


def target_polynomial(target: str, method: str, kappa: float, eps: float) -> Polynomial:
    """The approximant the logdet / trace-inverse drivers use at overall accuracy ``eps``.

    Half of ``eps`` goes to approximation, half to sampling.
    """
    if target == "logdet":
        build = polyapprox.taylor_log if method == "taylor" else polyapprox.improved_log
    elif target == "trace-inverse":
        build = polyapprox.taylor_inverse if method == "taylor" else polyapprox.improved_inverse
    else:
        raise InputError(f"no kappa-parametrized polynomial for target {target!r}")
    if method not in METHODS:
        raise InputError(f"unknown method {method!r}")
    return build(kappa, eps / 2)


def estimate_logdet(
    A: MatrixOracle, bounds: SpectralBounds | None, req: EstimateRequest, cache: PowerCache | None = None
) -> EstimateReport:
    """``ln det(A) / N`` for a spectrum promised inside ``[1/kappa, 1]``."""
    t0 = time.perf_counter()
    bounds = bounds if bounds is not None else A.bounds
    kappa = _kappa_from(bounds)
    p = target_polynomial("logdet", req.method, kappa, req.eps)
    scale = math.log(kappa)
    b = max(scale, p.cert_sup, 1e-300)
    rep = estimate_poly_trace(A, p, replace(req, eps=req.eps / 2), halfwidth=b, cache=cache)
    rel = req.eps * kappa if bounds.top_gap else None
    return _finish(rep, req, "logdet", scale, t0, relative_bound=rel)


def estimate_trace_inverse(
    A: MatrixOracle, bounds: SpectralBounds | None, req: EstimateRequest, cache: PowerCache | None = None
) -> EstimateReport:
    """``tr[A^-1] / N`` for a spectrum promised inside ``[1/kappa, 1]``."""
    t0 = time.perf_counter()
    kappa = _kappa_from(bounds if bounds is not None else A.bounds)
    p = target_polynomial("trace-inverse", req.method, kappa, req.eps)
    b = max(kappa, p.cert_sup)
    rep = estimate_poly_trace(A, p, replace(req, eps=req.eps / 2), halfwidth=b, cache=cache)
    return _finish(rep, req, "trace-inverse", kappa, t0)


def estimate_trace_power(
    A: MatrixOracle, p_exp: int, req: EstimateRequest, cache: PowerCache | None = None
) -> EstimateReport:
    """``tr[A^p] / N`` for ``||A|| <= 1``."""
    t0 = time.perf_counter()
    if int(p_exp) != p_exp or p_exp < 1:
        raise InputError(f"power must be an integer >= 1, got {p_exp}")
    p_exp = int(p_exp)
    if req.method == "taylor":
        coeffs = np.zeros(p_exp + 1)
        coeffs[-1] = 1.0
        p = Polynomial(coeffs, (-1.0, 1.0), 1.0, 0.0, "power", {"p": p_exp})
        sub = req
    else:
        p = polyapprox.cheb_monomial(p_exp, req.eps / 2)
        sub = replace(req, eps=req.eps / 2)
    rep = estimate_poly_trace(A, p, sub, halfwidth=max(1.0, p.cert_sup), cache=cache)
    return _finish(rep, req, "trace-power", 1.0, t0)


def estimate_partition(
    A: MatrixOracle, beta: float, req: EstimateRequest, cache: PowerCache | None = None
) -> EstimateReport:
    """``tr[exp(-beta A)] / N`` for ``||A|| <= 1``."""
    t0 = time.perf_counter()
    if not beta > 0:
        raise InputError(f"beta must be positive, got {beta}")
    if beta > MAX_BETA:
        raise InputError(f"beta={beta} overflows e^beta (limit {MAX_BETA})")
    if req.method != "taylor":
        raise InputError("partition function estimation only supports the taylor method")
    scale = math.exp(beta)
    sub_eps = req.eps / (2 * scale)
    p = polyapprox.taylor_exp(beta, sub_eps)
    rep = estimate_poly_trace(A, p, replace(req, eps=req.eps / 2), halfwidth=scale, cache=cache)
    return _finish(rep, req, "partition", scale, t0)


def estimate(A: MatrixOracle, req: EstimateRequest, cache: PowerCache | None = None, **params) -> EstimateReport:
    """Dispatch on ``req.target``.

    Extra parameters: ``bounds`` (logdet, trace-inverse), ``p`` (trace-power),
    ``beta`` (partition), ``poly`` and optional ``halfwidth`` (poly-trace).
    """
    t = req.target
    if t == "normalized-trace":
        return estimate_normalized_trace(A, req)
    if t == "poly-trace":
        if "poly" not in params:
            raise InputError("poly-trace needs a 'poly' parameter")
        return estimate_poly_trace(A, params["poly"], req, params.get("halfwidth"), cache=cache)
    if t == "logdet":
        return estimate_logdet(A, params.get("bounds"), req, cache=cache)
    if t == "trace-inverse":
        return estimate_trace_inverse(A, params.get("bounds"), req, cache=cache)
    if t == "trace-power":
        if "p" not in params:
            raise InputError("trace-power needs a 'p' parameter")
        return estimate_trace_power(A, params["p"], req, cache=cache)
    if "beta" not in params:
        raise InputError("partition needs a 'beta' parameter")
    return estimate_partition(A, params["beta"], req, cache=cache)
