"""Certified polynomial approximations for the spectral-sum drivers.

Every builder returns an immutable :class:`Polynomial` that knows the
interval it is certified on, a bound on its sup-norm there, and (for
approximants) a bound on its error against the target function. Degrees
start from the closed-form remainder estimates and are bumped until both the
closed-form bound and a dense Chebyshev-grid check come in under ``eps``.

Coefficients are stored in the monomial basis of an affine variable
``u = shift + scale * x``. Truncated Taylor series for ``log`` and ``1/x`` live
in ``u = 1 - x``, where their coefficients are ``-1/k`` and ``1``; expanding
them in powers of ``x`` instead produces binomial-sized coefficients that
cancel catastrophically in floating point. Chebyshev-derived polynomials also
keep their Chebyshev coefficients so they can be evaluated with Clenshaw's
recurrence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable

import numpy as np
from numpy.polynomial import chebyshev as npcheb

from .errors import ConditioningGuardError, DegreeGuardError, InputError

MAX_DEGREE = 5000
CONDITIONING_LIMIT = 1e12
GRID_FACTOR = 10
SEARCH_FACTOR = 4
REL_SLACK = 1e-9


@dataclass(frozen=True)
class DegreeBound:
    """Record of how a degree was chosen.

    ``formula`` names the closed-form estimate, ``initial`` is its value,
    ``degree`` the accepted degree and ``remainder`` the closed-form error
    bound re-evaluated at that degree.
    """

    tag: str
    param: float
    eps: float
    degree: int
    formula: str
    initial: int
    remainder: float

    @property
    def bumped(self) -> bool:
        return self.degree > self.initial


@dataclass(frozen=True, eq=False)
class Polynomial:
    """Real polynomial ``sum_k coeffs[k] * u**k`` with ``u = shift + scale * x``.

    ``cert_interval`` is in terms of ``x``. ``cert_sup`` bounds ``|p|`` there
    and ``cert_error`` (if set) bounds ``|p - target|`` there.
    """

    coeffs: np.ndarray
    cert_interval: tuple[float, float] = (-1.0, 1.0)
    cert_sup: float = math.inf
    cert_error: float | None = None
    target: str | None = None
    params: dict = field(default_factory=dict)
    shift: float = 0.0
    scale: float = 1.0
    cheb: np.ndarray | None = None
    bound: DegreeBound | None = None

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        if c.size == 0:
            c = np.zeros(1)
        if not np.all(np.isfinite(c)):
            raise InputError("polynomial coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        if self.cheb is not None:
            ch = np.array(self.cheb, dtype=float)
            ch.setflags(write=False)
            object.__setattr__(self, "cheb", ch)
        lo, hi = self.cert_interval
        object.__setattr__(self, "cert_interval", (float(lo), float(hi)))

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def variable(self, x):
        return self.shift + self.scale * np.asarray(x, dtype=float)

    def __call__(self, x):
        return eval_poly(self, x)

    def coefficient_mass(self) -> float:
        return float(np.sum(np.abs(self.coeffs)))

    def expand(self) -> "Polynomial":
        """The same polynomial with coefficients in powers of ``x``."""
        if self.shift == 0.0 and self.scale == 1.0:
            return self
        out = np.zeros(1)
        lin = np.array([self.shift, self.scale])
        for c in self.coeffs[::-1]:
            out = np.polynomial.polynomial.polymul(out, lin)
            out[0] += c
        out = np.pad(out, (0, max(0, self.coeffs.size - out.size)))[: self.coeffs.size]
        return replace(self, coeffs=out, shift=0.0, scale=1.0, cheb=None)

    def scaled(self, factor: float) -> "Polynomial":
        """``factor * p`` with certificates scaled alongside."""
        f = float(factor)
        return replace(
            self,
            coeffs=self.coeffs * f,
            cert_sup=self.cert_sup * abs(f),
            cert_error=None if self.cert_error is None else self.cert_error * abs(f),
            cheb=None if self.cheb is None else self.cheb * f,
            target=None,
        )


def check_conditioning(p: Polynomial, limit: float = CONDITIONING_LIMIT) -> float:
    """Refuse polynomials whose monomial coefficients would cancel away all precision."""
    mass = p.coefficient_mass()
    if mass > limit:
        raise ConditioningGuardError(
            f"sum of |coefficients| is {mass:.3g} (> {limit:.0e}); combining it with "
            f"matrix powers would lose all double precision"
        )
    return mass


def from_coeffs(
    coeffs, interval: tuple[float, float] = (-1.0, 1.0), shift: float = 0.0, scale: float = 1.0
) -> Polynomial:
    """Wrap caller-supplied coefficients with a rigorous sup bound."""
    c = np.asarray(coeffs, dtype=float)
    lo, hi = interval
    if lo > hi:
        raise InputError(f"empty interval {interval}")
    m = max(abs(shift + scale * lo), abs(shift + scale * hi))
    sup = float(sum(abs(ck) * m**k for k, ck in enumerate(c)))
    return Polynomial(c, (lo, hi), sup, None, None, {}, shift, scale)


def eval_poly(p: Polynomial, x):
    """Evaluate ``p`` at ``x`` (scalar or array).

    Horner's rule in the monomial basis; polynomials that carry their
    Chebyshev form are evaluated by Clenshaw's recurrence instead.
    """
    u = p.variable(x)
    if p.cheb is not None:
        out = npcheb.chebval(u, p.cheb)
    else:
        out = np.zeros_like(u) + p.coeffs[-1]
        for c in p.coeffs[-2::-1]:
            out = out * u + c
    if np.ndim(out) == 0:
        return float(out)
    return out


# -- target functions --------------------------------------------------------


def target_function(tag: str, **params) -> Callable[[np.ndarray], np.ndarray]:
    if tag == "log":
        return np.log
    if tag == "inverse":
        return lambda x: 1.0 / x
    if tag == "exp":
        beta = float(params["beta"])
        return lambda x: np.exp(-beta * x)
    if tag == "power":
        k = int(params["p"])
        return lambda x: np.asarray(x, dtype=float) ** k
    if tag == "const":
        c = float(params["c"])
        return lambda x: np.full_like(np.asarray(x, dtype=float), c)
    if tag == "poly":
        q = params["poly"]
        return lambda x: eval_poly(q, x)
    raise InputError(f"unknown target tag {tag!r}")


def chebyshev_grid(interval: tuple[float, float], grid_size: int) -> np.ndarray:
    """``grid_size`` Chebyshev points of the first kind on ``interval`` plus both endpoints."""
    if grid_size < 2:
        raise InputError("grid_size must be >= 2")
    lo, hi = interval
    k = np.arange(grid_size)
    nodes = np.cos(np.pi * (k + 0.5) / grid_size)
    pts = 0.5 * (lo + hi) + 0.5 * (hi - lo) * nodes
    return np.concatenate(([lo], pts[::-1], [hi]))


def sup_error(p: Polynomial, f, /, interval=None, grid_size: int | None = None, **params) -> float:
    """Max of ``|p(x) - f(x)|`` over a Chebyshev grid on ``interval``.

    ``f`` is a target tag (``'log'``, ``'inverse'``, ``'exp'``, ``'power'``,
    ``'const'``, ``'poly'``) with its parameters, or any vectorized callable.
    """
    interval = p.cert_interval if interval is None else interval
    grid_size = GRID_FACTOR * (p.degree + 1) if grid_size is None else grid_size
    fn = f if callable(f) else target_function(f, **params)
    x = chebyshev_grid(interval, grid_size)
    return float(np.max(np.abs(eval_poly(p, x) - fn(x))))


def grid_sup(p: Polynomial, interval=None, grid_size: int | None = None) -> float:
    interval = p.cert_interval if interval is None else interval
    grid_size = GRID_FACTOR * (p.degree + 1) if grid_size is None else grid_size
    return float(np.max(np.abs(eval_poly(p, chebyshev_grid(interval, grid_size)))))


# -- closed-form remainder bounds ------------------------------------------


def log_remainder(kappa: float, d: int) -> float:
    """Tail bound for the degree-``d`` Taylor series of ``log`` on ``[1/kappa, 1]``."""
    return kappa * math.exp(-(d + 1) / kappa) / (d + 1)


def inverse_remainder(kappa: float, d: int) -> float:
    return kappa * math.exp(-(d + 1) / kappa)


def exp_remainder(beta: float, d: int) -> float:
    """``(e*beta/(d+1))**(d+1) * e**beta``; decreasing in ``d`` once ``d + 1 >= beta``."""
    if beta == 0:
        return 0.0
    t = d + 1
    return math.exp(t * (1.0 + math.log(beta) - math.log(t)) + beta)


def _check_eps(eps):
    if not 0 < eps < 1:
        raise InputError(f"eps must lie in (0, 1), got {eps}")


def _check_kappa(kappa):
    if not (kappa >= 1 and math.isfinite(kappa)):
        raise InputError(f"kappa must be a finite number >= 1, got {kappa}")


def _search_degree(tag, param, eps, d0, remainder, build, check):
    """Smallest ``d >= d0`` whose closed-form bound and grid check both pass."""
    d0 = max(1, d0)
    if d0 > MAX_DEGREE:
        raise DegreeGuardError(f"{tag} approximation needs degree {d0} (limit {MAX_DEGREE})")
    cap = min(MAX_DEGREE, SEARCH_FACTOR * d0)
    d = d0
    while d <= cap:
        r = remainder(d)
        if r <= eps:
            p = build(d)
            if check(p) <= eps:
                return p, r, d
        d += 1
    raise DegreeGuardError(
        f"{tag} approximation did not certify eps={eps} below degree {cap}"
    )


def _certify_taylor(tag, param, eps, d0, formula, remainder, coeff_fn, interval, sup, shift, scale, **tparams):
    fn = target_function(tag, **tparams)

    def build(d):
        return Polynomial(coeff_fn(d), interval, sup, None, tag, dict(tparams), shift, scale)

    def check(p):
        return sup_error(p, fn, interval)

    p, r, d = _search_degree(tag, param, eps, d0, remainder, build, check)
    bound = DegreeBound(tag, param, eps, d, formula, max(1, d0), r)
    return replace(p, cert_error=r, bound=bound)


def taylor_log(kappa: float, eps: float) -> Polynomial:
    """``-sum_{k<=d} (1-x)**k / k``, certified against ``log`` on ``[1/kappa, 1]``."""
    _check_kappa(kappa)
    _check_eps(eps)
    d0 = math.ceil(kappa * math.log(1.0 / eps))

    def coeffs(d):
        return np.concatenate(([0.0], -1.0 / np.arange(1, d + 1)))

    return _certify_taylor(
        "log", kappa, eps, d0, "ceil(kappa*ln(1/eps))",
        lambda d: log_remainder(kappa, d), coeffs,
        (1.0 / kappa, 1.0), math.log(kappa), 1.0, -1.0,
    )


def taylor_inverse(kappa: float, eps: float) -> Polynomial:
    """``sum_{k<=d} (1-x)**k``, certified against ``1/x`` on ``[1/kappa, 1]``."""
    _check_kappa(kappa)
    _check_eps(eps)
    d0 = math.ceil(kappa * math.log(kappa / eps))
    return _certify_taylor(
        "inverse", kappa, eps, d0, "ceil(kappa*ln(kappa/eps))",
        lambda d: inverse_remainder(kappa, d), lambda d: np.ones(d + 1),
        (1.0 / kappa, 1.0), float(kappa), 1.0, -1.0,
    )


def taylor_exp(beta: float, eps: float) -> Polynomial:
    """``sum_{k<=d} (-beta*x)**k / k!``, certified against ``exp(-beta*x)`` on ``[-1, 1]``."""
    if not (beta > 0 and math.isfinite(beta)):
        raise InputError(f"beta must be positive, got {beta}")
    if beta > 700:
        raise InputError(f"beta={beta} overflows exp(beta); must be <= 700")
    _check_eps(eps)
    d0 = math.ceil(math.e**2 * beta + math.log(1.0 / eps)) - 1

    def coeffs(d):
        c = np.empty(d + 1)
        c[0] = 1.0
        for k in range(1, d + 1):
            c[k] = c[k - 1] * (-beta) / k
        return c

    return _certify_taylor(
        "exp", beta, eps, d0, "ceil(e^2*beta+ln(1/eps))-1",
        lambda d: exp_remainder(beta, d), coeffs,
        (-1.0, 1.0), math.exp(beta), 0.0, 1.0, beta=beta,
    )


# -- Chebyshev compression of monomials --------------------------------------


def _monomial_numerators(d: int) -> list[int]:
    """Integers ``n_k`` with ``x**d = sum n_k T_k(x) / 2**d``."""
    if d == 0:
        return [1]
    n = [0] * (d + 1)
    w = 1  # binom(d, j) for k = d - 2j, walking the row outward in
    for j in range(d // 2 + 1):
        k = d - 2 * j
        n[k] = w if k == 0 else 2 * w
        w = w * (d - j) // (j + 1)
    return n


def monomial_chebyshev(d: int) -> list[Fraction]:
    """Exact Chebyshev coefficients of ``x**d``.

    ``x**d = 2**(1-d) * sum'' binom(d, (d-k)/2) T_k(x)`` over ``k = d, d-2, ...``,
    with the ``k = 0`` term halved.
    """
    return [Fraction(v, 1 << d) for v in _monomial_numerators(d)]


def cheb_monomial_degree(d: int, eps: float) -> int:
    return math.ceil(math.sqrt(2 * d * math.log(2.0 / eps)))


@dataclass(frozen=True)
class _ChebTruncation:
    cheb: np.ndarray
    degree: int
    tail: float
    initial: int


def _truncate_monomial(d: int, eps: float) -> _ChebTruncation:
    """Chebyshev truncation of ``x**d`` with rigorous tail ``sum |a_k|, k > d'``."""
    d0 = cheb_monomial_degree(d, eps) if d > 0 else 0
    nums = _monomial_numerators(d)
    den = 1 << d
    # int / int is correctly rounded, so these match float(Fraction) exactly
    full = np.array([v / den for v in nums])
    if d0 >= d:
        return _ChebTruncation(full, d, 0.0, d0)
    cap = min(d, SEARCH_FACTOR * max(1, d0))
    suffix = [0] * (d + 2)
    for k in range(d, -1, -1):
        suffix[k] = suffix[k + 1] + nums[k]
    dp = d0
    while True:
        if dp > MAX_DEGREE:
            raise DegreeGuardError(f"monomial x^{d} needs degree {dp} (limit {MAX_DEGREE})")
        tail = suffix[dp + 1] / den
        if tail <= eps or dp >= cap:
            break
        dp += 1
    if dp >= d:
        return _ChebTruncation(full, d, 0.0, d0)
    if tail > eps:
        raise DegreeGuardError(f"x^{d} could not be certified to {eps} below degree {cap}")
    # the rounded tail may sit half an ulp below the exact one; nudge it up.
    tail = math.nextafter(tail, math.inf) if tail > 0 else 0.0
    return _ChebTruncation(full[: dp + 1], dp, tail, d0)


def cheb_monomial(d_target: int, eps: float) -> Polynomial:
    """Low-degree approximant of ``x**d_target`` on ``[-1, 1]``.

    Degree ``ceil(sqrt(2*d*ln(2/eps)))``; when that is at least ``d_target``
    the monomial itself is returned.
    """
    d = int(d_target)
    if d < 1:
        raise InputError(f"d_target must be >= 1, got {d_target}")
    _check_eps(eps)
    tr = _truncate_monomial(d, eps)
    if tr.degree == d:
        coeffs = np.zeros(d + 1)
        coeffs[d] = 1.0
        bound = DegreeBound("monomial", d, eps, d, "ceil(sqrt(2d*ln(2/eps)))", max(1, tr.initial), 0.0)
        return Polynomial(coeffs, (-1.0, 1.0), 1.0, 0.0, "power", {"p": d}, bound=bound)
    p = Polynomial(
        _cheb_to_mono(tr.cheb), (-1.0, 1.0), 1.0 + tr.tail, tr.tail,
        "power", {"p": d}, cheb=tr.cheb,
    )
    grid = sup_error(p, "power", p=d)
    if grid > eps:
        # Clenshaw rounding is ~1e-16; a failure here means the tail sum is wrong.
        raise DegreeGuardError(f"x^{d} truncation failed its grid check ({grid:.3g} > {eps})")
    bound = DegreeBound("monomial", d, eps, tr.degree, "ceil(sqrt(2d*ln(2/eps)))", tr.initial, tr.tail)
    return replace(p, bound=bound)


def _cheb_to_mono(cheb: np.ndarray) -> np.ndarray:
    """Monomial coefficients of a Chebyshev series, keeping the nominal length."""
    mono = npcheb.cheb2poly(cheb)
    return np.pad(mono, (0, cheb.size - mono.size))


def _x_interval_of_unit_u(p: Polynomial) -> tuple[float, float]:
    """Preimage in ``x`` of ``u in [-1, 1]``."""
    ends = sorted(((-1.0 - p.shift) / p.scale, (1.0 - p.shift) / p.scale))
    return ends[0], ends[1]


def replace_monomials(p: Polynomial, eps: float) -> Polynomial:
    """Replace every monomial ``u**k`` of ``p`` by its Chebyshev compression.

    Each monomial gets budget ``eps / deg(p)``; with ``|c_k| <= 1`` the total
    added error is at most ``eps`` wherever ``|u| <= 1``.
    """
    _check_eps(eps)
    c = p.coeffs
    if np.any(np.abs(c) > 1.0 + 1e-12):
        raise InputError("replace_monomials needs |c_k| <= 1; rescale the polynomial first")
    d = p.degree
    if d == 0:
        return p
    budget = eps / d
    total = np.zeros(d + 1)
    total[0] = c[0]
    added = 0.0
    degree = 0
    for k in range(1, d + 1):
        if c[k] == 0.0:
            continue
        tr = _truncate_monomial(k, budget)
        total[: tr.cheb.size] += c[k] * tr.cheb
        added += abs(c[k]) * tr.tail
        degree = max(degree, tr.degree)
    degree = max(degree, 1)
    cheb = total[: degree + 1]
    lo, hi = p.cert_interval
    ulo, uhi = _x_interval_of_unit_u(p)
    interval = (max(lo, ulo), min(hi, uhi))
    if interval[0] > interval[1]:
        raise InputError("certified interval does not meet |u| <= 1")
    err = None if p.cert_error is None else p.cert_error + added
    out = Polynomial(
        _cheb_to_mono(cheb), interval, p.cert_sup + added, err,
        p.target, dict(p.params), p.shift, p.scale, cheb=cheb,
    )
    if p.bound is not None:
        b = p.bound
        formula = "ceil(sqrt(2d*ln(2d/eps)))"
        initial = cheb_monomial_degree(d, budget)
        out = replace(out, bound=DegreeBound(b.tag, b.param, eps, degree, formula, min(initial, d), added))
    return out


def _improved(tag: str, taylor, kappa: float, eps: float) -> Polynomial:
    _check_kappa(kappa)
    _check_eps(eps)
    base = taylor(kappa, eps / 2)
    q = replace_monomials(base, eps / 2)
    grid = sup_error(q, tag)
    if grid > eps:
        raise DegreeGuardError(f"improved {tag} approximant failed its grid check ({grid:.3g} > {eps})")
    b = q.bound
    bound = DegreeBound(tag, kappa, eps, q.degree, f"taylor-{tag}+monomial-replacement", b.initial, q.cert_error)
    return replace(q, target=tag, bound=bound)


def improved_log(kappa: float, eps: float) -> Polynomial:
    """Degree ``O(sqrt(kappa) log(kappa/eps))`` approximant of ``log`` on ``[1/kappa, 1]``."""
    return _improved("log", taylor_log, kappa, eps)


def improved_inverse(kappa: float, eps: float) -> Polynomial:
    """Degree ``O(sqrt(kappa) log(kappa/eps))`` approximant of ``1/x`` on ``[1/kappa, 1]``."""
    return _improved("inverse", taylor_inverse, kappa, eps)


# -- text serialization --------------------------------------------------------


def dump_poly(p: Polynomial, path) -> None:
    """``POLY <d> <lo> <hi>`` (plus ``<shift> <scale>`` when ``u != x``), then coefficients."""
    lo, hi = p.cert_interval
    head = f"POLY {p.degree} {lo:.17g} {hi:.17g}"
    if p.shift != 0.0 or p.scale != 1.0:
        head += f" {p.shift:.17g} {p.scale:.17g}"
    with open(path, "w") as fh:
        fh.write(head + "\n")
        for c in p.coeffs:
            fh.write(f"{c:.17g}\n")


def load_poly(path) -> Polynomial:
    with open(path) as fh:
        lines = [s.split("#", 1)[0].strip() for s in fh]
    lines = [s for s in lines if s]
    if not lines:
        raise InputError(f"{path}: empty polynomial file")
    tok = lines[0].split()
    if tok[0] != "POLY" or len(tok) not in (4, 6):
        raise InputError(f"{path}: malformed header {lines[0]!r}")
    try:
        d = int(tok[1])
        lo, hi = float(tok[2]), float(tok[3])
        shift, scale = (float(tok[4]), float(tok[5])) if len(tok) == 6 else (0.0, 1.0)
        coeffs = [float(s) for s in lines[1:]]
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    if len(coeffs) != d + 1:
        raise InputError(f"{path}: expected {d + 1} coefficients, found {len(coeffs)}")
    return from_coeffs(coeffs, (lo, hi), shift, scale)
