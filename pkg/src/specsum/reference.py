"""Brute-force ground truth used to validate the estimators.

Nothing here is fast. Each routine is a direct, independently written
implementation (cyclic Jacobi, LU with partial pivoting, explicit walk
enumeration) so that agreement with the walker and the samplers means
something.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CheckError, ConditioningGuardError, GuardError, InputError, ScaleGuardError
from .oracle import DENSE_LIMIT, MatrixOracle

JACOBI_TOL = 1e-12
MAX_SWEEPS = 100
WALK_LIMIT = 10_000_000
PIVOT_FLOOR = 1e-300
INVERSE_CHECK = 1e-8
COND_LIMIT = 1e14
HUTCHINSON_LIMIT = 1 << 22


@dataclass(frozen=True)
class Spectrum:
    """Ascending eigenvalues, optional eigenvectors (columns) and the max residual."""

    values: np.ndarray
    vectors: np.ndarray | None
    residual: float
    sweeps: int

    def __len__(self):
        return self.values.size

    def __iter__(self):
        return iter(self.values)


def _as_dense(M, hermitian_check: bool = True) -> np.ndarray:
    if isinstance(M, MatrixOracle):
        M = M.to_dense()
    M = np.array(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InputError(f"expected a square matrix, got shape {M.shape}")
    if M.shape[0] > DENSE_LIMIT:
        raise ScaleGuardError(f"dense reference refuses side {M.shape[0]} (limit {DENSE_LIMIT})")
    if hermitian_check:
        dev = np.max(np.abs(M - M.conj().T)) if M.size else 0.0
        if dev > 1e-12 * max(1.0, np.max(np.abs(M))):
            raise InputError(f"matrix is not Hermitian (max deviation {dev:.3g})")
    return M


def eig_hermitian(M, vectors: bool = True) -> Spectrum:
    """Eigenvalues of a Hermitian matrix by cyclic complex Jacobi rotations.

    Each rotation zeroes one off-diagonal pair: a phase makes the pair real,
    then the classic symmetric Jacobi angle annihilates it.
    """
    A = _as_dense(M)
    A = 0.5 * (A + A.conj().T)
    N = A.shape[0]
    V = np.eye(N, dtype=complex)
    target = JACOBI_TOL * np.linalg.norm(A)
    sweeps = 0

    def off_norm():
        off = A.copy()
        np.fill_diagonal(off, 0.0)
        return float(np.linalg.norm(off))

    while off_norm() > target:
        if sweeps >= MAX_SWEEPS:
            raise CheckError(f"Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps")
        sweeps += 1
        for p in range(N - 1):
            for q in range(p + 1, N):
                h = A[p, q]
                g = abs(h)
                if g == 0.0 or g < 1e-300:
                    continue
                a, b = A[p, p].real, A[q, q].real
                tau = (b - a) / (2.0 * g)
                t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                ph = h / g
                # G = diag(1, conj(ph)) @ [[c, s], [-s, c]] acting on columns p, q
                G = np.array([[c, s], [-s * ph.conjugate(), c * ph.conjugate()]])
                cols = A[:, [p, q]] @ G
                A[:, p], A[:, q] = cols[:, 0], cols[:, 1]
                rows = G.conj().T @ A[[p, q], :]
                A[p, :], A[q, :] = rows[0], rows[1]
                A[p, q] = A[q, p] = 0.0
                if vectors:
                    vc = V[:, [p, q]] @ G
                    V[:, p], V[:, q] = vc[:, 0], vc[:, 1]

    lam = np.diag(A).real.copy()
    order = np.argsort(lam, kind="stable")
    lam = lam[order]
    V = V[:, order]
    M0 = _as_dense(M, hermitian_check=False)
    residual = float(np.max(np.linalg.norm(M0 @ V - V * lam, axis=0))) if N else 0.0
    return Spectrum(lam, V if vectors else None, residual, sweeps)


def _spectral_map(tag: str, params: dict):
    if tag == "log":
        def f(lam):
            if np.any(lam <= 0):
                raise InputError(f"log needs a positive spectrum; min eigenvalue {lam.min():.3g}")
            return np.log(lam)
    elif tag == "inverse":
        def f(lam):
            if np.any(lam == 0):
                raise InputError("inverse of a singular matrix")
            return 1.0 / lam
    elif tag == "power":
        p = int(params["p"])
        def f(lam):
            return lam**p
    elif tag == "exp":
        beta = float(params["beta"])
        def f(lam):
            return np.exp(-beta * lam)
    elif tag == "poly":
        poly = params["poly"]
        def f(lam):
            return np.asarray(poly(lam), dtype=float)
    else:
        raise InputError(f"unknown spectral function {tag!r}")
    return f


def exact_spectral_sum(M, tag: str, spectrum: Spectrum | None = None, **params) -> float:
    """``sum_i f(lambda_i)`` with ``f`` one of log, inverse, power (p), exp (beta), poly (poly).

    ``exp`` means ``exp(-beta * lambda)``. Pass a precomputed ``spectrum`` to
    evaluate several functions of the same matrix.
    """
    if spectrum is None:
        spectrum = eig_hermitian(M, vectors=False)
    f = _spectral_map(tag, params)
    return math.fsum(f(spectrum.values).tolist())


def walk_enumerate_row(A: MatrixOracle, d: int, i: int) -> np.ndarray:
    """Row ``i`` of ``A^d`` by listing every length-``d`` walk that starts at ``i``.

    Neighbours come from row supports but every edge weight is re-read with
    an ``entry`` query, and each walk's product is formed from scratch.
    """
    if d < 0:
        raise InputError(f"walk length must be >= 0, got {d}")
    A.check_index(i)
    if d > 0 and A.sparsity**d > WALK_LIMIT:
        raise GuardError(f"enumerating {A.sparsity}^{d} walks exceeds the limit {WALK_LIMIT}")
    row = np.zeros(A.dim, dtype=complex)
    walk = [i]

    def extend():
        if len(walk) == d + 1:
            prod = 1 + 0j
            for a, b in zip(walk, walk[1:]):
                prod *= A.entry(a, b)
            row[walk[-1]] += prod
            return
        for k, _ in A.row_support(walk[-1]):
            walk.append(k)
            extend()
            walk.pop()

    extend()
    return row


def walk_enumerate_entry(A: MatrixOracle, d: int, i: int, j: int) -> complex:
    """``A^d(i, j)`` as a sum over walks from ``i`` to ``j``."""
    A.check_index(j)
    return complex(walk_enumerate_row(A, d, i)[j])


def walk_enumerate_power(A: MatrixOracle, d: int, i: int) -> float:
    """``Re A^d(i, i)`` as a sum over closed walks."""
    return walk_enumerate_entry(A, d, i, i).real


def _lu(M: np.ndarray):
    """In-place Doolittle LU with partial pivoting; returns (LU, perm, sign)."""
    LU = M.astype(complex).copy()
    N = LU.shape[0]
    perm = np.arange(N)
    sign = 1
    for k in range(N):
        piv = k + int(np.argmax(np.abs(LU[k:, k])))
        if abs(LU[piv, k]) < PIVOT_FLOOR:
            raise CheckError(f"numerically singular pivot at column {k}")
        if piv != k:
            LU[[k, piv]] = LU[[piv, k]]
            perm[[k, piv]] = perm[[piv, k]]
            sign = -sign
        LU[k + 1:, k] /= LU[k, k]
        LU[k + 1:, k + 1:] -= np.outer(LU[k + 1:, k], LU[k, k + 1:])
    return LU, perm, sign


def dense_determinant(M) -> complex:
    """Determinant of a square (not necessarily Hermitian) matrix via LU."""
    A = _as_dense(M, hermitian_check=False)
    if A.shape[0] == 0:
        return 1 + 0j
    LU, _, sign = _lu(A)
    det = complex(sign)
    for v in np.diag(LU):
        det *= v
    return det


def dense_inverse(M) -> np.ndarray:
    """Inverse via LU forward/back substitution, with a residual check."""
    A = _as_dense(M, hermitian_check=False)
    N = A.shape[0]
    LU, perm, _ = _lu(A)
    X = np.eye(N, dtype=complex)[perm]
    for k in range(N):
        X[k + 1:] -= np.outer(LU[k + 1:, k], X[k])
    for k in range(N - 1, -1, -1):
        X[k] /= LU[k, k]
        X[:k] -= np.outer(LU[:k, k], X[k])
    cond = np.max(np.sum(np.abs(A), axis=0)) * np.max(np.sum(np.abs(X), axis=0))
    if cond > COND_LIMIT:
        raise ConditioningGuardError(f"1-norm condition estimate {cond:.3g} exceeds {COND_LIMIT:.0e}")
    err = np.max(np.abs(A @ X - np.eye(N))) if N else 0.0
    if err > INVERSE_CHECK:
        raise CheckError(f"inverse residual {err:.3g} exceeds {INVERSE_CHECK}")
    return X


def _matvec(A: MatrixOracle, v: np.ndarray) -> np.ndarray:
    out = np.zeros(A.dim, dtype=complex)
    for r in range(A.dim):
        out[r] = sum(a * v[c] for c, a in A.row_support(r))
    return out


def hutchinson_baseline(A: MatrixOracle, p, samples: int, seed: int = 0) -> float:
    """Rademacher-vector estimate of ``tr[p(A)]`` (not normalized by ``N``).

    Costs ``samples * deg(p)`` full matrix-vector products, i.e. linear in
    ``N``; kept only as a point of comparison.
    """
    if A.dim > HUTCHINSON_LIMIT:
        raise ScaleGuardError(f"Hutchinson baseline refuses dimension {A.dim}")
    if samples < 1:
        raise InputError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    coeffs = np.asarray(p.coeffs)
    total = []
    for _ in range(samples):
        v = rng.choice([-1.0, 1.0], size=A.dim).astype(complex)
        y = coeffs[-1] * v
        for c in coeffs[-2::-1]:
            y = p.shift * y + p.scale * _matvec(A, y) + c * v
        total.append((v.conj() @ y).real)
    return math.fsum(total) / samples
