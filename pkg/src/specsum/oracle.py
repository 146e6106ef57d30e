"""Sparse-access matrix oracles.

A :class:`MatrixOracle` answers three kinds of queries about an ``N x N``
matrix: a single entry, the nonzeros of a row, and the nonzeros of a column.
Nothing else is assumed, so backends may be implicit (computed on the fly)
and the dimension may be astronomically large.

Indices are 0-based. All queries are read-only; backends never mutate state
when answering them, so one oracle can be shared between worker processes.
"""

from __future__ import annotations

import abc
import math
import os
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import InputError, ScaleGuardError

Support = tuple[tuple[int, complex], ...]

HERMITIAN_TOL = 1e-12
DENSE_LIMIT = 4096
MATERIALIZE_LIMIT = 1 << 22


@dataclass(frozen=True)
class SpectralBounds:
    """Caller-declared promise that the spectrum lies in ``[lambda_min, lambda_max]``.

    ``top_gap`` declares the extra promise ``lambda_max <= 1 - 1/kappa`` under
    which an additive normalized log-det estimate converts to a relative one.
    """

    lambda_min: float
    lambda_max: float
    top_gap: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.lambda_min) and math.isfinite(self.lambda_max)):
            raise InputError("spectral bounds must be finite")
        if self.lambda_min > self.lambda_max:
            raise InputError(
                f"lambda_min={self.lambda_min} exceeds lambda_max={self.lambda_max}"
            )

    @classmethod
    def from_kappa(cls, kappa: float, top_gap: bool = False) -> "SpectralBounds":
        if not kappa >= 1:
            raise InputError(f"kappa must be >= 1, got {kappa}")
        return cls(1.0 / kappa, 1.0, top_gap=top_gap)

    @property
    def kappa(self) -> float | None:
        if self.lambda_min <= 0:
            return None
        return self.lambda_max / self.lambda_min

    @property
    def interval(self) -> tuple[float, float]:
        return (self.lambda_min, self.lambda_max)


class MatrixOracle(abc.ABC):
    """Sparse access to a square matrix.

    Subclasses set ``dim`` and ``sparsity`` and implement the three queries.
    ``sparsity`` is an upper bound on the nonzeros of every row and column and
    is never reported below 1.
    """

    dim: int
    sparsity: int
    hermitian: bool = True
    n_qubits: int | None = None
    bounds: SpectralBounds | None = None

    @abc.abstractmethod
    def entry(self, i: int, j: int) -> complex:
        ...

    @abc.abstractmethod
    def row_support(self, i: int) -> Support:
        """Nonzero ``(column, value)`` pairs of row ``i`` in ascending column order."""

    @abc.abstractmethod
    def col_support(self, j: int) -> Support:
        """Nonzero ``(row, value)`` pairs of column ``j`` in ascending row order."""

    def check_index(self, i: int) -> None:
        if not 0 <= i < self.dim:
            raise IndexError(f"index {i} out of range for dimension {self.dim}")

    def to_dense(self) -> np.ndarray:
        if self.dim > DENSE_LIMIT:
            raise ScaleGuardError(
                f"refusing to densify a {self.dim}x{self.dim} oracle (limit {DENSE_LIMIT})"
            )
        M = np.zeros((self.dim, self.dim), dtype=complex)
        for i in range(self.dim):
            for j, v in self.row_support(i):
                M[i, j] = v
        return M

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim}, sparsity={self.sparsity})"


def _qubits_for(dim: int) -> int | None:
    n = dim.bit_length() - 1
    return n if dim == 1 << n else None


class SparseOracle(MatrixOracle):
    """Oracle over explicitly stored nonzeros, kept row- and column-indexed."""

    def __init__(
        self,
        dim: int,
        rows: Mapping[int, Mapping[int, complex]],
        hermitian: bool = True,
        n_qubits: int | None = None,
        bounds: SpectralBounds | None = None,
        check: bool = True,
    ):
        if dim < 1:
            raise InputError(f"dimension must be >= 1, got {dim}")
        self.dim = int(dim)
        self.hermitian = hermitian
        self.n_qubits = n_qubits if n_qubits is not None else _qubits_for(self.dim)
        self.bounds = bounds
        self._rows: dict[int, dict[int, complex]] = {}
        cols: dict[int, dict[int, complex]] = {}
        for i, row in rows.items():
            if not 0 <= i < dim:
                raise InputError(f"row index {i} out of range for dimension {dim}")
            kept = {}
            for j, v in sorted(row.items()):
                if not 0 <= j < dim:
                    raise InputError(f"column index {j} out of range for dimension {dim}")
                v = complex(v)
                if v != 0:
                    kept[j] = v
                    cols.setdefault(j, {})[i] = v
            if kept:
                self._rows[i] = kept
        self._row_support = {i: tuple(r.items()) for i, r in self._rows.items()}
        self._col_support = {j: tuple(sorted(c.items())) for j, c in cols.items()}
        widest = max(
            [len(r) for r in self._row_support.values()]
            + [len(c) for c in self._col_support.values()]
            + [1]
        )
        self.sparsity = widest
        if hermitian and check:
            for i, row in self._rows.items():
                for j, v in row.items():
                    w = self._rows.get(j, {}).get(i, 0j)
                    if abs(v - w.conjugate()) > HERMITIAN_TOL:
                        raise InputError(
                            f"matrix is not Hermitian at ({i}, {j}): {v} vs conj {w.conjugate()}"
                        )

    def entry(self, i, j):
        self.check_index(i)
        self.check_index(j)
        return self._rows.get(i, {}).get(j, 0j)

    def row_support(self, i):
        self.check_index(i)
        return self._row_support.get(i, ())

    def col_support(self, j):
        self.check_index(j)
        return self._col_support.get(j, ())

    @property
    def nnz(self) -> int:
        return sum(len(r) for r in self._rows.values())


class DenseOracle(MatrixOracle):
    """Oracle answering from an in-memory dense matrix."""

    def __init__(self, M, hermitian: bool = True, bounds: SpectralBounds | None = None):
        M = np.array(M, dtype=complex)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise InputError(f"expected a square matrix, got shape {M.shape}")
        if M.shape[0] > DENSE_LIMIT:
            raise ScaleGuardError(f"dense backend limited to side {DENSE_LIMIT}")
        if hermitian:
            asym = np.max(np.abs(M - M.conj().T)) if M.size else 0.0
            if asym > HERMITIAN_TOL:
                raise InputError(f"matrix is not Hermitian (max asymmetry {asym:.3g})")
        M.setflags(write=False)
        self.matrix = M
        self.dim = M.shape[0]
        self.hermitian = hermitian
        self.n_qubits = _qubits_for(self.dim)
        self.bounds = bounds
        nz = M != 0
        self._rows = tuple(
            tuple((int(j), complex(M[i, j])) for j in np.flatnonzero(nz[i]))
            for i in range(self.dim)
        )
        self._cols = tuple(
            tuple((int(i), complex(M[i, j])) for i in np.flatnonzero(nz[:, j]))
            for j in range(self.dim)
        )
        self.sparsity = max(1, int(nz.sum(axis=1).max()), int(nz.sum(axis=0).max()))

    def entry(self, i, j):
        self.check_index(i)
        self.check_index(j)
        return complex(self.matrix[i, j])

    def row_support(self, i):
        self.check_index(i)
        return self._rows[i]

    def col_support(self, j):
        self.check_index(j)
        return self._cols[j]

    def to_dense(self):
        return np.array(self.matrix)


def dense_backed_oracle(M, bounds: SpectralBounds | None = None) -> DenseOracle:
    """Hermitian oracle backed by a dense matrix (Hermitian to 1e-12)."""
    return DenseOracle(M, hermitian=True, bounds=bounds)


class AffineOracle(MatrixOracle):
    """Oracle for ``shift * I + scale * A`` with real ``shift`` and ``scale``."""

    def __init__(self, base: MatrixOracle, shift: float = 0.0, scale: float = 1.0):
        self.base = base
        self.shift = float(shift)
        self.scale = float(scale)
        self.dim = base.dim
        self.hermitian = base.hermitian
        self.n_qubits = base.n_qubits
        self.sparsity = base.sparsity + (1 if self.shift != 0.0 else 0)
        self.bounds = None
        if base.bounds is not None:
            lo, hi = sorted(
                self.shift + self.scale * b for b in base.bounds.interval
            )
            self.bounds = SpectralBounds(lo, hi)

    def entry(self, i, j):
        v = self.scale * self.base.entry(i, j)
        if i == j:
            v += self.shift
        return v

    def _merge(self, k, support):
        out = []
        placed = self.shift == 0.0
        for idx, v in support:
            v = self.scale * v
            if idx == k:
                v += self.shift
                placed = True
            elif not placed and idx > k:
                out.append((k, complex(self.shift)))
                placed = True
            if v != 0:
                out.append((idx, v))
        if not placed:
            out.append((k, complex(self.shift)))
        return tuple(out)

    def row_support(self, i):
        return self._merge(i, self.base.row_support(i))

    def col_support(self, j):
        return self._merge(j, self.base.col_support(j))


class ProductOracle(MatrixOracle):
    """Oracle for ``A A^dagger`` built from sparse access to ``A``.

    ``A`` itself may be non-Hermitian; the product always is. Entries are
    found by intersecting row supports, and the sparsity bound is ``s**2``.
    """

    def __init__(self, base: MatrixOracle):
        self.base = base
        self.dim = base.dim
        self.hermitian = True
        self.n_qubits = base.n_qubits
        self.sparsity = base.sparsity**2
        self.bounds = None

    def entry(self, i, j):
        self.check_index(i)
        self.check_index(j)
        row_j = dict(self.base.row_support(j))
        total = 0j
        for k, v in self.base.row_support(i):
            w = row_j.get(k)
            if w is not None:
                total += v * w.conjugate()
        return total

    def row_support(self, i):
        self.check_index(i)
        acc: dict[int, complex] = {}
        for k, v in self.base.row_support(i):
            for j, w in self.base.col_support(k):
                acc[j] = acc.get(j, 0j) + v * w.conjugate()
        return tuple((j, acc[j]) for j in sorted(acc) if acc[j] != 0)

    def col_support(self, j):
        return tuple((i, v.conjugate()) for i, v in self.row_support(j))


def product_oracle(A: MatrixOracle) -> ProductOracle:
    return ProductOracle(A)


class RingOracle(MatrixOracle):
    """Implicit ``c0 * I + c1 * (cycle adjacency)`` on ``N`` vertices.

    Nothing is stored, so ``N`` may be as large as a 63-bit index allows.
    """

    def __init__(self, dim: int, c0: float, c1: float, bounds: SpectralBounds | None = None):
        if dim < 1:
            raise InputError(f"dimension must be >= 1, got {dim}")
        self.dim = int(dim)
        self.c0 = float(c0)
        self.c1 = float(c1)
        self.n_qubits = _qubits_for(self.dim)
        self.bounds = bounds
        self.hermitian = True
        self.sparsity = len(self.row_support(0))

    def _row(self, i):
        N = self.dim
        acc: dict[int, float] = {i: self.c0}
        for j in ((i + 1) % N, (i - 1) % N):
            acc[j] = acc.get(j, 0.0) + self.c1
        return tuple((j, complex(acc[j])) for j in sorted(acc) if acc[j] != 0)

    def entry(self, i, j):
        self.check_index(i)
        self.check_index(j)
        for k, v in self._row(i):
            if k == j:
                return v
        return 0j

    def row_support(self, i):
        self.check_index(i)
        return self._row(i)

    def col_support(self, j):
        return self.row_support(j)

    def analytic_spectrum(self) -> np.ndarray:
        k = np.arange(self.dim)
        return np.sort(self.c0 + 2 * self.c1 * np.cos(2 * np.pi * k / self.dim))


FAMILIES = ("shifted-laplacian-ring", "banded-random", "diagonal-spectrum")


def synth_family(name: str, n: int, params: Mapping | None = None) -> MatrixOracle:
    """Synthetic test matrices of dimension ``2**n`` with declared spectral bounds.

    ``params`` must provide ``kappa``; ``seed`` (default 0) drives the random
    families and ``bandwidth`` (default 1) the band matrix.
    """
    params = dict(params or {})
    if name not in FAMILIES:
        raise InputError(f"unknown family {name!r}; expected one of {FAMILIES}")
    kappa = float(params.get("kappa", 1.0))
    if not kappa >= 1:
        raise InputError(f"kappa must be >= 1, got {kappa}")
    seed = int(params.get("seed", 0))
    N = 1 << int(n)
    bounds = SpectralBounds.from_kappa(kappa)
    lo = 1.0 / kappa

    if name == "shifted-laplacian-ring":
        c0 = (1.0 + lo) / 2
        c1 = (1.0 - lo) / 4
        return RingOracle(N, c0, c1, bounds=bounds)

    if N > MATERIALIZE_LIMIT:
        raise ScaleGuardError(f"family {name!r} is materialized; 2**{n} exceeds {MATERIALIZE_LIMIT}")
    rng = np.random.default_rng(seed)

    if name == "diagonal-spectrum":
        diag = lo + (1.0 - lo) * rng.random(N)
        if kappa == 1.0:
            diag[:] = 1.0
        rows = {i: {i: float(d)} for i, d in enumerate(diag)}
        return SparseOracle(N, rows, n_qubits=n, bounds=bounds, check=False)

    width = int(params.get("bandwidth", 1))
    if width < 0:
        raise InputError("bandwidth must be >= 0")
    rows: dict[int, dict[int, complex]] = {i: {} for i in range(N)}
    diag = rng.uniform(-1.0, 1.0, N)
    for i in range(N):
        rows[i][i] = complex(diag[i])
    for off in range(1, min(width, N - 1) + 1):
        vals = rng.uniform(-1.0, 1.0, N - off) + 1j * rng.uniform(-1.0, 1.0, N - off)
        for i in range(N - off):
            rows[i][i + off] = complex(vals[i])
            rows[i + off][i] = complex(vals[i]).conjugate()
    # Gershgorin discs certify the raw spectrum; map it affinely into [1/kappa, 1].
    centers = np.array([rows[i][i].real for i in range(N)])
    radii = np.array([sum(abs(v) for j, v in rows[i].items() if j != i) for i in range(N)])
    g_lo = float(np.min(centers - radii))
    g_hi = float(np.max(centers + radii))
    alpha = (1.0 - lo) / (g_hi - g_lo) if g_hi > g_lo else 0.0
    beta = lo - alpha * g_lo if alpha else 1.0
    scaled = {}
    for i, row in rows.items():
        scaled[i] = {j: alpha * v + (beta if i == j else 0.0) for j, v in row.items()}
    return SparseOracle(N, scaled, n_qubits=n, bounds=bounds, check=False)


# -- HERM text format ------------------------------------------------------


def _strip(line: str) -> str:
    return line.split("#", 1)[0].strip()


def load_matrix_file(path: str | os.PathLike) -> SparseOracle:
    """Read a HERM file: header ``HERM <N> <n|->`` then ``i j re im`` lines."""
    with open(path) as fh:
        lines = [(k + 1, _strip(raw)) for k, raw in enumerate(fh)]
    lines = [(k, s) for k, s in lines if s]
    if not lines:
        raise InputError(f"{path}: empty file")
    lineno, header = lines[0]
    tok = header.split()
    if len(tok) != 3 or tok[0] != "HERM":
        raise InputError(f"{path}:{lineno}: malformed header {header!r}")
    try:
        N = int(tok[1])
        n = None if tok[2] == "-" else int(tok[2])
    except ValueError:
        raise InputError(f"{path}:{lineno}: malformed header {header!r}") from None
    if N < 1:
        raise InputError(f"{path}:{lineno}: dimension must be positive")
    if n is not None and N != 1 << n:
        raise InputError(f"{path}:{lineno}: N={N} is not 2**{n}")

    upper: dict[tuple[int, int], complex] = {}
    for lineno, s in lines[1:]:
        tok = s.split()
        if len(tok) != 4:
            raise InputError(f"{path}:{lineno}: expected 'i j re im', got {s!r}")
        try:
            i, j = int(tok[0]), int(tok[1])
            v = complex(float(tok[2]), float(tok[3]))
        except ValueError:
            raise InputError(f"{path}:{lineno}: cannot parse {s!r}") from None
        if not (0 <= i < N and 0 <= j < N):
            raise InputError(f"{path}:{lineno}: index ({i}, {j}) out of range for N={N}")
        if i == j and v.imag != 0:
            raise InputError(f"{path}:{lineno}: diagonal entry ({i}, {i}) has nonzero imaginary part")
        key, val = ((i, j), v) if i <= j else ((j, i), v.conjugate())
        if key in upper and upper[key] != val:
            raise InputError(
                f"{path}:{lineno}: entry {key} given twice with non-conjugate values"
            )
        upper[key] = val

    rows: dict[int, dict[int, complex]] = {}
    for (i, j), v in upper.items():
        if v == 0:
            continue
        rows.setdefault(i, {})[j] = v
        if i != j:
            rows.setdefault(j, {})[i] = v.conjugate()
    return SparseOracle(N, rows, hermitian=True, n_qubits=n, check=False)


def save_matrix_file(A: MatrixOracle | np.ndarray, path: str | os.PathLike) -> None:
    """Write the upper triangle of a Hermitian matrix in HERM format.

    Values are written with ``repr`` so a load round-trips bit for bit.
    """
    if not isinstance(A, MatrixOracle):
        A = dense_backed_oracle(A)
    n = A.n_qubits
    with open(path, "w") as fh:
        fh.write(f"HERM {A.dim} {'-' if n is None else n}\n")
        for i in range(A.dim):
            for j, v in A.row_support(i):
                if j >= i:
                    fh.write(f"{i} {j} {v.real!r} {v.imag!r}\n")


def iter_entries(A: MatrixOracle) -> Iterable[tuple[int, int, complex]]:
    for i in range(A.dim):
        for j, v in A.row_support(i):
            yield i, j, v
