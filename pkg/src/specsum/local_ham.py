"""Spectral sums of k-local Hamiltonians by importance-sampled term products.

``H = sum_i H_i`` where each term acts on at most ``k`` qubits and carries a
norm budget ``kappa_i >= ||H_i||``. Budgets are normalized to sum to one, so
they form a probability distribution over terms. A diagonal entry of ``H^l``
is then estimated without expanding the ``m**l`` products: draw a term
sequence ``x`` with probability ``q(x) = prod kappa_{x_t}`` and use

    X = (H_{x_1} ... H_{x_l})(i, i) / q(x),

which is unbiased and bounded by one in magnitude.

Qubit ``q`` is bit ``q`` of a basis index (little-endian). Inside a term's
block, the first support qubit is the least significant bit.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import polyapprox, reference
from .errors import CheckError, InputError, ScaleGuardError
from .estimator import EstimateReport, EstimateRequest, sample_count
from .oracle import MatrixOracle, SpectralBounds
from .polyapprox import Polynomial
from .walker import product_with_queries

MAX_LOCALITY = 10
MAX_EPS = 0.999
HERMITIAN_TOL = 1e-12
BUDGET_TOL = 1e-9
BOUND_SLACK = 1e-9
TABLE_LIMIT = 1 << 14
ROW_MEMO_LIMIT = 1 << 16
SPLIT_DIM_LIMIT = 1 << 10


@dataclass(frozen=True, eq=False)
class LocalTerm:
    """A Hermitian block on ``support`` with norm budget ``kappa``.

    ``kappa`` defaults to the block's spectral norm.
    """

    support: tuple[int, ...]
    block: np.ndarray
    kappa: float | None = None

    def __post_init__(self):
        sup = tuple(int(q) for q in self.support)
        if len(sup) == 0:
            raise InputError("a term needs at least one qubit in its support")
        if list(sup) != sorted(set(sup)) or sup[0] < 0:
            raise InputError(f"support must be strictly ascending non-negative qubits, got {sup}")
        if len(sup) > MAX_LOCALITY:
            raise ScaleGuardError(f"locality {len(sup)} exceeds the cap {MAX_LOCALITY}")
        B = np.array(self.block, dtype=complex)
        side = 1 << len(sup)
        if B.shape != (side, side):
            raise InputError(f"block for {len(sup)} qubits must be {side}x{side}, got {B.shape}")
        if not np.all(np.isfinite(B)):
            raise InputError("block entries must be finite")
        dev = np.max(np.abs(B - B.conj().T))
        if dev > HERMITIAN_TOL * max(1.0, np.max(np.abs(B))):
            raise InputError(f"term block is not Hermitian (deviation {dev:.3g})")
        B = 0.5 * (B + B.conj().T)
        B.setflags(write=False)
        lam = reference.eig_hermitian(B, vectors=False).values
        norm = float(max(abs(lam[0]), abs(lam[-1])))
        kappa = norm if self.kappa is None else float(self.kappa)
        if not (kappa > 0 and math.isfinite(kappa)):
            raise InputError(f"term budget must be positive and finite, got {kappa}")
        if norm > kappa * (1 + 1e-12) + 1e-15:
            raise InputError(f"term norm {norm:.6g} exceeds its budget {kappa:.6g}")
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "block", B)
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "_eigs", lam)

    @property
    def locality(self) -> int:
        return len(self.support)

    @property
    def eigenvalues(self) -> np.ndarray:
        return self._eigs

    def is_psd(self, tol: float = 1e-12) -> bool:
        return bool(self._eigs[0] >= -tol * max(1.0, self.kappa))

    def scaled(self, factor: float) -> "LocalTerm":
        return LocalTerm(self.support, self.block * factor, self.kappa * factor)


def _pattern(t: LocalTerm, i: int) -> int:
    a = 0
    for pos, q in enumerate(t.support):
        a |= ((i >> q) & 1) << pos
    return a


def _with_pattern(t: LocalTerm, i: int, a: int) -> int:
    for pos, q in enumerate(t.support):
        i = (i & ~(1 << q)) | (((a >> pos) & 1) << q)
    return i


def term_entry(t: LocalTerm, n: int, i: int, j: int) -> complex:
    """Entry ``(i, j)`` of ``t``'s block tensored with the identity elsewhere."""
    N = 1 << n
    if not (0 <= i < N and 0 <= j < N):
        raise IndexError(f"index out of range for {n} qubits: ({i}, {j})")
    mask = 0
    for q in t.support:
        mask |= 1 << q
    if (i & ~mask) != (j & ~mask):
        return 0j
    return complex(t.block[_pattern(t, i), _pattern(t, j)])


class TermOracle(MatrixOracle):
    """Sparse access to one embedded term; at most ``2**k`` nonzeros per row."""

    def __init__(self, term: LocalTerm, n: int):
        if term.support[-1] >= n:
            raise InputError(f"term support {term.support} exceeds {n} qubits")
        self.term = term
        self.n = n
        self.dim = 1 << n
        self.n_qubits = n
        self.hermitian = True
        self.sparsity = 1 << term.locality
        self.bounds = None
        self._rows: dict[int, tuple] = {}

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_rows"] = {}
        return state

    def entry(self, i, j):
        return term_entry(self.term, self.n, i, j)

    def row_support(self, i):
        hit = self._rows.get(i)
        if hit is not None:
            return hit
        self.check_index(i)
        t = self.term
        row = t.block[_pattern(t, i)]
        out = [(_with_pattern(t, i, b), complex(v)) for b, v in enumerate(row) if v != 0]
        out.sort()
        out = tuple(out)
        if len(self._rows) < ROW_MEMO_LIMIT:
            self._rows[i] = out
        return out

    def col_support(self, j):
        return tuple((i, v.conjugate()) for i, v in self.row_support(j))


def embed_term(t: LocalTerm, n: int) -> np.ndarray:
    N = 1 << n
    if N > 4096:
        raise ScaleGuardError(f"refusing to densify {n} qubits")
    M = np.zeros((N, N), dtype=complex)
    orc = TermOracle(t, n)
    for i in range(N):
        for j, v in orc.row_support(i):
            M[i, j] = v
    return M


class LocalHamiltonian:
    """``H = sum_i H_i`` on ``n`` qubits, stored with budgets summing to one.

    The constructor divides every block and budget by ``scale = sum kappa_i``;
    ``scale`` is kept so drivers can report in the caller's normalization.
    """

    def __init__(self, n: int, terms, normalize: bool = True):
        if n < 1:
            raise InputError(f"need at least one qubit, got n={n}")
        terms = list(terms)
        if not terms:
            raise InputError("a local Hamiltonian needs at least one term")
        for t in terms:
            if t.support[-1] >= n:
                raise InputError(f"term support {t.support} exceeds {n} qubits")
        total = math.fsum(t.kappa for t in terms)
        if normalize:
            self.scale = total
            terms = [t.scaled(1.0 / total) for t in terms]
        else:
            if abs(total - 1.0) > BUDGET_TOL:
                raise InputError(f"term budgets sum to {total}, expected 1")
            self.scale = 1.0
        self.n = n
        self.terms = tuple(terms)
        self.kappas = np.array([t.kappa for t in self.terms])
        self.kappas.setflags(write=False)
        self.budget_sum = math.fsum(self.kappas.tolist())
        self.k = max(t.locality for t in self.terms)
        self.oracles = tuple(TermOracle(t, n) for t in self.terms)
        self._complement = None

    @property
    def m(self) -> int:
        return len(self.terms)

    @property
    def dim(self) -> int:
        return 1 << self.n

    def to_dense(self, original: bool = False) -> np.ndarray:
        """Dense normalized matrix (times ``scale`` if ``original``)."""
        M = sum(embed_term(t, self.n) for t in self.terms)
        return M * self.scale if original else M

    def complement(self) -> "LocalHamiltonian":
        """Memoized :func:`shift_complement`."""
        if self._complement is None:
            self._complement = shift_complement(self)
        return self._complement

    def __repr__(self):
        return f"LocalHamiltonian(n={self.n}, m={self.m}, k={self.k}, scale={self.scale:.6g})"


def shift_complement(H: LocalHamiltonian) -> LocalHamiltonian:
    """``I - H`` as the local Hamiltonian with terms ``kappa_i I - H_i``."""
    out = []
    for idx, t in enumerate(H.terms):
        if not t.is_psd():
            raise InputError(
                f"term {idx} is not positive semidefinite (min eigenvalue {t.eigenvalues[0]:.3g})"
            )
        side = t.block.shape[0]
        out.append(LocalTerm(t.support, t.kappa * np.eye(side) - t.block, t.kappa))
    return LocalHamiltonian(H.n, out, normalize=False)


def sequence_probability(H: LocalHamiltonian, x) -> float:
    return math.prod(float(H.kappas[t]) for t in x)


def sample_term_sequence(H: LocalHamiltonian, l: int, rng: np.random.Generator):
    """Draw ``l`` i.i.d. term indices with ``Pr[i] = kappa_i``; returns ``(x, q(x))``."""
    if l < 1:
        raise InputError(f"sequence length must be >= 1, got {l}")
    x = tuple(int(v) for v in rng.choice(H.m, size=l, p=H.kappas))
    return x, sequence_probability(H, x)


def local_product_with_queries(H: LocalHamiltonian, x, i: int) -> tuple[complex, int]:
    if len(x) == 0:
        return 1 + 0j, 0
    chain = [H.oracles[t] for t in x]
    val, queries = product_with_queries(chain, i, i, memo=True)
    q = sequence_probability(H, x)
    if abs(val) > q * (1 + BOUND_SLACK) + 1e-15:
        raise CheckError(f"|product diagonal| = {abs(val):.6g} exceeds q(x) = {q:.6g}")
    return val, queries


def local_product_diagonal(H: LocalHamiltonian, x, i: int) -> complex:
    """``(H_{x_1} ... H_{x_l})(i, i)`` by walking the embedded term oracles."""
    return local_product_with_queries(H, x, i)[0]


def exact_sequence_expectation(H: LocalHamiltonian, l: int, i: int) -> complex:
    """``sum_x q(x) * X(x)`` over all ``m**l`` sequences; equals ``H^l(i, i)``."""
    total = 0j
    for code in range(H.m**l):
        x = _decode(code, H.m, l)
        total += local_product_diagonal(H, x, i)
    return total


def _decode(code: int, m: int, l: int) -> tuple[int, ...]:
    x = []
    for _ in range(l):
        code, r = divmod(code, m)
        x.append(r)
    return tuple(reversed(x))


def _flat_probabilities(kappas: np.ndarray, l: int) -> np.ndarray:
    q = np.ones(1)
    for _ in range(l):
        q = np.outer(q, kappas).ravel()
    return q / q.sum()


def sequence_table(H: LocalHamiltonian, l: int, i: int) -> tuple[np.ndarray, int]:
    """``Re X`` for every length-``l`` sequence at index ``i``, indexed by code.

    Sequences sharing a prefix share the row vector ``e_i^T H_{x_1} ... H_{x_k}``,
    so the walk is expanded once per trie node rather than once per sequence.
    Codes are base-``m`` with the first term most significant.
    """
    m = H.m
    raw = np.zeros(m**l, dtype=complex)
    queries = 0
    stack = [(0, 0, {i: 1 + 0j})]
    while stack:
        depth, code, vec = stack.pop()
        for t in range(m):
            orc = H.oracles[t]
            nxt: dict[int, complex] = {}
            for node, val in vec.items():
                queries += 1
                for col, a in orc.row_support(node):
                    nxt[col] = nxt.get(col, 0j) + val * a
            child = code * m + t
            if depth + 1 == l:
                raw[child] = nxt.get(i, 0j)
            elif nxt:
                stack.append((depth + 1, child, nxt))
    q = np.ones(1)
    for _ in range(l):
        q = np.outer(q, H.kappas).ravel()
    X = raw.real / q
    worst = float(np.max(np.abs(X)))
    if worst > 1 + BOUND_SLACK:
        raise CheckError(f"importance weight {worst:.6g} exceeds 1 at index {i}")
    return X, queries


class SequenceCache:
    """Memo of ``Re X`` values, shareable across seeds and drivers.

    Holds whole per-index tables (see :func:`sequence_table`) and single
    ``(index, sequence)`` values for powers with too many sequences to tabulate.
    """

    def __init__(self):
        self.tables: dict = {}
        self.singles: dict = {}
        self.queries = 0

    def table(self, H: LocalHamiltonian, l: int, i: int) -> np.ndarray:
        key = (H, l, i)
        hit = self.tables.get(key)
        if hit is None:
            hit, q = sequence_table(H, l, i)
            self.queries += q
            self.tables[key] = hit
        return hit

    def unit_terms(self, H: LocalHamiltonian) -> list[np.ndarray]:
        """Dense embeddings of ``H_t / kappa_t``."""
        key = ("unit", H)
        hit = self.tables.get(key)
        if hit is None:
            hit = [embed_term(t, H.n) / k for t, k in zip(H.terms, H.kappas)]
            self.tables[key] = hit
        return hit

    def value(self, H: LocalHamiltonian, i: int, x: tuple[int, ...]) -> float:
        key = (H, i, x)
        hit = self.singles.get(key)
        if hit is None:
            val, q = local_product_with_queries(H, x, i)
            self.queries += q
            hit = val.real / sequence_probability(H, x)
            if abs(hit) > 1 + BOUND_SLACK:
                raise CheckError(f"importance weight {hit:.6g} exceeds 1")
            self.singles[key] = hit
        return hit


def estimate_local_poly_trace(
    H: LocalHamiltonian,
    p: Polynomial,
    req: EstimateRequest,
    cache: SequenceCache | None = None,
) -> EstimateReport:
    """Estimate ``tr[p(H)] / 2**n`` for coefficients bounded by one.

    ``H`` is taken in its normalized form. Polynomials in powers of ``1 - x``
    are evaluated on the complement ``I - H``.

    Each sample draws an index and, for every power ``l``, an independent
    term sequence. Only the number of times each ``(index, sequence)`` pair
    occurs matters to the mean, so for moderate ``m**l`` the sequences are
    drawn as multinomial counts per index; the resulting estimate has exactly
    the distribution of the sample-by-sample procedure.
    """
    t0 = time.perf_counter()
    if req.method != "taylor":
        raise InputError("the local estimator only supports the taylor method")
    if p.shift == 1.0 and p.scale == -1.0:
        H = H.complement()
    elif not (p.shift == 0.0 and p.scale == 1.0):
        raise InputError("local polynomials must be in powers of x or of (1 - x)")
    c = p.coeffs
    if np.any(np.abs(c) > 1 + 1e-12):
        raise InputError("local estimation needs |c_l| <= 1; rescale the polynomial")
    d = p.degree
    cache = cache if cache is not None else SequenceCache()
    q0 = cache.queries
    # |X_i| <= sum |c_l| since every |X^(l)| <= 1; never looser than d + 1.
    T = req.samples
    if T is None:
        T = sample_count(max(1e-300, p.coefficient_mass()), req.eps, req.delta)
    if d == 0:
        value = float(c[0])
    else:
        rng = np.random.Generator(np.random.Philox(key=int(req.seed)))
        idx = rng.integers(0, H.dim, size=T, dtype=np.int64)
        uniq, counts = np.unique(idx, return_counts=True)
        parts = []
        for l in range(1, d + 1):
            if c[l] == 0.0:
                continue
            parts.append(c[l] * _power_sum(H, l, uniq, counts, rng, cache))
        value = float(c[0]) + math.fsum(parts) / T
    return EstimateReport(
        value, req.eps, req.delta, T, d, req.method, 1.0, cache.queries - q0,
        1000.0 * (time.perf_counter() - t0), int(req.seed), "poly-trace",
    )


def _power_sum(H, l, uniq, counts, rng, cache) -> float:
    """Sum over all samples of ``Re X^(l)``, drawing sequences from ``rng``.

    When ``m**l`` is small the sequence counts of every index come from one
    multinomial over all sequences and are weighted against the tabulated
    values. Otherwise the counts are split level by level down the sequence
    tree (a multinomial over terms at every live prefix), which has the same
    distribution; prefixes carry their row vectors so no walk is repeated.
    """
    m = H.m
    if m**l <= TABLE_LIMIT:
        qflat = _flat_probabilities(H.kappas, l)
        hits = rng.multinomial(counts, qflat)
        rows = np.stack([cache.table(H, l, i) for i in uniq.tolist()])
        return math.fsum((hits * rows).sum(axis=1).tolist())
    if H.dim <= SPLIT_DIM_LIMIT:
        return _split_sum(H, l, uniq, counts, rng, cache)
    total = []
    for i, n_i in zip(uniq.tolist(), counts.tolist()):
        seqs = rng.choice(m, size=(n_i, l), p=H.kappas)
        rows, mult = np.unique(seqs, axis=0, return_counts=True)
        for row, k in zip(rows.tolist(), mult.tolist()):
            total.append(k * cache.value(H, i, tuple(row)))
    return math.fsum(total)


def _split_sum(H, l, uniq, counts, rng, cache) -> float:
    mats = cache.unit_terms(H)
    V = np.zeros((uniq.size, H.dim), dtype=complex)
    V[np.arange(uniq.size), uniq] = 1.0
    C = counts.astype(np.int64)
    home = uniq.astype(np.int64)
    for _ in range(l):
        split = rng.multinomial(C, H.kappas)
        nv, nc, nh = [], [], []
        for t in range(H.m):
            keep = split[:, t] > 0
            if not keep.any():
                continue
            nv.append(V[keep] @ mats[t])
            nc.append(split[keep, t])
            nh.append(home[keep])
            cache.queries += int(keep.sum())
        V, C, home = np.concatenate(nv), np.concatenate(nc), np.concatenate(nh)
    X = V[np.arange(home.size), home]
    worst = float(np.max(np.abs(X)))
    if worst > 1 + BOUND_SLACK:
        raise CheckError(f"importance weight {worst:.6g} exceeds 1")
    return math.fsum((C * X.real).tolist())


def _local_kappa(H: LocalHamiltonian, bounds: SpectralBounds | None) -> float:
    if bounds is None:
        raise InputError("spectral bounds are required for this target")
    lo = bounds.lambda_min / H.scale
    if lo <= 0:
        raise InputError(f"spectrum must be positive, got lambda_min={bounds.lambda_min}")
    if lo > 1 + 1e-12:
        raise InputError("declared lambda_min exceeds the budget sum")
    return max(1.0, 1.0 / lo)


def _local_finish(rep, req, target, value, scale, t0):
    return replace(
        rep, value=value, eps=req.eps, target=target, scale=scale,
        elapsed_ms=1000.0 * (time.perf_counter() - t0),
    )


def estimate_local_logdet(
    H: LocalHamiltonian, bounds: SpectralBounds, req: EstimateRequest, cache: SequenceCache | None = None
) -> EstimateReport:
    """``ln det(H) / 2**n`` in the caller's normalization."""
    t0 = time.perf_counter()
    kappa = _local_kappa(H, bounds)
    p = polyapprox.taylor_log(kappa, req.eps / 2)
    rep = estimate_local_poly_trace(H, p, replace(req, eps=req.eps / 2), cache=cache)
    return _local_finish(rep, req, "logdet", rep.value + math.log(H.scale), 1.0, t0)


def estimate_local_trace_inverse(
    H: LocalHamiltonian, bounds: SpectralBounds, req: EstimateRequest, cache: SequenceCache | None = None
) -> EstimateReport:
    """``tr[H^-1] / 2**n`` in the caller's normalization."""
    t0 = time.perf_counter()
    kappa = _local_kappa(H, bounds)
    # An error of eps in caller units is eps * scale for the normalized inverse.
    half = min(req.eps * H.scale, MAX_EPS) / 2
    p = polyapprox.taylor_inverse(kappa, half)
    rep = estimate_local_poly_trace(H, p, replace(req, eps=half), cache=cache)
    return _local_finish(rep, req, "trace-inverse", rep.value / H.scale, 1.0, t0)


def estimate_local_partition(
    H: LocalHamiltonian, beta: float, req: EstimateRequest, cache: SequenceCache | None = None
) -> EstimateReport:
    """``tr[exp(-beta H)] / 2**n`` in the caller's normalization."""
    t0 = time.perf_counter()
    if not beta > 0:
        raise InputError(f"beta must be positive, got {beta}")
    b = beta * H.scale
    if b > 700:
        raise InputError(f"beta * scale = {b} overflows e^beta")
    scale = math.exp(b)
    sub = req.eps / (2 * scale)
    p = polyapprox.taylor_exp(b, sub)
    rep = estimate_local_poly_trace(H, Polynomial(p.coeffs / scale), replace(req, eps=sub), cache=cache)
    return _local_finish(rep, req, "partition", rep.value * scale, scale, t0)


def _kappa_token(tok: str):
    return None if tok == "-" else float(tok)


def load_local_hamiltonian(path) -> LocalHamiltonian:
    """Parse ``LOCALHAM <n> <m>`` followed by ``m`` ``TERM`` records."""
    with open(path) as fh:
        lines = [s.split("#", 1)[0].strip() for s in fh]
    lines = [s for s in lines if s]
    if not lines:
        raise InputError(f"{path}: empty Hamiltonian file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "LOCALHAM":
        raise InputError(f"{path}: malformed header {lines[0]!r}")
    try:
        n, m = int(head[1]), int(head[2])
        pos = 1
        terms = []
        for _ in range(m):
            tok = lines[pos].split()
            if tok[0] != "TERM":
                raise InputError(f"{path}: expected TERM, got {lines[pos]!r}")
            k = int(tok[1])
            if len(tok) != k + 3:
                raise InputError(f"{path}: TERM line needs {k} qubits and a budget")
            support = tuple(int(v) for v in tok[2:2 + k])
            kappa = _kappa_token(tok[2 + k])
            side = 1 << k
            vals = []
            for line in lines[pos + 1: pos + 1 + side * side]:
                re, im = line.split()
                vals.append(complex(float(re), float(im)))
            if len(vals) != side * side:
                raise InputError(f"{path}: truncated block for term {len(terms)}")
            terms.append(LocalTerm(support, np.array(vals).reshape(side, side), kappa))
            pos += 1 + side * side
    except (ValueError, IndexError) as exc:
        raise InputError(f"{path}: {exc}") from None
    if pos != len(lines):
        raise InputError(f"{path}: trailing content after {m} terms")
    return LocalHamiltonian(n, terms)


def save_local_hamiltonian(H: LocalHamiltonian, path) -> None:
    """Write ``H`` in the caller's normalization."""
    with open(path, "w") as fh:
        fh.write(f"LOCALHAM {H.n} {H.m}\n")
        for t in H.terms:
            qs = " ".join(str(q) for q in t.support)
            fh.write(f"TERM {t.locality} {qs} {t.kappa * H.scale:.17g}\n")
            for v in (t.block * H.scale).ravel():
                fh.write(f"{v.real:.17g} {v.imag:.17g}\n")
