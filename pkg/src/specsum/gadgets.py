"""Matrices built from small quantum circuits, for testing hardness constructions.

A :class:`CircuitGadget` is an ``n``-qubit circuit ``Q = U_T ... U_1``. From it
we build

* the block-bidiagonal matrix ``A`` with identity diagonal blocks and
  superdiagonal blocks ``-U_T, ..., -U_1``, whose inverse contains every
  partial product of the circuit (the top-right block is ``Q`` itself);
* the rank-one update ``B = A + |t><s|``, whose determinant is
  ``1 + A^-1(s, t)`` (in general ``det(A + |u><v|) = det(A) (1 + A^-1(v, u))``);
* the clock Hamiltonian ``H_out + J_in H_in + J_prop H_prop`` on system
  (x) clock, whose low-lying spectrum tracks the one-clean-qubit rejection
  probability of ``Q``.

Qubit ``q`` is bit ``q`` of a basis index; qubit 0 is the clean/output
qubit. Block-matrix and system (x) clock indices are ``block * 2**n + i``.
The clock is a single ``(T + 1)``-level register.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import reference
from .errors import InputError, ScaleGuardError
from .oracle import DENSE_LIMIT, AffineOracle, DenseOracle, SparseOracle
from .walker import product_entry

UNITARY_TOL = 1e-10
GATE_NAMES = ("identity", "x", "h", "cx")


def gate_matrix(name: str, n: int, *args: int) -> np.ndarray:
    """Dense ``2**n`` matrix of a named gate: ``identity``, ``x q``, ``h q``, ``cx c t``."""
    N = 1 << n
    arity = {"identity": 0, "x": 1, "h": 1, "cx": 2}
    if name not in arity:
        raise InputError(f"unknown gate {name!r}; expected one of {GATE_NAMES} or DENSE")
    if len(args) != arity[name]:
        raise InputError(f"gate {name} takes {arity[name]} qubit argument(s), got {len(args)}")
    for q in args:
        if not 0 <= q < n:
            raise InputError(f"qubit {q} out of range for {n} qubits")
    if name == "cx" and args[0] == args[1]:
        raise InputError("cx needs distinct control and target")
    U = np.zeros((N, N), dtype=complex)
    if name == "identity":
        return np.eye(N, dtype=complex)
    if name == "x":
        (q,) = args
        for i in range(N):
            U[i ^ (1 << q), i] = 1
    elif name == "h":
        (q,) = args
        r = 1 / math.sqrt(2)
        for i in range(N):
            b = (i >> q) & 1
            U[i & ~(1 << q), i] = r
            U[i | (1 << q), i] = -r if b else r
    else:
        c, t = args
        for i in range(N):
            U[i ^ (1 << t) if (i >> c) & 1 else i, i] = 1
    return U


@dataclass(frozen=True)
class Gate:
    name: str
    args: tuple[int, ...]
    matrix: np.ndarray = field(repr=False)


class CircuitGadget:
    """An ``n``-qubit circuit ``U_1, ..., U_T`` (applied in that order)."""

    def __init__(self, n: int, gates):
        if n < 1:
            raise InputError(f"need at least one qubit, got n={n}")
        N = 1 << n
        if N > DENSE_LIMIT:
            raise ScaleGuardError(f"{n} qubits exceeds the dense gadget limit")
        parsed = []
        for g in gates:
            if isinstance(g, Gate):
                parsed.append(g)
            elif isinstance(g, str):
                parsed.append(Gate(g, (), gate_matrix(g, n)))
            elif isinstance(g, tuple) and g and isinstance(g[0], str):
                parsed.append(Gate(g[0], tuple(g[1:]), gate_matrix(g[0], n, *g[1:])))
            else:
                parsed.append(Gate("DENSE", (), np.array(g, dtype=complex)))
        if not parsed:
            raise InputError("a gadget needs at least one gate (T >= 1)")
        for k, g in enumerate(parsed):
            if g.matrix.shape != (N, N):
                raise InputError(f"gate {k + 1} has shape {g.matrix.shape}, expected {(N, N)}")
            dev = np.max(np.abs(g.matrix @ g.matrix.conj().T - np.eye(N)))
            if dev > UNITARY_TOL:
                raise InputError(f"gate {k + 1} is not unitary (deviation {dev:.3g})")
            g.matrix.setflags(write=False)
        self.n = n
        self.N = N
        self.gates = tuple(parsed)
        self.T = len(parsed)
        self._oracles = tuple(DenseOracle(g.matrix, hermitian=False) for g in parsed)

    def unitary(self, k: int) -> np.ndarray:
        """``U_k`` for ``k = 1 .. T``."""
        return self.gates[k - 1].matrix

    def gate_oracle(self, k: int) -> DenseOracle:
        return self._oracles[k - 1]

    def circuit(self) -> np.ndarray:
        Q = np.eye(self.N, dtype=complex)
        for g in self.gates:
            Q = g.matrix @ Q
        return Q

    def __repr__(self):
        names = ", ".join(" ".join([g.name, *map(str, g.args)]) for g in self.gates)
        return f"CircuitGadget(n={self.n}, T={self.T}, [{names}])"


def random_gadget(n: int, T: int, rng: np.random.Generator) -> CircuitGadget:
    """Random named gates; used by tests and the CLI."""
    gates = []
    for _ in range(T):
        options = ["x", "h"] + (["cx"] if n > 1 else [])
        name = options[rng.integers(len(options))]
        if name == "cx":
            c, t = rng.choice(n, size=2, replace=False)
            gates.append(("cx", int(c), int(t)))
        else:
            gates.append((name, int(rng.integers(n))))
    return CircuitGadget(n, gates)


class BlockMatrixOracle(SparseOracle):
    """The ``(T+1) 2**n`` square block matrix of a gadget (not Hermitian)."""

    def __init__(self, g: CircuitGadget):
        N, T = g.N, g.T
        rows: dict[int, dict[int, complex]] = {}
        for r in range(T + 1):
            for i in range(N):
                rows[r * N + i] = {r * N + i: 1.0}
        for r in range(T):
            U = g.unitary(T - r)
            for i, j in zip(*np.nonzero(U)):
                rows[r * N + int(i)][(r + 1) * N + int(j)] = -U[i, j]
        super().__init__((T + 1) * N, rows, hermitian=False)
        self.gadget = g
        self.T = T
        self.sigma_floor = 1.0 / (2 * (T + 1))

    def rescaled(self) -> AffineOracle:
        """``A / 2``, whose singular values lie in ``[1/(2(T+1)), 1]``."""
        return AffineOracle(self, 0.0, 0.5)


def build_block_matrix(g: CircuitGadget) -> BlockMatrixOracle:
    return BlockMatrixOracle(g)


def closed_form_inverse_entry(g: CircuitGadget, r: int, c: int, i: int, j: int) -> complex:
    """Entry ``(i, j)`` of block ``(r, c)`` of ``A^-1``.

    Zero below the diagonal, the identity on it, and ``U_{T-r} ... U_{T-c+1}``
    above it; the product is evaluated with the walker over gate oracles.
    """
    T, N = g.T, g.N
    if not (0 <= r <= T and 0 <= c <= T):
        raise IndexError(f"block ({r}, {c}) out of range for T={T}")
    if not (0 <= i < N and 0 <= j < N):
        raise IndexError(f"entry ({i}, {j}) out of range for block side {N}")
    if r > c:
        return 0j
    if r == c:
        return 1 + 0j if i == j else 0j
    chain = [g.gate_oracle(k) for k in range(T - r, T - c, -1)]
    return product_entry(chain, i, j, memo=True)


def closed_form_inverse(g: CircuitGadget) -> np.ndarray:
    """Dense ``A^-1`` assembled entry by entry from the closed form."""
    N, T = g.N, g.T
    D = (T + 1) * N
    if D > DENSE_LIMIT:
        raise ScaleGuardError(f"dense inverse of side {D} exceeds {DENSE_LIMIT}")
    out = np.zeros((D, D), dtype=complex)
    for r in range(T + 1):
        for c in range(r, T + 1):
            for i in range(N):
                for j in range(N):
                    out[r * N + i, c * N + j] = closed_form_inverse_entry(g, r, c, i, j)
    return out


def inverse_entry(g: CircuitGadget, s: int, t: int) -> complex:
    N = g.N
    return closed_form_inverse_entry(g, s // N, t // N, s % N, t % N)


@dataclass(frozen=True)
class DetGadget:
    """``B = A + |t><s|`` and its rescaled form ``B / 3``.

    ``predicted_det`` is ``1 + A^-1(s, t)``, the determinant of the unscaled
    ``B`` (``A`` is unit upper triangular). The update sits at ``(t, s)``
    because that is the placement whose determinant exposes ``A^-1(s, t)``.
    """

    oracle: AffineOracle
    unscaled: SparseOracle
    s: int
    t: int
    predicted_det: complex
    T: int
    scale: float = 3.0

    def conditioning_floor(self, c: float) -> float:
        """Lower bound ``c / (18 (T+1)**2)`` on the smallest singular value of ``B / 3``
        when ``|1 + A^-1(s, t)| >= c``."""
        if not c > 0:
            raise InputError(f"c must be positive, got {c}")
        return c / (18 * (self.T + 1) ** 2)


def build_det_gadget(g: CircuitGadget, s: int, t: int) -> DetGadget:
    A = build_block_matrix(g)
    A.check_index(s)
    A.check_index(t)
    rows = {i: dict(A.row_support(i)) for i in range(A.dim)}
    rows[t][s] = rows[t].get(s, 0j) + 1.0
    B = SparseOracle(A.dim, rows, hermitian=False)
    pred = 1 + inverse_entry(g, s, t)
    return DetGadget(AffineOracle(B, 0.0, 1.0 / 3.0), B, s, t, pred, g.T)


# -- clock Hamiltonian -------------------------------------------------------


@dataclass(frozen=True)
class BrandaoParams:
    """Penalty weights, plus the constants used by the hardness proofs for reference."""

    J_in: float
    J_prop: float

    def __post_init__(self):
        if not (self.J_in > 0 and self.J_prop > 0):
            raise InputError("J_in and J_prop must be positive")

    def kappa(self, T: int) -> float:
        """Norm bound ``T + 1 + J_in + 4 J_prop`` of the assembled Hamiltonian."""
        return T + 1 + self.J_in + 4 * self.J_prop


def _clock_proj(T: int, a: int, b: int) -> np.ndarray:
    C = np.zeros((T + 1, T + 1))
    C[a, b] = 1.0
    return C


def _qubit0_proj(N: int, bit: int) -> np.ndarray:
    return np.diag([1.0 if (i & 1) == bit else 0.0 for i in range(N)])


def brandao_terms(g: CircuitGadget) -> dict[str, np.ndarray]:
    """Dense ``H_out``, ``H_in`` and ``H_prop`` on system (x) clock."""
    N, T = g.N, g.T
    D = N * (T + 1)
    if D > DENSE_LIMIT:
        raise ScaleGuardError(f"system (x) clock dimension {D} exceeds {DENSE_LIMIT}")
    I = np.eye(N)
    H_out = (T + 1) * np.kron(_clock_proj(T, T, T), _qubit0_proj(N, 0))
    H_in = np.kron(_clock_proj(T, 0, 0), _qubit0_proj(N, 1))
    H_prop = np.zeros((D, D), dtype=complex)
    for t in range(1, T + 1):
        U = g.unitary(t)
        H_prop += np.kron(_clock_proj(T, t - 1, t - 1), I)
        H_prop += np.kron(_clock_proj(T, t, t), I)
        H_prop -= np.kron(_clock_proj(T, t, t - 1), U)
        H_prop -= np.kron(_clock_proj(T, t - 1, t), U.conj().T)
    return {"out": H_out.astype(complex), "in": H_in.astype(complex), "prop": H_prop}


def build_brandao_hamiltonian(g: CircuitGadget, params: BrandaoParams) -> np.ndarray:
    terms = brandao_terms(g)
    H = terms["out"] + params.J_in * terms["in"] + params.J_prop * terms["prop"]
    dev = np.max(np.abs(H - H.conj().T))
    if dev > 1e-12 * max(1.0, np.max(np.abs(H))):
        raise InputError(f"assembled Hamiltonian is not Hermitian ({dev:.3g})")
    return H


def dqc1_acceptance(g: CircuitGadget) -> float:
    """``tr[(|1><1|_0 (x) I) Q rho Q^dagger]`` for ``rho = |0><0|_0 (x) I / 2**(n-1)``."""
    N = g.N
    Q = g.circuit()
    rho = _qubit0_proj(N, 0) / (N // 2) if N > 1 else _qubit0_proj(N, 0)
    P1 = _qubit0_proj(N, 1)
    return float(np.trace(P1 @ Q @ rho @ Q.conj().T).real)


def dqc1_rejection(g: CircuitGadget) -> float:
    return 1.0 - dqc1_acceptance(g)


@dataclass(frozen=True)
class SplitReport:
    """Low-spectrum summary of one clock Hamiltonian.

    ``low_mean`` averages the lowest ``2**(n-1)`` eigenvalues; ``gap`` is
    ``lambda_above - lambda_below`` (eigenvalues number ``2**(n-1) + 1`` and
    ``2**(n-1)``, counting from one).
    """

    low_mean: float
    mu_reject: float
    lambda_below: float
    lambda_above: float
    eigenvalues: np.ndarray = field(repr=False)
    J_in: float | None = None
    J_prop: float | None = None

    @property
    def gap(self) -> float:
        return self.lambda_above - self.lambda_below

    @property
    def distance(self) -> float:
        return abs(self.low_mean - self.mu_reject)


def spectral_split_report(H: np.ndarray, n: int, g: CircuitGadget, params: BrandaoParams | None = None) -> SplitReport:
    lam = reference.eig_hermitian(H, vectors=False).values
    half = 1 << (n - 1)
    if lam.size <= half:
        raise InputError("Hamiltonian is too small for the requested split")
    return SplitReport(
        float(np.mean(lam[:half])), dqc1_rejection(g), float(lam[half - 1]), float(lam[half]),
        lam, None if params is None else params.J_in, None if params is None else params.J_prop,
    )


def brandao_sweep(g: CircuitGadget, points) -> list[SplitReport]:
    """Split reports across a sequence of ``(J_in, J_prop)`` pairs."""
    out = []
    for J_in, J_prop in points:
        p = BrandaoParams(J_in, J_prop)
        out.append(spectral_split_report(build_brandao_hamiltonian(g, p), g.n, g, p))
    return out


# -- text format ---------------------------------------------------------------


def load_gadget(path) -> CircuitGadget:
    """Parse ``GADGET <n> <T>`` followed by ``T`` gate records."""
    with open(path) as fh:
        lines = [s.split("#", 1)[0].strip() for s in fh]
    lines = [s for s in lines if s]
    if not lines:
        raise InputError(f"{path}: empty gadget file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "GADGET":
        raise InputError(f"{path}: malformed header {lines[0]!r}")
    try:
        n, T = int(head[1]), int(head[2])
        N = 1 << n
        gates = []
        pos = 1
        for _ in range(T):
            tok = lines[pos].split()
            if tok[0] != "GATE" or len(tok) < 2:
                raise InputError(f"{path}: expected GATE, got {lines[pos]!r}")
            if tok[1] == "DENSE":
                vals = []
                for line in lines[pos + 1: pos + 1 + N * N]:
                    re, im = line.split()
                    vals.append(complex(float(re), float(im)))
                if len(vals) != N * N:
                    raise InputError(f"{path}: truncated dense gate {len(gates) + 1}")
                gates.append(np.array(vals).reshape(N, N))
                pos += 1 + N * N
            else:
                gates.append((tok[1], *(int(v) for v in tok[2:])))
                pos += 1
    except (ValueError, IndexError) as exc:
        raise InputError(f"{path}: {exc}") from None
    if pos != len(lines):
        raise InputError(f"{path}: trailing content after {T} gates")
    return CircuitGadget(n, gates)


def save_gadget(g: CircuitGadget, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"GADGET {g.n} {g.T}\n")
        for gate in g.gates:
            if gate.name == "DENSE":
                fh.write("GATE DENSE\n")
                for v in gate.matrix.ravel():
                    fh.write(f"{v.real:.17g} {v.imag:.17g}\n")
            else:
                fh.write(" ".join(["GATE", gate.name, *map(str, gate.args)]) + "\n")
