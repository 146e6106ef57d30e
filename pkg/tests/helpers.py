"""Instance generators shared by the tests."""

import numpy as np

from specsum.oracle import SparseOracle


def random_sparse_hermitian(rng, N, s, complex_=True):
    """Random Hermitian matrix with at most ``s`` nonzeros per row, as (oracle, dense)."""
    M = np.zeros((N, N), dtype=complex)
    deg = np.zeros(N, dtype=int)
    for i in rng.permutation(N):
        if deg[i] < s:
            M[i, i] = rng.uniform(-1, 1)
            deg[i] += 1
    for _ in range(N * s):
        i, j = rng.integers(N, size=2)
        if i == j or M[i, j] != 0 or deg[i] >= s or deg[j] >= s:
            continue
        v = rng.normal() + (1j * rng.normal() if complex_ else 0)
        M[i, j], M[j, i] = v, np.conj(v)
        deg[i] += 1
        deg[j] += 1
    M /= max(1.0, np.abs(M).sum(axis=1).max())
    rows = {i: {int(j): complex(M[i, j]) for j in np.flatnonzero(M[i])} for i in range(N)}
    return SparseOracle(N, rows), M


def random_psd_local(rng, n=4, m=3, k=2):
    """Random positive definite ``k``-local Hamiltonian with ``m`` terms.

    Each term is ``kappa_j (c_j I + (1 - c_j) P_j)`` with ``P_j`` a random PSD
    block of unit norm, so ``lambda_min(H) >= sum kappa_j c_j > 0``.
    """
    from specsum.local_ham import LocalHamiltonian, LocalTerm

    side = 1 << k
    terms = []
    for _ in range(m):
        G = rng.normal(size=(side, side)) + 1j * rng.normal(size=(side, side))
        P = G @ G.conj().T
        P /= np.linalg.norm(P, 2)
        c = rng.uniform(0.3, 0.7)
        kappa = rng.uniform(0.2, 1.0)
        support = tuple(sorted(rng.choice(n, size=k, replace=False).tolist()))
        terms.append(LocalTerm(support, kappa * (c * np.eye(side) + (1 - c) * P), kappa))
    return LocalHamiltonian(n, terms)
