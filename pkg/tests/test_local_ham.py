import math

import numpy as np
import pytest

from specsum import local_ham as lh
from specsum import polyapprox as pa
from specsum import reference
from specsum.errors import InputError, ScaleGuardError
from specsum.estimator import EstimateRequest
from specsum.local_ham import LocalHamiltonian, LocalTerm
from specsum.oracle import SpectralBounds

from helpers import random_psd_local

PAULI_X = np.array([[0, 1], [1, 0]])
P1 = np.diag([0.0, 1.0])


def kron_embed(block, support, n):
    """Dense embedding built from Kronecker products over permuted tensor axes."""
    k = len(support)
    rest = [q for q in range(n) if q not in support]
    full = np.kron(np.eye(1 << len(rest)), block)
    # axis order of ``full`` (most significant first): rest reversed, support reversed
    order = list(reversed(rest)) + list(reversed(support))
    T = full.reshape([2] * (2 * n))
    # move axis for qubit q to position n - 1 - q
    perm = [order.index(q) for q in reversed(range(n))]
    T = T.transpose(perm + [n + p for p in perm])
    return T.reshape(1 << n, 1 << n)


def random_block(rng, k):
    side = 1 << k
    G = rng.normal(size=(side, side)) + 1j * rng.normal(size=(side, side))
    return G + G.conj().T


def random_local(rng, n=4, m=3, k=2):
    terms = []
    for _ in range(m):
        support = tuple(sorted(rng.choice(n, size=k, replace=False).tolist()))
        terms.append(LocalTerm(support, random_block(rng, k)))
    return LocalHamiltonian(n, terms)


def req(target="poly-trace", eps=0.1, delta=0.01, seed=0, **kw):
    return EstimateRequest(target, eps, delta, "taylor", seed, **kw)


# -- terms and embedding --------------------------------------------------------------


def test_projector_embedding():
    t = LocalTerm((0,), P1)
    for i in range(4):
        for j in range(4):
            assert lh.term_entry(t, 2, i, j) == (1 if i == j and i & 1 else 0)


def test_bit_flip_embedding():
    t = LocalTerm((1,), PAULI_X)
    assert lh.term_entry(t, 2, 0, 2) == 1
    assert lh.term_entry(t, 2, 1, 3) == 1
    assert lh.term_entry(t, 2, 0, 1) == 0
    with pytest.raises(IndexError):
        lh.term_entry(t, 2, 0, 4)


def test_embedding_matches_kronecker():
    rng = np.random.default_rng(0)
    B = random_block(rng, 2)
    t = LocalTerm((0, 2), B)
    assert np.allclose(lh.embed_term(t, 3), kron_embed(B, (0, 2), 3), atol=1e-12)
    assert np.allclose(lh.embed_term(LocalTerm((1,), PAULI_X), 2), np.kron(PAULI_X, np.eye(2)))


def test_embedding_rows_are_sparse():
    rng = np.random.default_rng(1)
    t = LocalTerm((1, 3), random_block(rng, 2))
    orc = lh.TermOracle(t, 5)
    assert orc.sparsity <= 4
    assert all(len(orc.row_support(i)) <= 4 for i in range(32))


def test_hamiltonian_is_sum_of_embeddings():
    rng = np.random.default_rng(2)
    H = random_local(rng)
    M = sum(kron_embed(t.block, t.support, 4) for t in H.terms)
    assert np.allclose(H.to_dense(), M, atol=1e-12)
    assert H.budget_sum == pytest.approx(1.0)
    assert np.allclose(H.to_dense(original=True), M * H.scale)


def test_term_validation():
    with pytest.raises(InputError):
        LocalTerm((), np.eye(1))
    with pytest.raises(InputError):
        LocalTerm((1, 0), np.eye(4))
    with pytest.raises(InputError):
        LocalTerm((0,), np.eye(4))
    with pytest.raises(InputError):
        LocalTerm((0,), np.array([[0, 1], [0, 0]]))
    with pytest.raises(InputError):
        LocalTerm((0,), 2 * np.eye(2), kappa=1.0)
    with pytest.raises(ScaleGuardError):
        LocalTerm(tuple(range(11)), np.eye(1))
    with pytest.raises(InputError):
        LocalHamiltonian(1, [LocalTerm((1,), P1)])
    with pytest.raises(InputError):
        LocalHamiltonian(2, [LocalTerm((0,), P1, kappa=0.5)], normalize=False)


def test_default_budget_is_norm():
    assert LocalTerm((0,), 3 * PAULI_X).kappa == pytest.approx(3.0)


# -- shift complement -------------------------------------------------------------------


def test_complement_of_identity_is_zero():
    H = LocalHamiltonian(1, [LocalTerm((0,), np.eye(2))])
    assert np.allclose(lh.shift_complement(H).to_dense(), 0)


def test_complement_of_projector():
    H = LocalHamiltonian(1, [LocalTerm((0,), P1)])
    assert np.allclose(lh.shift_complement(H).terms[0].block, np.diag([1.0, 0.0]))


def test_complement_sums_to_identity_and_is_involution():
    H = random_psd_local(np.random.default_rng(3), n=3)
    C = lh.shift_complement(H)
    assert np.allclose(C.to_dense() + H.to_dense(), np.eye(8), atol=1e-12)
    assert np.allclose(lh.shift_complement(C).to_dense(), H.to_dense(), atol=1e-12)
    assert H.complement() is H.complement()


def test_complement_needs_psd_terms():
    with pytest.raises(InputError):
        lh.shift_complement(LocalHamiltonian(1, [LocalTerm((0,), PAULI_X)]))


# -- sequences ----------------------------------------------------------------------------


def test_single_term_sequence():
    H = LocalHamiltonian(1, [LocalTerm((0,), P1)])
    x, q = lh.sample_term_sequence(H, 5, np.random.default_rng(0))
    assert x == (0,) * 5 and q == 1.0


def test_uniform_pair_sequences():
    H = LocalHamiltonian(1, [LocalTerm((0,), P1), LocalTerm((0,), np.diag([1.0, 0.0]))])
    rng = np.random.default_rng(1)
    draws = 100_000
    counts = {}
    for _ in range(draws):
        x, q = lh.sample_term_sequence(H, 3, rng)
        assert q == 0.125
        counts[x] = counts.get(x, 0) + 1
    assert len(counts) == 8
    sigma = math.sqrt(draws * 0.125 * 0.875)
    assert all(abs(c - draws / 8) <= 3 * sigma for c in counts.values())


def test_weighted_sequences_chi_square():
    terms = [LocalTerm((0,), k * P1, kappa=k) for k in (0.5, 0.3, 0.2)]
    H = LocalHamiltonian(1, terms)
    assert lh.sequence_probability(H, (0, 2)) == pytest.approx(0.1)
    rng = np.random.default_rng(2)
    draws = 100_000
    obs = np.zeros((3, 3))
    for _ in range(draws):
        x, _ = lh.sample_term_sequence(H, 2, rng)
        obs[x] += 1
    exp = draws * np.outer(H.kappas, H.kappas)
    chi2 = float(np.sum((obs - exp) ** 2 / exp))
    assert chi2 < 26.12  # 0.999 quantile of chi-square with 8 degrees of freedom


def test_sequence_length_validated():
    H = LocalHamiltonian(1, [LocalTerm((0,), P1)])
    with pytest.raises(InputError):
        lh.sample_term_sequence(H, 0, np.random.default_rng(0))


# -- product diagonals -------------------------------------------------------------------------


def test_diagonal_projector_products():
    H = LocalHamiltonian(2, [LocalTerm((0,), P1), LocalTerm((1,), P1)])
    for i in range(4):
        expect = 0.25 * (i & 1) * ((i >> 1) & 1)
        assert lh.local_product_diagonal(H, (0, 1), i) == pytest.approx(expect)


def test_length_one_is_term_entry():
    H = random_local(np.random.default_rng(4))
    for t in range(H.m):
        for i in range(H.dim):
            assert lh.local_product_diagonal(H, (t,), i) == pytest.approx(lh.term_entry(H.terms[t], H.n, i, i))


def test_products_match_dense():
    H = random_local(np.random.default_rng(5))
    mats = [lh.embed_term(t, H.n) for t in H.terms]
    rng = np.random.default_rng(6)
    for _ in range(5):
        x = tuple(rng.integers(H.m, size=3).tolist())
        P = mats[x[0]] @ mats[x[1]] @ mats[x[2]]
        for i in range(H.dim):
            assert abs(lh.local_product_diagonal(H, x, i) - P[i, i]) <= 1e-10
            assert abs(P[i, i]) <= lh.sequence_probability(H, x) * (1 + 1e-9)


@pytest.mark.parametrize("l", [1, 2, 3])
def test_exact_expectation_is_power(l):
    H = random_local(np.random.default_rng(7), n=3)
    P = np.linalg.matrix_power(H.to_dense(), l)
    for i in range(H.dim):
        assert abs(lh.exact_sequence_expectation(H, l, i) - P[i, i]) <= 1e-10


def test_split_sampler_matches_table_sampler():
    H = random_psd_local(np.random.default_rng(8), n=4, m=3)
    l = 4
    rng = np.random.default_rng(9)
    idx = rng.integers(0, H.dim, size=4000)
    uniq, counts = np.unique(idx, return_counts=True)
    P = np.linalg.matrix_power(H.to_dense(), l)
    truth = float(np.sum(counts * np.diag(P).real[uniq]))
    cache = lh.SequenceCache()
    split = [lh._split_sum(H, l, uniq, counts, np.random.default_rng(s), cache) for s in range(30)]
    table = [lh._power_sum(H, l, uniq, counts, np.random.default_rng(s), cache) for s in range(30)]
    for vals in (split, table):
        assert abs(np.mean(vals) - truth) <= 4 * np.std(vals) / math.sqrt(30) + 1e-9


# -- estimator ------------------------------------------------------------------------------------


def test_constant_polynomial_exact():
    H = random_local(np.random.default_rng(10))
    assert lh.estimate_local_poly_trace(H, pa.from_coeffs([1.0]), req()).value == 1.0


def test_single_projector_linear():
    H = LocalHamiltonian(1, [LocalTerm((0,), P1)])
    p = pa.from_coeffs([0, 1])
    hits = sum(abs(lh.estimate_local_poly_trace(H, p, req(seed=s)).value - 0.5) <= 0.1 for s in range(100))
    assert hits >= 97


def test_degree_four_unit_coefficients():
    H = random_local(np.random.default_rng(11))
    p = pa.from_coeffs([1, 1, 1, 1, 1])
    M = H.to_dense()
    truth = float(np.trace(sum(np.linalg.matrix_power(M, l) for l in range(5))).real) / H.dim
    r = lh.estimate_local_poly_trace(H, p, req(seed=1))
    assert abs(r.value - truth) <= 0.1
    assert r.degree == 4
    assert r.samples <= lh.sample_count(5, 0.1, 0.01)


def test_local_estimator_rejects_bad_polynomials():
    H = random_local(np.random.default_rng(12))
    with pytest.raises(InputError):
        lh.estimate_local_poly_trace(H, pa.from_coeffs([0, 2.0]), req())
    with pytest.raises(InputError):
        lh.estimate_local_poly_trace(H, pa.from_coeffs([0, 1.0]), EstimateRequest("poly-trace", 0.1, 0.01, "chebyshev", 0))


def test_local_seed_determinism():
    H = random_psd_local(np.random.default_rng(13))
    p = pa.from_coeffs([0.5, 0.5, 0.5])
    a = lh.estimate_local_poly_trace(H, p, req(seed=4))
    b = lh.estimate_local_poly_trace(H, p, req(seed=4), cache=lh.SequenceCache())
    assert a.value == b.value


# -- drivers -------------------------------------------------------------------------------------------


def identity_hamiltonian():
    return LocalHamiltonian(1, [LocalTerm((0,), np.eye(2))])


def test_drivers_on_identity():
    H = identity_hamiltonian()
    b = SpectralBounds(1.0, 1.0)
    assert abs(lh.estimate_local_logdet(H, b, req("logdet")).value) <= 0.1
    assert abs(lh.estimate_local_trace_inverse(H, b, req("trace-inverse")).value - 1) <= 0.1
    assert abs(lh.estimate_local_partition(H, 1.0, req("partition")).value - math.exp(-1)) <= 0.1


def test_logdet_projector_spectrum():
    # spectrum {0.5, 0.5, 1, 1} on two qubits
    H = LocalHamiltonian(2, [LocalTerm((0,), np.diag([0.5, 1.0]))])
    r = lh.estimate_local_logdet(H, SpectralBounds(0.5, 1.0), req("logdet", seed=2))
    assert abs(r.value - (-0.34657359027997264)) <= 0.1


def test_drivers_random_psd():
    H = random_psd_local(np.random.default_rng(14))
    lam = reference.eig_hermitian(H.to_dense(original=True), vectors=False).values
    b = SpectralBounds(H.scale / 4, H.scale)
    assert lam[0] >= b.lambda_min
    cache = lh.SequenceCache()
    r = lh.estimate_local_logdet(H, b, req("logdet"), cache=cache)
    assert abs(r.value - np.mean(np.log(lam))) <= 0.1
    r = lh.estimate_local_trace_inverse(H, b, req("trace-inverse"), cache=cache)
    assert abs(r.value - np.mean(1 / lam)) <= 0.1
    r = lh.estimate_local_partition(H, 0.5, req("partition"), cache=cache)
    assert abs(r.value - np.mean(np.exp(-0.5 * lam))) <= 0.1


def test_driver_errors():
    H = identity_hamiltonian()
    with pytest.raises(InputError):
        lh.estimate_local_logdet(H, None, req("logdet"))
    with pytest.raises(InputError):
        lh.estimate_local_partition(H, 0.0, req("partition"))
    with pytest.raises(InputError):
        lh.estimate_local_logdet(H, SpectralBounds(2.0, 3.0), req("logdet"))


# -- file format ----------------------------------------------------------------------------------------


def test_file_round_trip(tmp_path):
    H = random_psd_local(np.random.default_rng(15))
    path = tmp_path / "h.localham"
    lh.save_local_hamiltonian(H, path)
    G = lh.load_local_hamiltonian(path)
    assert G.n == H.n and G.m == H.m
    assert G.scale == pytest.approx(H.scale)
    assert np.allclose(G.to_dense(), H.to_dense(), atol=1e-12)


def test_file_default_budget(tmp_path):
    path = tmp_path / "p.localham"
    path.write_text("LOCALHAM 2 1\nTERM 1 1 -\n0 0\n0 0\n0 0\n2 0\n")
    H = lh.load_local_hamiltonian(path)
    assert H.scale == pytest.approx(2.0)


@pytest.mark.parametrize(
    "text",
    ["", "LOCALHAM 2\n", "LOCALHAM 1 1\nTERM 1 0 1\n1 0\n", "LOCALHAM 1 1\nTERM 1 0 1\n1 0\n0 0\n0 0\n1 0\nextra\n",
     "LOCALHAM 1 1\nTERX 1 0 1\n1 0\n0 0\n0 0\n1 0\n"],
)
def test_file_errors(tmp_path, text):
    path = tmp_path / "bad.localham"
    path.write_text(text)
    with pytest.raises(InputError):
        lh.load_local_hamiltonian(path)
