import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_sparse_hermitian
from specsum import reference
from specsum.errors import InputError
from specsum.oracle import (
    DenseOracle,
    SpectralBounds,
    dense_backed_oracle,
    iter_entries,
    load_matrix_file,
    product_oracle,
    save_matrix_file,
    synth_family,
)


def write(tmp_path, text, name="m.herm"):
    p = tmp_path / name
    p.write_text(text)
    return p


def check_support_contract(A):
    M = A.to_dense()
    for i in range(A.dim):
        row = dict(A.row_support(i))
        assert set(row) == set(np.flatnonzero(M[i]))
        assert len(row) <= A.sparsity
        for j, v in row.items():
            assert v != 0 and A.entry(i, j) == v
        col = dict(A.col_support(i))
        assert set(col) == set(np.flatnonzero(M[:, i]))
        for j in range(A.dim):
            assert A.entry(i, j) == np.conj(A.entry(j, i))


def test_load_mirrors_lower_triangle(tmp_path):
    A = load_matrix_file(write(tmp_path, "HERM 2 1\n0 1 1.0 0.0\n"))
    assert A.entry(1, 0) == 1.0
    assert A.sparsity == 1


def test_load_identity(tmp_path):
    text = "HERM 4 2\n" + "".join(f"{i} {i} 1 0\n" for i in range(4))
    A = load_matrix_file(write(tmp_path, text))
    for i in range(4):
        assert A.entry(i, i) == 1
        assert tuple(A.row_support(i)) == ((i, 1),)


def test_file_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    G = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    M = G + G.conj().T
    path = tmp_path / "r.herm"
    save_matrix_file(M, path)
    A = load_matrix_file(path)
    for i in range(8):
        for j in range(8):
            assert A.entry(i, j) == M[i, j]


@pytest.mark.parametrize(
    "text",
    [
        "HERX 2 1\n",
        "HERM 2\n",
        "HERM 3 2\n",
        "HERM 2 1\n0 2 1 0\n",
        "HERM 2 1\n0 0 1 0.5\n",
        "HERM 2 1\n0 1 1 1\n1 0 1 1\n",
        "HERM 2 1\n0 1 x 0\n",
        "",
    ],
)
def test_load_rejects_malformed(tmp_path, text):
    with pytest.raises(InputError):
        load_matrix_file(write(tmp_path, text))


def test_load_accepts_conjugate_duplicate_and_comments(tmp_path):
    A = load_matrix_file(write(tmp_path, "# c\nHERM 2 -\n0 1 1 1  # upper\n1 0 1 -1\n"))
    assert A.entry(1, 0) == 1 - 1j
    assert A.entry(0, 1) == 1 + 1j


def test_dense_zero_matrix_reports_unit_sparsity():
    A = dense_backed_oracle(np.zeros((4, 4)))
    assert A.sparsity == 1
    assert all(len(A.row_support(i)) == 0 for i in range(4))


def test_dense_diagonal():
    A = dense_backed_oracle(np.diag([0.5, 0.25]))
    assert A.entry(0, 0) == 0.5 and A.sparsity == 1


def test_dense_random_entries_and_contract():
    rng = np.random.default_rng(1)
    G = rng.normal(size=(16, 16)) + 1j * rng.normal(size=(16, 16))
    M = G + G.conj().T
    A = dense_backed_oracle(M)
    assert np.array_equal(A.to_dense(), M)
    check_support_contract(A)


def test_dense_rejects_non_hermitian():
    with pytest.raises(InputError):
        dense_backed_oracle(np.array([[0, 1], [0, 0]]))


def test_index_checks():
    A = dense_backed_oracle(np.eye(2))
    with pytest.raises(IndexError):
        A.entry(2, 0)
    with pytest.raises(IndexError):
        A.row_support(-1)


def test_product_of_identity():
    P = product_oracle(dense_backed_oracle(np.eye(4)))
    assert np.array_equal(P.to_dense(), np.eye(4))


def test_product_of_nilpotent():
    A = DenseOracle(np.array([[0, 1], [0, 0]]), hermitian=False)
    assert np.array_equal(product_oracle(A).to_dense(), np.diag([1, 0]))


@pytest.mark.parametrize("seed", range(5))
def test_product_matches_dense(seed):
    rng = np.random.default_rng(seed)
    M = (rng.random((8, 8)) < 0.3) * (rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8)))
    A = DenseOracle(M, hermitian=False)
    P = product_oracle(A)
    assert np.max(np.abs(P.to_dense() - M @ M.conj().T)) <= 1e-12
    assert P.sparsity == A.sparsity**2
    check_support_contract(P)


def test_family_diagonal_kappa_one_is_identity():
    A = synth_family("diagonal-spectrum", 2, {"kappa": 1})
    assert np.array_equal(A.to_dense(), np.eye(4))


def test_family_ring_spectrum():
    A = synth_family("shifted-laplacian-ring", 3, {"kappa": 4})
    lam = reference.eig_hermitian(A.to_dense(), vectors=False).values
    expected = np.sort(0.625 + 0.375 * np.cos(2 * np.pi * np.arange(8) / 8))
    assert np.allclose(lam, expected, atol=1e-12)
    assert lam[0] >= 0.25 - 1e-12 and lam[-1] <= 1 + 1e-12


@pytest.mark.parametrize("name", ["banded-random", "diagonal-spectrum", "shifted-laplacian-ring"])
def test_family_bounds_hold(name):
    A = synth_family(name, 4, {"kappa": 8, "seed": 7, "bandwidth": 2})
    lam = reference.eig_hermitian(A.to_dense(), vectors=False).values
    assert A.bounds.lambda_min - 1e-12 <= lam[0] and lam[-1] <= A.bounds.lambda_max + 1e-12
    check_support_contract(A)


def test_family_ring_is_implicit_at_large_n():
    A = synth_family("shifted-laplacian-ring", 40, {"kappa": 4})
    assert A.dim == 1 << 40
    assert len(A.row_support(A.dim - 1)) == 3


def test_family_errors():
    with pytest.raises(InputError):
        synth_family("nope", 2, {"kappa": 2})
    with pytest.raises(InputError):
        synth_family("diagonal-spectrum", 2, {"kappa": 0.5})


def test_bounds():
    b = SpectralBounds.from_kappa(4)
    assert b.interval == (0.25, 1.0) and b.kappa == 4
    assert SpectralBounds(0.0, 1.0).kappa is None
    with pytest.raises(InputError):
        SpectralBounds(1.0, 0.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 24), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_random_sparse_contract(N, s, seed):
    A, M = random_sparse_hermitian(np.random.default_rng(seed), N, s)
    assert A.sparsity <= s
    assert np.array_equal(A.to_dense(), M)
    assert sorted((i, j) for i, j, _ in iter_entries(A)) == sorted(zip(*np.nonzero(M)))
    check_support_contract(A)
