import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clgvae import numlin
from clgvae.numlin import ExpmDomainError, expm, expm_batch, expm_frechet, expm_vjp, frobenius, matmul

from oracles import (block_frechet, central_diff, naive_frobenius, naive_matmul, random_matrix,
                     rel_err, taylor_expm)


# ------------------------------------------------------------------ matmul

def test_matmul_identity_and_zero():
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(np.eye(2), M), M)
    assert np.array_equal(matmul(M, np.zeros((2, 2))), np.zeros((2, 2)))


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(1)
    A, B = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
    assert np.max(np.abs(matmul(A, B) - naive_matmul(A, B))) <= 1e-12


def test_matmul_mismatch_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_frobenius():
    rng = np.random.default_rng(2)
    A, B = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    assert frobenius(np.eye(2), np.eye(2)) == 2.0
    assert frobenius(A, np.zeros((3, 3))) == 0.0
    assert abs(frobenius(A, B) - naive_frobenius(A, B)) <= 1e-12
    with pytest.raises(ValueError):
        frobenius(A, np.zeros((2, 2)))


# -------------------------------------------------------------------- expm

def test_expm_closed_forms():
    assert np.array_equal(expm(np.zeros((3, 3))).value, np.eye(3))
    D = expm(np.diag([0.3, -1.2])).value
    assert np.allclose(D, np.diag(np.exp([0.3, -1.2])), rtol=1e-14, atol=0)
    th = 0.7
    R = expm(np.array([[0.0, -th], [th, 0.0]])).value
    assert np.allclose(R, [[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]], rtol=0, atol=1e-15)


def test_expm_matches_taylor_small_norm():
    rng = np.random.default_rng(3)
    for _ in range(20):
        A = random_matrix(rng, 6, rng.uniform(0.01, 1.0))
        assert rel_err(expm(A).value, taylor_expm(A)) <= 1e-12


@pytest.mark.parametrize("norm", [0.01, 0.2, 0.9, 2.0, 5.0, 20.0, 60.0, 100.0])
def test_expm_across_norm_range(norm):
    rng = np.random.default_rng(int(norm * 100))
    scipy_linalg = pytest.importorskip("scipy.linalg")
    for n in (2, 5, 9):
        A = random_matrix(rng, n, norm)
        assert rel_err(expm(A).value, scipy_linalg.expm(A)) <= 1e-10


def test_expm_diagnostics():
    small = expm(np.full((2, 2), 1e-3))
    assert small.pade_order == 3 and small.scaling_exponent == 0
    big = expm(random_matrix(np.random.default_rng(0), 4, 50.0))
    assert big.pade_order == 13 and big.scaling_exponent >= 3


def test_expm_inverse_and_determinism():
    rng = np.random.default_rng(4)
    for _ in range(10):
        A = random_matrix(rng, 5, rng.uniform(0.1, 5.0))
        assert np.max(np.abs(expm(A).value @ expm(-A).value - np.eye(5))) <= 1e-9
        assert expm(A).value.tobytes() == expm(A.copy()).value.tobytes()


def test_expm_commuting_pair():
    rng = np.random.default_rng(5)
    for _ in range(10):
        Q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        A = Q @ np.diag(rng.uniform(-1, 1, 4)) @ Q.T
        B = Q @ np.diag(rng.uniform(-1, 1, 4)) @ Q.T
        assert np.max(np.abs(expm(A + B).value - expm(A).value @ expm(B).value)) <= 1e-9


def test_expm_batch_matches_single():
    rng = np.random.default_rng(6)
    stack = np.stack([random_matrix(rng, 4, s) for s in (0.01, 0.5, 3.0, 40.0)])
    out = expm_batch(stack)
    for A, E in zip(stack, out):
        assert np.array_equal(E, expm(A).value)


def test_expm_errors():
    with pytest.raises(ValueError, match="square"):
        expm(np.zeros((2, 3)))
    with pytest.raises(ValueError, match="non-finite"):
        expm(np.array([[np.nan, 0.0], [0.0, 1.0]]))
    with pytest.raises(ExpmDomainError):
        expm(np.eye(3) * (numlin.MAX_NORM + 1))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.floats(1e-3, 30.0), st.integers(0, 2 ** 32 - 1))
def test_expm_property_vs_taylor(n, norm, seed):
    A = random_matrix(np.random.default_rng(seed), n, norm)
    assert rel_err(expm(A).value, taylor_expm(A)) <= 1e-10


# ----------------------------------------------------------------- Fréchet

def test_frechet_closed_forms():
    rng = np.random.default_rng(7)
    E = rng.standard_normal((3, 3))
    assert np.allclose(expm_frechet(np.zeros((3, 3)), E), E, rtol=0, atol=1e-15)
    a, b, u, v = 0.4, -0.9, 1.3, 0.2
    L = expm_frechet(np.diag([a, b]), np.diag([u, v]))
    assert np.allclose(L, np.diag([u * np.exp(a), v * np.exp(b)]), rtol=1e-14, atol=1e-15)


def test_frechet_block_oracle_and_fd():
    rng = np.random.default_rng(8)
    for _ in range(10):
        A = random_matrix(rng, 5, rng.uniform(0.1, 4.0))
        E = rng.standard_normal((5, 5))
        L = expm_frechet(A, E)
        assert rel_err(L, block_frechet(A, E)) <= 1e-10
        h = 1e-6
        fd = (taylor_expm(A + h * E) - taylor_expm(A - h * E)) / (2 * h)
        assert rel_err(L, fd) <= 1e-5


def test_frechet_linear_in_direction():
    rng = np.random.default_rng(9)
    A = random_matrix(rng, 4, 2.0)
    E1, E2 = rng.standard_normal((2, 4, 4))
    lhs = expm_frechet(A, 2.5 * E1 - 0.7 * E2)
    rhs = 2.5 * expm_frechet(A, E1) - 0.7 * expm_frechet(A, E2)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * max(1.0, np.max(np.abs(rhs)))


def test_frechet_zero_direction():
    assert np.array_equal(expm_frechet(np.eye(2), np.zeros((2, 2))), np.zeros((2, 2)))


def test_frechet_shape_errors():
    with pytest.raises(ValueError):
        expm_frechet(np.zeros((2, 2)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        expm_vjp(np.zeros((2, 2)), np.zeros((2, 3)))


# --------------------------------------------------------------------- VJP

def test_vjp_origin_is_identity():
    G = np.random.default_rng(10).standard_normal((3, 3))
    assert np.allclose(expm_vjp(np.zeros((3, 3)), G), G, rtol=0, atol=1e-15)


def test_vjp_adjoint_identity():
    rng = np.random.default_rng(11)
    for _ in range(10):
        A = random_matrix(rng, 4, rng.uniform(0.1, 5.0))
        E, G = rng.standard_normal((2, 4, 4))
        lhs = frobenius(expm_frechet(A, E), G)
        rhs = frobenius(E, expm_vjp(A, G))
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_vjp_of_entry_sum_matches_fd():
    rng = np.random.default_rng(12)
    A = random_matrix(rng, 4, 1.5)
    fd = central_diff(lambda X: taylor_expm(X).sum(), A, h=1e-6)
    assert rel_err(expm_vjp(A, np.ones((4, 4))), fd) <= 1e-5
