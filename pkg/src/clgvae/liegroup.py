"""Exponential-mapping layer and commutative-decomposition penalties.

A basis is an ``(m, n, n)`` array of Lie-algebra generators. Coordinates
``t`` of shape ``(B, m)`` map to group elements ``exp(sum_i t_i A_i)``, which
are flattened row-major into group codes of length ``n * n``.
"""
from __future__ import annotations

import numpy as np

from .numlin import ExpmDomainError, MAX_NORM, expm_batch, expm_vjp_batch, norm1


def init_basis(m: int, n: int, rng: np.random.Generator) -> np.ndarray:
    if m < 1 or n < 2:
        raise ValueError(f"need m >= 1 and n >= 2, got m={m}, n={n}")
    return rng.normal(0.0, 0.05 / np.sqrt(n), size=(m, n, n))


def algebra_element(t, basis):
    """A(t) = sum_i t_i A_i for each row of ``t``."""
    return np.einsum("bi,ijk->bjk", t, basis)


def group_decode(t, basis):
    """Group codes z = vec(exp(A(t))); returns (z, A(t)).

    ``t`` may be a single coordinate vector or a ``(B, m)`` batch.
    """
    t = np.asarray(t, dtype=np.float64)
    single = t.ndim == 1
    t2 = np.atleast_2d(t)
    m, n, _ = basis.shape
    if t2.shape[1] != m:
        raise ValueError(f"coordinate length {t2.shape[1]} != basis size {m}")
    A = algebra_element(t2, basis)
    worst = float(norm1(A).max(initial=0.0))
    if not np.isfinite(worst) or worst > MAX_NORM:
        raise ExpmDomainError(f"algebra element has 1-norm {worst:.4g} > {MAX_NORM:g}; "
                              "training has likely diverged")
    z = expm_batch(A).reshape(len(t2), n * n)
    return (z[0], A[0]) if single else (z, A)


def group_decode_backward(t, basis, A, gz):
    """Adjoint of group_decode; returns (g_t, g_basis) for upstream g_z."""
    t2 = np.atleast_2d(t)
    m, n, _ = basis.shape
    A3 = A.reshape(-1, n, n)
    G = np.asarray(gz, dtype=np.float64).reshape(-1, n, n)
    Abar = expm_vjp_batch(A3, G)
    g_t = np.einsum("bjk,ijk->bi", Abar, basis)
    g_basis = np.einsum("bi,bjk->ijk", t2, Abar)
    return (g_t[0] if np.ndim(t) == 1 else g_t), g_basis


def decomp_penalty(basis):
    """Sum over pairs i < j of ||A_i A_j - A_j A_i||_F^2."""
    P = np.einsum("iab,jbc->ijac", basis, basis)
    C = P - np.swapaxes(P, 0, 1)
    iu = np.triu_indices(len(basis), k=1)
    return float(np.sum(C[iu] ** 2))


def decomp_penalty_grad(basis):
    P = np.einsum("iab,jbc->ijac", basis, basis)
    C = P - np.swapaxes(P, 0, 1)  # C[i, j] = [A_i, A_j]
    # grad_i = 2 sum_j (C_ij A_j^T - A_j^T C_ij)
    g = (np.einsum("ijac,jbc->iab", C, basis)
         - np.einsum("jba,ijbc->iac", basis, C))
    return 2.0 * g


def hessian_penalty(basis):
    """Sum over i != j of ||A_i A_j||_F^2."""
    P = np.einsum("iab,jbc->ijac", basis, basis)
    sq = np.sum(P ** 2, axis=(2, 3))
    return float(sq.sum() - np.trace(sq))


def hessian_penalty_grad(basis):
    m = len(basis)
    P = np.einsum("iab,jbc->ijac", basis, basis)
    off = (1.0 - np.eye(m))[:, :, None, None]
    P = P * off
    # as left factor: d<P_ij, P_ij> / dA_i = 2 P_ij A_j^T
    left = np.einsum("ijac,jbc->iab", P, basis)
    # as right factor: d / dA_j = 2 A_i^T P_ij
    right = np.einsum("iba,ijbc->jac", basis, P)
    return 2.0 * (left + right)


def subgroup_act(z, i: int, delta: float, basis):
    """Left action of the one-parameter subgroup exp(delta * A_i) on group codes."""
    m, n, _ = basis.shape
    if not 0 <= i < m:
        raise IndexError(f"subgroup index {i} out of range for m={m}")
    z = np.asarray(z, dtype=np.float64)
    g = expm_batch((delta * basis[i])[None])[0]
    mats = z.reshape(-1, n, n)
    out = (g @ mats).reshape(z.shape)
    return out


# --------------------------------------------------------- constructions

def commuting_projection(basis, Q):
    """Keep only the part of each A_i that is diagonal in the orthogonal basis Q.

    The results Q diag(d_i) Q^T all commute with one another.
    """
    D = np.einsum("ba,ibc,cd->iad", Q, basis, Q)
    diag = np.einsum("iaa->ia", D)
    return np.einsum("ab,ib,cb->iac", Q, diag, Q)


def block_disjoint_basis(m: int, n: int, rng: np.random.Generator, scale=1.0):
    """Random generators supported on disjoint diagonal blocks, so A_i A_j = 0 for i != j."""
    if n < m:
        raise ValueError(f"need n >= m for disjoint blocks, got n={n}, m={m}")
    edges = np.linspace(0, n, m + 1).round().astype(int)
    basis = np.zeros((m, n, n))
    for i in range(m):
        lo, hi = edges[i], edges[i + 1]
        basis[i, lo:hi, lo:hi] = scale * rng.standard_normal((hi - lo, hi - lo))
    return basis
