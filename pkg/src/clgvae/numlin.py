"""Dense linear algebra and a differentiable matrix exponential.

Matrices are plain ``float64`` numpy arrays. The exponential uses scaling and
squaring with diagonal Padé approximants (orders 3, 5, 7, 9, 13) picked from
the 1-norm, following Higham (2005). Fréchet derivatives are read off the
exponential of the 2n x 2n block matrix ``[[A, E], [0, A]]``.

Every function has a batched twin (``*_batch``) operating on ``(B, n, n)``
stacks; the model uses those on whole minibatches.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_NORM = 100.0

# Padé numerator coefficients b_0..b_m, and the 1-norm bound up to which
# order m alone (no scaling) reaches unit roundoff in double precision.
_PADE_COEFFS = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0),
    13: (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0,
         670442572800.0, 33522128640.0, 1323241920.0, 40840800.0, 960960.0,
         16380.0, 182.0, 1.0),
}
_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}


class ExpmDomainError(ValueError):
    """Raised when an exponent exceeds the accepted 1-norm."""


@dataclass(frozen=True)
class ExpmResult:
    value: np.ndarray
    scaling_exponent: int
    pade_order: int


def _as_matrix(A, name="A") -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {A.shape}")
    return A


def _as_square_stack(A, name="A") -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 3 or A.shape[1] != A.shape[2]:
        raise ValueError(f"{name} must be a (B, n, n) stack, got shape {A.shape}")
    return A


def _check_finite(A, name="A"):
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")


def norm1(A: np.ndarray) -> np.ndarray:
    """Induced 1-norm (max column abs sum) of a matrix or of each stack entry."""
    return np.abs(A).sum(axis=-2).max(axis=-1)


def matmul(A, B) -> np.ndarray:
    A = _as_matrix(A, "A")
    B = _as_matrix(B, "B")
    if A.shape[1] != B.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {A.shape} @ {B.shape}")
    return A @ B


def frobenius(A, B) -> float:
    """Frobenius inner product sum_ij A_ij B_ij."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape:
        raise ValueError(f"frobenius shape mismatch: {A.shape} vs {B.shape}")
    return float(np.sum(A * B))


def _select_order(norms: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-matrix Padé order and scaling exponent."""
    orders = np.full(norms.shape, 13, dtype=np.int64)
    for m in (9, 7, 5, 3):
        orders[norms <= _THETA[m]] = m
    scale = np.zeros(norms.shape, dtype=np.int64)
    big = norms > _THETA[13]
    if np.any(big):
        scale[big] = np.ceil(np.log2(norms[big] / _THETA[13])).astype(np.int64)
    return orders, scale


def _pade(A: np.ndarray, m: int) -> np.ndarray:
    b = _PADE_COEFFS[m]
    n = A.shape[-1]
    ident = np.broadcast_to(np.eye(n), A.shape)
    A2 = A @ A
    if m == 13:
        A4 = A2 @ A2
        A6 = A4 @ A2
        U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
                 + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
        V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
             + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident)
    else:
        U = b[1] * ident
        V = b[0] * ident
        power = ident
        for k in range(1, m // 2 + 1):
            power = power @ A2
            U = U + b[2 * k + 1] * power
            V = V + b[2 * k] * power
        U = A @ U
    return np.linalg.solve(V - U, V + U)


def _expm_core(A: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exponential of a (B, n, n) stack without the norm guard."""
    norms = norm1(A)
    orders, scale = _select_order(norms)
    out = np.empty_like(A)
    scaled = A * np.ldexp(1.0, -scale)[:, None, None]
    for m in np.unique(orders):
        idx = np.nonzero(orders == m)[0]
        out[idx] = _pade(scaled[idx], int(m))
    for k in range(int(scale.max(initial=0))):
        idx = np.nonzero(scale > k)[0]
        out[idx] = out[idx] @ out[idx]
    return out, scale, orders


def _guard(A: np.ndarray, name="A"):
    _check_finite(A, name)
    worst = float(norm1(A).max(initial=0.0))
    if worst > MAX_NORM:
        raise ExpmDomainError(f"{name} has 1-norm {worst:.4g} > {MAX_NORM:g}")


def expm(A) -> ExpmResult:
    A = _as_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"expm needs a square matrix, got shape {A.shape}")
    _guard(A)
    value, scale, orders = _expm_core(A[None])
    return ExpmResult(value[0], int(scale[0]), int(orders[0]))


def expm_batch(A) -> np.ndarray:
    A = _as_square_stack(A)
    _guard(A)
    return _expm_core(A)[0]


def expm_frechet_batch(A, E) -> np.ndarray:
    """L(A_b, E_b) for each stack entry."""
    A = _as_square_stack(A, "A")
    E = _as_square_stack(E, "E")
    if A.shape != E.shape:
        raise ValueError(f"expm_frechet shape mismatch: {A.shape} vs {E.shape}")
    _guard(A)
    _check_finite(E, "E")
    B, n, _ = A.shape
    # L is linear in E: normalise E so it does not inflate the block norm.
    enorm = norm1(E)
    c = np.where(enorm > 0, 1.0 / np.where(enorm > 0, enorm, 1.0), 0.0)
    block = np.zeros((B, 2 * n, 2 * n))
    block[:, :n, :n] = A
    block[:, n:, n:] = A
    block[:, :n, n:] = E * c[:, None, None]
    top_right = _expm_core(block)[0][:, :n, n:]
    return top_right * np.where(enorm > 0, enorm, 0.0)[:, None, None]


def expm_frechet(A, E) -> np.ndarray:
    A = _as_matrix(A, "A")
    E = _as_matrix(E, "E")
    if A.shape != E.shape or A.shape[0] != A.shape[1]:
        raise ValueError(f"expm_frechet needs equal square shapes: {A.shape} vs {E.shape}")
    return expm_frechet_batch(A[None], E[None])[0]


def expm_vjp_batch(A, G) -> np.ndarray:
    """Gradient of <exp(A_b), G_b> w.r.t. A_b, i.e. L(A_b^T, G_b)."""
    A = _as_square_stack(A, "A")
    G = _as_square_stack(G, "G")
    if A.shape != G.shape:
        raise ValueError(f"expm_vjp shape mismatch: {A.shape} vs {G.shape}")
    return expm_frechet_batch(np.swapaxes(A, 1, 2), G)


def expm_vjp(A, G) -> np.ndarray:
    A = _as_matrix(A, "A")
    G = _as_matrix(G, "G")
    if A.shape != G.shape or A.shape[0] != A.shape[1]:
        raise ValueError(f"expm_vjp needs equal square shapes: {A.shape} vs {G.shape}")
    return expm_vjp_batch(A[None], G[None])[0]
