"""Independent reference implementations used only by the tests.

Kept deliberately naive: loops and truncated series, no shared code with the
package under test.
"""
import math

import numpy as np


def taylor_expm(A, terms=30):
    """Truncated Taylor series with scaling and squaring (norm scaled below 0.5)."""
    A = np.asarray(A, dtype=np.float64)
    norm = np.abs(A).sum(axis=0).max()
    s = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    X = A / 2.0 ** s
    out = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, terms + 1):
        term = term @ X / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


def naive_matmul(A, B):
    n, k = A.shape
    k2, m = B.shape
    assert k == k2
    C = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for r in range(k):
                acc += A[i, r] * B[r, j]
            C[i, j] = acc
    return C


def naive_frobenius(A, B):
    total = 0.0
    for i in range(A.shape[0]):
        for j in range(A.shape[1]):
            total += A[i, j] * B[i, j]
    return total


def block_frechet(A, E):
    """Top-right block of the Taylor exponential of [[A, E], [0, A]]."""
    n = A.shape[0]
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = A
    M[n:, n:] = A
    M[:n, n:] = E
    return taylor_expm(M)[:n, n:]


def central_diff(f, x, h=1e-6):
    """Gradient of scalar f at array x by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = f(x)
        x[idx] = orig - h
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b, floor=1e-12):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), floor))


def random_matrix(rng, n, norm):
    """Random n x n matrix rescaled to the given 1-norm."""
    A = rng.standard_normal((n, n))
    return A * (norm / np.abs(A).sum(axis=0).max())


def mixed_partials_fd(f, t, h=1e-4):
    """Max |d^2 f / dt_i dt_j| over i != j and output entries, by central differences."""
    t = np.asarray(t, dtype=np.float64)
    m = len(t)
    worst = 0.0
    for i in range(m):
        for j in range(i + 1, m):
            ei, ej = np.eye(m)[i] * h, np.eye(m)[j] * h
            d = (f(t + ei + ej) - f(t + ei - ej) - f(t - ei + ej) + f(t - ei - ej)) / (4 * h * h)
            worst = max(worst, float(np.max(np.abs(d))))
    return worst


def loop_commutator_penalty(basis):
    total = 0.0
    for i in range(len(basis)):
        for j in range(i + 1, len(basis)):
            C = naive_matmul(basis[i], basis[j]) - naive_matmul(basis[j], basis[i])
            total += float(np.sum(C * C))
    return total


def loop_product_penalty(basis):
    total = 0.0
    for i in range(len(basis)):
        for j in range(len(basis)):
            if i != j:
                P = naive_matmul(basis[i], basis[j])
                total += float(np.sum(P * P))
    return total


def dci_null_chance(N, m, K, alpha=0.01, draws=20000, seed=12345):
    """Expected DCI disentanglement when codes carry no information.

    Under independence the standardized L1 regression sees correlations of
    order 1/sqrt(N), soft-thresholded at ``alpha``; the importance entries are
    drawn from that null and scored with an independent entropy formula.
    """
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(draws):
        R = np.maximum(np.abs(rng.standard_normal((m, K))) / math.sqrt(N) - alpha, 0.0)
        if R.sum() == 0:
            continue
        score = 0.0
        for row in R:
            if row.sum() == 0:
                continue
            P = row / row.sum()
            H = -sum(p * math.log(p) for p in P if p > 0)
            score += row.sum() / R.sum() * (1.0 - H / math.log(K))
        total += score
    return total / draws
