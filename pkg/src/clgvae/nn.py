"""Small differentiable-layer toolkit with explicit adjoints.

Each forward function has a ``*_backward`` partner that maps an upstream
gradient to gradients of its inputs. Arrays carry a leading batch axis;
dense weights are stored ``(out, in)`` so that ``y = x @ W.T + b``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numpy fallback below
    numba = None

LOG_VAR_BOUND = 10.0
# Adam moments below this are flushed to zero; subnormal arithmetic is slow
# and the update they would produce is negligible
MOMENT_FLOOR = np.finfo(np.float64).tiny
RNG_STREAMS = ("init", "noise", "skip", "batch", "metric")


# ---------------------------------------------------------------- layers

def dense(x, W, b):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ValueError(f"dense shape mismatch: x {x.shape}, W {W.shape}, b {b.shape}")
    return x @ W.T + b


def dense_backward(x, W, gy):
    """Returns (gx, gW, gb) for y = x @ W.T + b, summed over the batch."""
    if x.ndim == 1:
        return W.T @ gy, np.outer(gy, x), gy.copy()
    return gy @ W, gy.T @ x, gy.sum(axis=0)


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(x, gy):
    # subgradient at 0 is taken as 0
    return gy * (x > 0)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ------------------------------------------------------- latent gaussian

@dataclass
class LatentGaussian:
    mu: np.ndarray
    log_var: np.ndarray


def gaussian_head(mu, raw_log_var) -> tuple[LatentGaussian, np.ndarray]:
    """Clamp log-variance to [-10, 10]; returns the mask where gradient passes."""
    mask = np.abs(raw_log_var) <= LOG_VAR_BOUND
    return LatentGaussian(mu, np.clip(raw_log_var, -LOG_VAR_BOUND, LOG_VAR_BOUND)), mask


def reparameterize(g: LatentGaussian, eps):
    return g.mu + np.exp(0.5 * g.log_var) * eps


def reparameterize_backward(g: LatentGaussian, eps, gt):
    """Returns (g_mu, g_log_var)."""
    return gt.copy(), gt * 0.5 * np.exp(0.5 * g.log_var) * eps


def kl_standard_normal(g: LatentGaussian):
    """KL(N(mu, exp(log_var)) || N(0, I)), summed over the last axis."""
    return 0.5 * np.sum(g.mu ** 2 + np.exp(g.log_var) - 1.0 - g.log_var, axis=-1)


def kl_standard_normal_backward(g: LatentGaussian, gk=1.0):
    gk = np.asarray(gk, dtype=np.float64)[..., None] if np.ndim(gk) else gk
    return gk * g.mu, gk * 0.5 * (np.exp(g.log_var) - 1.0)


# ------------------------------------------------------------ likelihoods

def bernoulli_nll(logits, x):
    """Per-sample binary cross-entropy with logits, summed over features."""
    # softplus(l) = max(l, 0) + log1p(exp(-|l|)), stable for large |l|
    softplus = np.maximum(logits, 0.0) + np.log1p(np.exp(-np.abs(logits)))
    return np.sum(softplus - x * logits, axis=-1)


def bernoulli_nll_backward(logits, x):
    return sigmoid(logits) - x


def gaussian_nll(pred, x):
    """Per-sample 0.5 * squared error (unit-variance Gaussian, constant dropped)."""
    return 0.5 * np.sum((pred - x) ** 2, axis=-1)


def gaussian_nll_backward(pred, x):
    return pred - x


# ------------------------------------------------------------ parameters

@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray
    m: np.ndarray
    v: np.ndarray


@dataclass
class ParamStore:
    """Ordered named parameters with gradient and Adam moment buffers."""

    entries: dict[str, Param] = field(default_factory=dict)

    def add(self, name: str, value) -> np.ndarray:
        if name in self.entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=np.float64)
        self.entries[name] = Param(value, np.zeros_like(value),
                                   np.zeros_like(value), np.zeros_like(value))
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name].value

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def items(self):
        return self.entries.items()

    def accumulate(self, name: str, grad):
        self.entries[name].grad += grad

    def grads(self) -> dict[str, np.ndarray]:
        return {k: p.grad for k, p in self.entries.items()}

    def zero_grad(self):
        for p in self.entries.values():
            p.grad[...] = 0.0

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k, p in self.entries.items():
            out.entries[k] = Param(p.value.copy(), p.grad.copy(), p.m.copy(), p.v.copy())
        return out

    def equals(self, other: "ParamStore") -> bool:
        if list(self.entries) != list(other.entries):
            return False
        for k, p in self.entries.items():
            q = other.entries[k]
            for a, b in ((p.value, q.value), (p.m, q.m), (p.v, q.v)):
                if a.shape != b.shape or a.tobytes() != b.tobytes():
                    return False
        return True


def _adam_numpy(value, grad, m, v, b1, b2, eps, scale_v, scale_m):
    tmp = np.multiply(grad, 1.0 - b1)
    m *= b1
    m += tmp
    m[np.abs(m) < MOMENT_FLOOR] = 0.0
    np.multiply(grad, grad, out=tmp)
    tmp *= 1.0 - b2
    v *= b2
    v += tmp
    v[v < MOMENT_FLOOR] = 0.0
    np.sqrt(v, out=tmp)
    tmp *= scale_v
    tmp += eps
    np.divide(m, tmp, out=tmp)
    tmp *= scale_m
    value -= tmp
    grad.fill(0.0)


def _adam_fused(value, grad, m, v, b1, b2, eps, scale_v, scale_m):
    # same operation order as the numpy path, one pass over memory
    value, grad, m, v = value.ravel(), grad.ravel(), m.ravel(), v.ravel()
    for i in range(value.size):
        g = grad[i]
        mi = m[i] * b1 + g * (1.0 - b1)
        vi = v[i] * b2 + g * g * (1.0 - b2)
        if abs(mi) < MOMENT_FLOOR:
            mi = 0.0
        if vi < MOMENT_FLOOR:
            vi = 0.0
        m[i] = mi
        v[i] = vi
        value[i] -= mi / (np.sqrt(vi) * scale_v + eps) * scale_m
        grad[i] = 0.0


_adam_kernel = _adam_numpy
if numba is not None:
    _adam_kernel = numba.njit(cache=True, nogil=True)(_adam_fused)


def adam_step(store: ParamStore, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, step=1) -> int:
    """One bias-corrected Adam update; ``step`` is the 1-based count of this update.

    Gradients are zeroed afterwards. Returns ``step``.
    """
    for name, p in store.items():
        if not np.isfinite(p.grad).all():
            raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
    # value -= lr * (m / bc1) / (sqrt(v / bc2) + eps)
    scale_v = 1.0 / np.sqrt(1.0 - beta2 ** step)
    scale_m = lr / (1.0 - beta1 ** step)
    for p in store.entries.values():
        _adam_kernel(p.value, p.grad, p.m, p.v, beta1, beta2, eps, scale_v, scale_m)
    return step


# ------------------------------------------------------------------- rng

class RngStreams:
    """Independent named PCG64 streams spawned from one seed."""

    def __init__(self, seed: int, names=RNG_STREAMS):
        children = np.random.SeedSequence(int(seed)).spawn(len(names))
        self.streams = {n: np.random.Generator(np.random.PCG64(c))
                        for n, c in zip(names, children)}

    def __getitem__(self, name: str) -> np.random.Generator:
        return self.streams[name]

    def get_state(self) -> dict:
        return {n: g.bit_generator.state for n, g in self.streams.items()}

    def set_state(self, state: dict):
        if set(state) != set(self.streams):
            raise ValueError(f"rng state streams {sorted(state)} != {sorted(self.streams)}")
        for n, s in state.items():
            self.streams[n].bit_generator.state = s
