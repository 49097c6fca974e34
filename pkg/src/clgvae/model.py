"""Lie Group VAE: image encoder, group encoder, exponential map, decoder.

Pipeline (``mode = "lie"``)::

    x -> E_img -> z_hat -> E_group -> (mu, log_var) -> t -> exp(A(t)) = z -> D_img

The loss is ``rec_img + w_g * 0.5||z_hat - z||^2 + w_kl * KL + lambda_d * decomp
+ lambda_h * hessian``. During training the encoder feature ``z_hat`` replaces
``z`` as decoder input with probability ``skip_prob`` (one coin per batch).

``mode = "plain"`` bypasses the group layer: the decoder reads ``t`` directly
and there is no feature-sharing term, giving an ordinary VAE.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import liegroup
from .nn import (LatentGaussian, ParamStore, adam_step, bernoulli_nll,
                 bernoulli_nll_backward, dense, dense_backward, gaussian_head,
                 gaussian_nll, gaussian_nll_backward, kl_standard_normal,
                 kl_standard_normal_backward, relu, relu_backward,
                 reparameterize, reparameterize_backward, sigmoid)
from .numlin import ExpmDomainError

DEFAULT_LAMBDA_DECOMP = 40.0
DEFAULT_LAMBDA_HESSIAN = 20.0


class ConfigError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    def __init__(self, step, reason):
        super().__init__(f"training diverged at step {step}: {reason}")
        self.step = step


@dataclass
class ModelConfig:
    image_side: int = 32
    m: int = 10
    n: int = 10
    hidden: tuple = (1024, 512)
    group_hidden: int = 128
    mode: str = "lie"
    lambda_decomp: float = 0.0
    lambda_hessian: float = DEFAULT_LAMBDA_HESSIAN
    skip_prob: float = 0.2
    rec_group_weight: float = 1.0
    kl_weight: float = 1.0
    likelihood: str = "bernoulli"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    steps: int = 30000
    seed: int = 0
    split: str = "whole"
    log_every: int = 10
    checkpoint_every: int = 1000

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self):
        if not 0.0 <= self.skip_prob <= 1.0:
            raise ConfigError(f"skip_prob must lie in [0, 1], got {self.skip_prob}")
        if self.lambda_decomp < 0 or self.lambda_hessian < 0:
            raise ConfigError("lambda_decomp and lambda_hessian must be >= 0")
        if self.m < 1 or self.n < 2:
            raise ConfigError(f"need m >= 1 and n >= 2, got m={self.m}, n={self.n}")
        if self.mode not in ("lie", "plain"):
            raise ConfigError(f"mode must be 'lie' or 'plain', got {self.mode!r}")
        if self.likelihood not in ("bernoulli", "gaussian"):
            raise ConfigError(f"likelihood must be 'bernoulli' or 'gaussian', got {self.likelihood!r}")
        if self.split not in ("whole", "ablation"):
            raise ConfigError(f"split must be 'whole' or 'ablation', got {self.split!r}")
        if self.batch_size < 1 or self.log_every < 1 or self.checkpoint_every < 1:
            raise ConfigError("batch_size, log_every and checkpoint_every must be positive")

    @property
    def group_size(self) -> int:
        return self.n * self.n

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        """Desk-scale profile used for the mini-dsprites ablations."""
        base = dict(n=6, m=6, hidden=(128, 64), group_hidden=64, batch_size=32,
                    steps=20000)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        """Instance small enough for an exhaustive finite-difference sweep."""
        base = dict(image_side=8, n=3, m=2, hidden=(16, 16), group_hidden=16,
                    batch_size=4, steps=50)
        base.update(overrides)
        return cls(**base)

    # ------------------------------------------------------------ text io
    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: Optional["ModelConfig"] = None) -> "ModelConfig":
        """Parse ``key = value`` lines ('#' starts a comment) over ``base`` or the defaults."""
        kinds = {f.name: f.type for f in dataclasses.fields(cls)}
        values = dataclasses.asdict(base) if base is not None else {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in kinds:
                raise ConfigError(f"line {lineno}: unknown config key {key!r}")
            try:
                values[key] = _coerce(kinds[key], value)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
        return cls(**values)


def _coerce(kind: str, value: str):
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    if kind == "tuple":
        return tuple(int(v) for v in value.split(",") if v.strip())
    return value


@dataclass
class ForwardTrace:
    x: np.ndarray
    zhat: np.ndarray
    latent: LatentGaussian
    eps: np.ndarray
    t: np.ndarray
    z: Optional[np.ndarray]
    skip_taken: bool
    logits: np.ndarray
    cache: dict = field(default_factory=dict, repr=False)


@dataclass
class LossBreakdown:
    rec_img: float
    rec_group: float
    kl: float
    decomp_pen: float
    hessian_pen: float
    total: float

    def as_row(self) -> tuple:
        return (self.rec_img, self.rec_group, self.kl, self.decomp_pen,
                self.hessian_pen, self.total)


PARAM_GROUPS = ("encoder", "group_encoder", "basis", "decoder")


def param_group(name: str) -> str:
    prefix = name.split(".", 1)[0]
    return {"enc": "encoder", "genc": "group_encoder", "basis": "basis",
            "dec": "decoder"}[prefix]


def _init_dense(store, rng, name, fan_in, fan_out, gain):
    store.add(name + ".W", rng.normal(0.0, np.sqrt(gain / fan_in), size=(fan_out, fan_in)))
    store.add(name + ".b", np.zeros(fan_out))


def init_params(config: ModelConfig, rng: np.random.Generator) -> ParamStore:
    """He-normal weights before ReLUs, unit-gain on linear outputs, zero biases."""
    store = ParamStore()
    d = config.image_side ** 2
    widths = (d,) + config.hidden
    for i in range(len(config.hidden)):
        _init_dense(store, rng, f"enc.{i}", widths[i], widths[i + 1], 2.0)
    _init_dense(store, rng, "enc.out", widths[-1], config.group_size, 1.0)
    _init_dense(store, rng, "genc.hid", config.group_size, config.group_hidden, 2.0)
    _init_dense(store, rng, "genc.mu", config.group_hidden, config.m, 1.0)
    _init_dense(store, rng, "genc.lv", config.group_hidden, config.m, 1.0)
    if config.mode == "lie":
        store.add("basis", liegroup.init_basis(config.m, config.n, rng))
    dec_in = config.group_size if config.mode == "lie" else config.m
    dec_widths = (dec_in,) + tuple(reversed(config.hidden))
    for i in range(len(config.hidden)):
        _init_dense(store, rng, f"dec.{i}", dec_widths[i], dec_widths[i + 1], 2.0)
    _init_dense(store, rng, "dec.out", dec_widths[-1], d, 1.0)
    return store


class LieGroupVAE:
    def __init__(self, config: ModelConfig, params: ParamStore):
        self.config = config
        self.params = params
        nh = len(config.hidden)
        self._enc_layers = [f"enc.{i}" for i in range(nh)] + ["enc.out"]
        self._dec_layers = [f"dec.{i}" for i in range(nh)] + ["dec.out"]

    @classmethod
    def create(cls, config: ModelConfig, rng: np.random.Generator) -> "LieGroupVAE":
        return cls(config, init_params(config, rng))

    @property
    def basis(self) -> Optional[np.ndarray]:
        return self.params["basis"] if "basis" in self.params else None

    # ------------------------------------------------------------ mlp
    def _mlp(self, layers, h):
        cache = []
        for k, name in enumerate(layers):
            pre = dense(h, self.params[name + ".W"], self.params[name + ".b"])
            cache.append((h, pre))
            h = relu(pre) if k < len(layers) - 1 else pre
        return h, cache

    def _mlp_backward(self, layers, cache, g):
        for k in reversed(range(len(layers))):
            h, pre = cache[k]
            if k < len(layers) - 1:
                g = relu_backward(pre, g)
            gx, gW, gb = dense_backward(h, self.params[layers[k] + ".W"], g)
            self.params.accumulate(layers[k] + ".W", gW)
            self.params.accumulate(layers[k] + ".b", gb)
            g = gx
        return g

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        d = self.config.image_side ** 2
        if x.ndim == 3:
            x = x.reshape(len(x), -1)
        if x.ndim != 2 or x.shape[1] != d:
            raise ValueError(f"expected images with {d} pixels, got shape {x.shape}")
        return x

    # ------------------------------------------------------ components
    def encode(self, x):
        """Deterministic image encoder; returns z_hat of length n^2 per sample."""
        return self._mlp(self._enc_layers, self._check_input(x))[0]

    def _group_encode(self, zhat):
        p = self.params
        pre = dense(zhat, p["genc.hid.W"], p["genc.hid.b"])
        h = relu(pre)
        mu = dense(h, p["genc.mu.W"], p["genc.mu.b"])
        raw_lv = dense(h, p["genc.lv.W"], p["genc.lv.b"])
        latent, mask = gaussian_head(mu, raw_lv)
        return latent, (zhat, pre, h, mask)

    def group_encode(self, zhat) -> LatentGaussian:
        return self._group_encode(np.asarray(zhat, dtype=np.float64))[0]

    def decode(self, feature):
        """Decoder logits (Bernoulli) or means (Gaussian) from a feature batch."""
        return self._mlp(self._dec_layers, np.asarray(feature, dtype=np.float64))[0]

    def encode_mean(self, images, chunk=1024):
        """Posterior means for a batch of uint8 or [0, 1] images."""
        images = np.asarray(images)
        scale = 255.0 if images.dtype == np.uint8 else 1.0
        flat = images.reshape(len(images), -1)
        out = []
        for s in range(0, len(flat), chunk):
            x = flat[s:s + chunk].astype(np.float64) / scale
            out.append(self.group_encode(self.encode(x)).mu)
        return np.concatenate(out) if out else np.zeros((0, self.config.m))

    def to_pixels(self, out):
        """Decoder output mapped to [0, 1] intensities."""
        if self.config.likelihood == "bernoulli":
            return sigmoid(out)
        return np.clip(out, 0.0, 1.0)

    # --------------------------------------------------------- forward
    def forward(self, x, rng=None, train=False, eps=None, skip=None) -> ForwardTrace:
        """Full pipeline. ``eps`` and ``skip`` override the random draws when given.

        In train mode ``rng`` must be a mapping with ``noise`` and ``skip``
        generators; in eval mode eps = 0 and the skip path is never taken.
        """
        cfg = self.config
        x = self._check_input(x)
        B = len(x)
        zhat, enc_cache = self._mlp(self._enc_layers, x)
        latent, genc_cache = self._group_encode(zhat)
        if eps is None:
            eps = rng["noise"].standard_normal((B, cfg.m)) if train else np.zeros((B, cfg.m))
        if skip is None:
            skip = bool(rng["skip"].random() < cfg.skip_prob) if train else False
        if cfg.mode == "plain":
            skip = False
        eps = np.asarray(eps, dtype=np.float64)
        t = reparameterize(latent, eps)
        if cfg.mode == "lie":
            z, A = liegroup.group_decode(t, self.params["basis"])
            feature = zhat if skip else z
        else:
            z, A = None, None
            feature = t
        logits, dec_cache = self._mlp(self._dec_layers, feature)
        return ForwardTrace(x, zhat, latent, eps, t, z, skip, logits,
                            {"enc": enc_cache, "genc": genc_cache, "A": A, "dec": dec_cache})

    # ------------------------------------------------------------ loss
    def loss(self, trace: ForwardTrace) -> LossBreakdown:
        cfg = self.config
        if cfg.likelihood == "bernoulli":
            rec = bernoulli_nll(trace.logits, trace.x)
        else:
            rec = gaussian_nll(trace.logits, trace.x)
        rec_img = float(np.mean(rec))
        kl = float(np.mean(kl_standard_normal(trace.latent)))
        if cfg.mode == "lie":
            rec_group = float(np.mean(0.5 * np.sum((trace.zhat - trace.z) ** 2, axis=1)))
            basis = self.params["basis"]
            decomp = liegroup.decomp_penalty(basis)
            hess = liegroup.hessian_penalty(basis)
        else:
            rec_group = decomp = hess = 0.0
        total = (rec_img + cfg.rec_group_weight * rec_group + cfg.kl_weight * kl
                 + cfg.lambda_decomp * decomp + cfg.lambda_hessian * hess)
        return LossBreakdown(rec_img, rec_group, kl, decomp, hess, total)

    def backward(self, trace: ForwardTrace):
        """Accumulate d(total loss)/d(param) into the store's gradient buffers."""
        cfg = self.config
        p = self.params
        B = len(trace.x)
        if cfg.likelihood == "bernoulli":
            g_out = bernoulli_nll_backward(trace.logits, trace.x) / B
        else:
            g_out = gaussian_nll_backward(trace.logits, trace.x) / B
        g_feature = self._mlp_backward(self._dec_layers, trace.cache["dec"], g_out)

        g_zhat = np.zeros_like(trace.zhat)
        if cfg.mode == "lie":
            diff = (trace.zhat - trace.z) * (cfg.rec_group_weight / B)
            g_zhat += diff
            g_z = -diff
            if trace.skip_taken:
                g_zhat += g_feature
            else:
                g_z = g_z + g_feature
            g_t, g_basis = liegroup.group_decode_backward(trace.t, p["basis"],
                                                          trace.cache["A"], g_z)
            g_basis = g_basis * _BASIS_FAULT
            g_basis += cfg.lambda_decomp * liegroup.decomp_penalty_grad(p["basis"])
            g_basis += cfg.lambda_hessian * liegroup.hessian_penalty_grad(p["basis"])
            p.accumulate("basis", g_basis)
        else:
            g_t = g_feature

        g_mu, g_lv = reparameterize_backward(trace.latent, trace.eps, g_t)
        k_mu, k_lv = kl_standard_normal_backward(trace.latent)
        g_mu = g_mu + (cfg.kl_weight / B) * k_mu
        g_lv = g_lv + (cfg.kl_weight / B) * k_lv

        zhat, pre, h, mask = trace.cache["genc"]
        g_lv = g_lv * mask
        gh = np.zeros_like(h)
        for head, g in (("genc.mu", g_mu), ("genc.lv", g_lv)):
            gx, gW, gb = dense_backward(h, p[head + ".W"], g)
            p.accumulate(head + ".W", gW)
            p.accumulate(head + ".b", gb)
            gh += gx
        gpre = relu_backward(pre, gh)
        gx, gW, gb = dense_backward(zhat, p["genc.hid.W"], gpre)
        p.accumulate("genc.hid.W", gW)
        p.accumulate("genc.hid.b", gb)
        g_zhat += gx
        self._mlp_backward(self._enc_layers, trace.cache["enc"], g_zhat)

    def total_loss(self, x, eps, skip) -> float:
        return self.loss(self.forward(x, eps=eps, skip=skip)).total

    # ----------------------------------------------------------- train
    def train_step(self, x, rng, step: int) -> LossBreakdown:
        """One forward/backward/Adam update; ``step`` is the 1-based update index."""
        cfg = self.config
        try:
            trace = self.forward(x, rng=rng, train=True)
        except ExpmDomainError as exc:
            raise TrainingDiverged(step, str(exc)) from exc
        breakdown = self.loss(trace)
        if not np.isfinite(breakdown.total):
            raise TrainingDiverged(step, f"non-finite loss {breakdown.total}")
        self.backward(trace)
        try:
            adam_step(self.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, step)
        except FloatingPointError as exc:
            raise TrainingDiverged(step, str(exc)) from exc
        return breakdown

    # ------------------------------------------------------- traversal
    def traverse(self, x, dim: int, deltas, mode="coordinate"):
        """Decoded pixels of shape (len(x), len(deltas), H*W) sweeping one latent.

        ``coordinate`` offsets t_dim by each delta before decoding; ``action``
        left-multiplies the group element by exp(delta * A_dim).
        """
        cfg = self.config
        if not 0 <= dim < cfg.m:
            raise IndexError(f"latent dim {dim} out of range for m={cfg.m}")
        trace = self.forward(x)
        mu = trace.t
        out = np.empty((len(mu), len(deltas), cfg.image_side ** 2))
        for j, delta in enumerate(deltas):
            if mode == "coordinate":
                t = mu.copy()
                t[:, dim] += delta
                feature = liegroup.group_decode(t, self.basis)[0] if cfg.mode == "lie" else t
            elif mode == "action":
                if cfg.mode != "lie":
                    raise ValueError("action traversal needs a group layer (mode = lie)")
                feature = liegroup.subgroup_act(trace.z, dim, delta, self.basis)
            else:
                raise ValueError(f"unknown traversal mode {mode!r}")
            out[:, j] = self.to_pixels(self.decode(feature))
        return out


# test hook: scales the basis adjoint to emulate a corrupted backward pass
_BASIS_FAULT = 1.0


def set_basis_fault(factor: float = 1.0):
    global _BASIS_FAULT
    _BASIS_FAULT = float(factor)
