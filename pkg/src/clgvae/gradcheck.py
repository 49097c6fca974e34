"""Finite-difference sweep over every parameter of a small model."""
from __future__ import annotations

import numpy as np

from .model import PARAM_GROUPS, LieGroupVAE, ModelConfig, param_group
from .nn import RngStreams

REL_TOL = 1e-4
ABS_TOL = 1e-7


def relative_error(analytic, numeric):
    """Entrywise |a - n| / max(|a|, |n|, ABS_TOL / REL_TOL)."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    floor = ABS_TOL / REL_TOL
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def check_model_gradients(config: ModelConfig | None = None, seed: int = 0, skip: bool = False,
                          h: float = 1e-5) -> dict[str, float]:
    """Worst entrywise relative error per parameter group for one skip branch."""
    config = config or ModelConfig.tiny()
    streams = RngStreams(seed)
    model = LieGroupVAE.create(config, streams["init"])
    data_rng = streams["batch"]
    x = (data_rng.random((config.batch_size, config.image_side ** 2)) < 0.3).astype(np.float64)
    eps = streams["noise"].standard_normal((config.batch_size, config.m))

    model.params.zero_grad()
    model.backward(model.forward(x, eps=eps, skip=skip))
    worst = {g: 0.0 for g in PARAM_GROUPS if g != "basis" or config.mode == "lie"}
    for name, entry in model.params.items():
        value = entry.value
        numeric = np.empty_like(value)
        flat = value.reshape(-1)
        out = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = model.total_loss(x, eps, skip)
            flat[i] = orig - h
            down = model.total_loss(x, eps, skip)
            flat[i] = orig
            out[i] = (up - down) / (2 * h)
        err = float(relative_error(entry.grad, numeric).max(initial=0.0))
        group = param_group(name)
        worst[group] = max(worst[group], err)
    model.params.zero_grad()
    return worst
