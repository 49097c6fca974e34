"""Single-threaded, bit-reproducible training loop with checkpoints and resume."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import FactorDataset, train_test_split
from .model import LieGroupVAE, LossBreakdown, ModelConfig
from .nn import RngStreams

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("step", "rec_img", "rec_group", "kl", "decomp_pen", "hessian_pen", "total")


def format_loss_line(step: int, b: LossBreakdown) -> str:
    return "\t".join([str(step)] + [repr(float(v)) for v in b.as_row()])


def parse_loss_log(text: str) -> list[tuple]:
    rows = []
    for line in text.splitlines():
        if line.strip():
            fields = line.split("\t")
            rows.append((int(fields[0]),) + tuple(float(v) for v in fields[1:]))
    return rows


def split_indices(config: ModelConfig, n: int):
    """(train, eval) row indices for the configured split."""
    if config.split == "whole":
        idx = np.arange(n)
        return idx, idx
    return train_test_split(n, config.seed)


class Trainer:
    """Owns the model, optimizer state and RNG streams of one run."""

    def __init__(self, config: ModelConfig, dataset: FactorDataset):
        if dataset.side != config.image_side:
            raise ValueError(f"dataset side {dataset.side} != config image_side {config.image_side}")
        self.config = config
        self.dataset = dataset
        self.streams = RngStreams(config.seed)
        self.model = LieGroupVAE.create(config, self.streams["init"])
        self.step = 0
        self.train_idx, self.eval_idx = split_indices(config, len(dataset))
        self._x = dataset.as_float(self.train_idx)

    # ---------------------------------------------------------- state
    def checkpoint(self) -> Checkpoint:
        return Checkpoint(self.config, self.step, self.model.params, self.streams.get_state())

    def restore(self, ckpt: Checkpoint):
        names = list(self.model.params)
        if list(ckpt.params) != names:
            raise ValueError("checkpoint parameters do not match the model layout")
        for name in names:
            if ckpt.params[name].shape != self.model.params[name].shape:
                raise ValueError(f"checkpoint shape mismatch for {name}")
        self.model.params = ckpt.params
        self.streams.set_state(ckpt.rng_state)
        self.step = ckpt.step

    @classmethod
    def from_checkpoint(cls, path, dataset: FactorDataset, config: ModelConfig | None = None,
                        force: bool = False) -> "Trainer":
        ckpt = load_checkpoint(path)
        if config is not None and config != ckpt.config and not force:
            raise ValueError("checkpoint config differs from the requested config (use force)")
        trainer = cls(ckpt.config if config is None else config, dataset)
        trainer.restore(ckpt)
        return trainer

    # ----------------------------------------------------------- loop
    def train_step(self) -> LossBreakdown:
        idx = self.streams["batch"].choice(len(self._x), self.config.batch_size,
                                           replace=len(self._x) < self.config.batch_size)
        breakdown = self.model.train_step(self._x[idx], self.streams, self.step + 1)
        self.step += 1
        return breakdown

    def run(self, until: int | None = None, out_dir=None, log_file=None):
        """Train up to step ``until`` (default: config.steps).

        Loss rows every ``log_every`` steps go to ``log_file`` (an open text
        handle) and are returned; with ``out_dir`` set, checkpoints land there
        every ``checkpoint_every`` steps and at the end.
        """
        cfg = self.config
        until = cfg.steps if until is None else until
        rows = []
        out = Path(out_dir) if out_dir is not None else None
        while self.step < until:
            breakdown = self.train_step()
            if self.step % cfg.log_every == 0:
                rows.append((self.step,) + breakdown.as_row())
                if log_file is not None:
                    log_file.write(format_loss_line(self.step, breakdown) + "\n")
                    log_file.flush()
            if out is not None and self.step % cfg.checkpoint_every == 0:
                save_checkpoint(self.checkpoint(), out / checkpoint_name(self.step))
        if out is not None:
            save_checkpoint(self.checkpoint(), out / "ckpt_final.clgc")
        return rows


def checkpoint_name(step: int) -> str:
    return f"ckpt_{step:07d}.clgc"
