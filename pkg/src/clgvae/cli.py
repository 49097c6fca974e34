"""Command-line entry point: gen-data, train, eval, traverse, check-grad.

Failures print one line ``clgvae: error[<kind>]: <message>`` to stderr and
exit with status 1.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import data as data_mod
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import REL_TOL, check_model_gradients
from .metrics import evaluate_all
from .model import (ConfigError, LieGroupVAE, ModelConfig, TrainingDiverged,
                    init_params, set_basis_fault)
from .render import tile_grid, to_bytes, write_pgm
from .training import Trainer, split_indices

PRESETS = {"default": ModelConfig, "desk": ModelConfig.desk, "tiny": ModelConfig.tiny}


class CLIError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


# ---------------------------------------------------------------- helpers

def _load_config(path, preset="default", seed=None) -> ModelConfig:
    base = PRESETS[preset]()
    try:
        cfg = ModelConfig.from_text(Path(path).read_text(), base) if path else base
        if seed is not None:
            cfg = ModelConfig.from_text(f"seed = {seed}", cfg)
    except OSError as exc:
        raise CLIError("io", f"cannot read config {path}: {exc.strerror}") from exc
    except ConfigError as exc:
        raise CLIError("config", str(exc)) from exc
    return cfg


def _read_data(path) -> data_mod.FactorDataset:
    try:
        return data_mod.read_dataset(path)
    except OSError as exc:
        raise CLIError("io", f"cannot read dataset {path}: {exc.strerror}") from exc
    except ValueError as exc:
        raise CLIError("data", f"{path}: {exc}") from exc


def _read_checkpoint(path):
    try:
        return load_checkpoint(path)
    except OSError as exc:
        raise CLIError("io", f"cannot read checkpoint {path}: {exc.strerror}") from exc
    except (CheckpointError, ConfigError) as exc:
        raise CLIError("checkpoint", f"{path}: {exc}") from exc


def model_from_checkpoint(ckpt) -> LieGroupVAE:
    """Rebuild the model, checking every parameter shape against the config."""
    expected = init_params(ckpt.config, np.random.default_rng(0))
    if list(expected) != list(ckpt.params):
        raise CLIError("mismatch", "checkpoint parameter names do not match its config")
    for name in expected:
        if expected[name].shape != ckpt.params[name].shape:
            raise CLIError("mismatch", f"parameter {name} has shape {ckpt.params[name].shape}, "
                                       f"config (n={ckpt.config.n}, m={ckpt.config.m}) "
                                       f"implies {expected[name].shape}")
    return LieGroupVAE(ckpt.config, ckpt.params)


def _check_side(config: ModelConfig, ds):
    if ds.side != config.image_side:
        raise CLIError("mismatch", f"dataset side {ds.side} != model image_side {config.image_side}")


# --------------------------------------------------------------- commands

def cmd_gen_data(args):
    try:
        ds = data_mod.generate(args.profile, args.side, args.seed)
    except ValueError as exc:
        raise CLIError("profile", str(exc)) from exc
    try:
        crc = data_mod.write_dataset(ds, args.out)
    except OSError as exc:
        raise CLIError("io", f"cannot write {args.out}: {exc.strerror}") from exc
    factors = ", ".join(f"{n}={c}" for n, c in zip(ds.spec.names, ds.spec.cardinalities))
    print(f"profile {args.profile}: {len(ds)} images {ds.side}x{ds.side}, factors {factors}")
    print(f"crc32 {crc:#010x}")
    return 0


def cmd_train(args):
    ds = _read_data(args.data)
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CLIError("io", f"cannot create {out}: {exc.strerror}") from exc
    log_path = out / "loss.tsv"

    if args.resume:
        ckpt = _read_checkpoint(args.resume)
        cfg = ckpt.config
        if args.config or args.seed is not None:
            wanted = _load_config(args.config, args.preset,
                                  args.seed if args.seed is not None else None)
            if wanted != cfg:
                if not args.force:
                    raise CLIError("mismatch", "requested config differs from checkpoint; "
                                               "pass --force to train with the new config")
                cfg = wanted
        _check_side(cfg, ds)
        trainer = Trainer(cfg, ds)
        try:
            trainer.restore(ckpt)
        except ValueError as exc:
            raise CLIError("mismatch", str(exc)) from exc
        kept = []
        if log_path.exists():
            kept = [ln for ln in log_path.read_text().splitlines()
                    if ln.strip() and int(ln.split("\t", 1)[0]) <= trainer.step]
        log_path.write_text("".join(ln + "\n" for ln in kept))
    else:
        cfg = _load_config(args.config, args.preset, args.seed)
        _check_side(cfg, ds)
        trainer = Trainer(cfg, ds)
        log_path.write_text("")

    start = time.perf_counter()
    with open(log_path, "a") as log_file:
        try:
            trainer.run(out_dir=out, log_file=log_file)
        except TrainingDiverged as exc:
            save_checkpoint(trainer.checkpoint(), out / "ckpt_crash.clgc")
            raise CLIError("diverged", f"{exc}; crash checkpoint written to "
                                       f"{out / 'ckpt_crash.clgc'}") from exc

    metrics_path = None
    if args.eval_at_end:
        metrics_path = out / "metrics.txt"
        _, eval_idx = split_indices(cfg, len(ds))
        report = evaluate_all(trainer.model.encode_mean, ds.subset(eval_idx), cfg.seed,
                              cfg.to_text())
        metrics_path.write_text(report.to_text())
    manifest = {
        "seed": cfg.seed,
        "config": cfg.to_text(),
        "dataset": {"path": str(Path(args.data).resolve()),
                    "crc32": data_mod.dataset_crc(ds)},
        "loss_log": str(log_path.resolve()),
        "final_checkpoint": str((out / "ckpt_final.clgc").resolve()),
        "metrics": str(metrics_path.resolve()) if metrics_path else None,
        "steps": trainer.step,
        "wall_clock_seconds": round(time.perf_counter() - start, 3),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"trained to step {trainer.step}; checkpoint {out / 'ckpt_final.clgc'}")
    return 0


def cmd_eval(args):
    ckpt = _read_checkpoint(args.ckpt)
    model = model_from_checkpoint(ckpt)
    ds = _read_data(args.data)
    _check_side(model.config, ds)
    _, eval_idx = split_indices(model.config, len(ds))
    try:
        report = evaluate_all(model.encode_mean, ds.subset(eval_idx), args.seed,
                              model.config.to_text())
    except ValueError as exc:
        raise CLIError("eval", str(exc)) from exc
    out = Path(args.out) if args.out else Path(args.ckpt).with_suffix(".metrics.txt")
    try:
        out.write_text(report.to_text())
    except OSError as exc:
        raise CLIError("io", f"cannot write {out}: {exc.strerror}") from exc
    for key, value in report.scores().items():
        print(f"{key.upper()} {100.0 * value:.1f}")
    for w in report.warnings:
        print(f"warning: {w}")
    print(f"report {out}")
    return 0


def traversal_deltas(steps: int, radius: float) -> np.ndarray:
    if steps < 1:
        raise CLIError("usage", "--steps must be >= 1")
    return np.zeros(1) if steps == 1 else np.linspace(-radius, radius, steps)


def cmd_traverse(args):
    model = model_from_checkpoint(_read_checkpoint(args.ckpt))
    ds = _read_data(args.data)
    _check_side(model.config, ds)
    if not 1 <= args.row_samples <= len(ds):
        raise CLIError("usage", f"--row-samples must lie in [1, {len(ds)}]")
    rows = np.sort(np.random.default_rng(args.seed).choice(len(ds), args.row_samples,
                                                          replace=False))
    x = ds.as_float(rows)
    deltas = traversal_deltas(args.steps, args.range)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CLIError("io", f"cannot create {out}: {exc.strerror}") from exc
    side = model.config.image_side
    try:
        for dim in range(model.config.m):
            pix = model.traverse(x, dim, deltas, args.mode)
            tiles = pix.reshape(len(rows), len(deltas), side, side)
            write_pgm(out / f"dim{dim:02d}.pgm", to_bytes(tile_grid(tiles)))
    except ValueError as exc:
        raise CLIError("traverse", str(exc)) from exc
    print(f"wrote {model.config.m} grids ({len(rows)} x {len(deltas)} tiles) to {out}")
    return 0


def cmd_check_grad(args):
    cfg = _load_config(args.config, "tiny", args.seed)
    if args.corrupt_adjoint:
        set_basis_fault(1.01)
    try:
        results = {skip: check_model_gradients(cfg, cfg.seed, skip) for skip in (False, True)}
    finally:
        set_basis_fault(1.0)
    offenders = []
    for group in results[False]:
        worst = max(results[False][group], results[True][group])
        print(f"{group:14s} worst relative error {worst:.3e}")
        if not worst <= REL_TOL:
            offenders.append(group)
    if offenders:
        raise CLIError("gradcheck", f"tolerance {REL_TOL:g} exceeded in: {', '.join(offenders)}")
    print(f"all parameter groups within {REL_TOL:g}")
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clgvae", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a procedural dataset file")
    p.add_argument("--profile", default="mini-dsprites")
    p.add_argument("--side", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="key = value config file, overlaid on --preset")
    p.add_argument("--preset", choices=sorted(PRESETS), default="default")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--force", action="store_true", help="accept a config differing from --resume")
    p.add_argument("--eval-at-end", action="store_true", help="write metrics.txt after training")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="compute disentanglement metrics")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="report path (default: next to the checkpoint)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("traverse", help="render latent traversal grids as PGM")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--row-samples", type=int, default=8)
    p.add_argument("--steps", type=int, default=9)
    p.add_argument("--range", type=float, default=2.5)
    p.add_argument("--mode", choices=("coordinate", "action"), default="coordinate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_traverse)

    p = sub.add_parser("check-grad", help="finite-difference check of the full model")
    p.add_argument("--config", help="overrides on the tiny preset")
    p.add_argument("--seed", type=int)
    p.add_argument("--corrupt-adjoint", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_check_grad)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"clgvae: error[{exc.kind}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
