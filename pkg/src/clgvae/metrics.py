"""Disentanglement scores: FactorVAE metric, SAP, MIG and DCI disentanglement.

All scores take posterior-mean codes ``(N, m)`` and integer ground-truth
factors ``(N, K)``. FVM additionally needs the dataset to draw fixed-factor
batches from.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import FactorDataset, fixed_factor_indices


# ------------------------------------------------------------ helpers

def discretize(codes, bins: int = 20) -> np.ndarray:
    """Equal-width binning of each column over its own observed range."""
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    codes = np.asarray(codes, dtype=np.float64)
    lo = codes.min(axis=0)
    span = codes.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    idx = np.floor((codes - lo) / safe * bins).astype(np.int64)
    idx = np.clip(idx, 0, bins - 1)
    idx[:, span <= 0] = 0
    return idx


def _contingency(a, b):
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1.0)
    return table


def mutual_information(a, b) -> float:
    """Plug-in mutual information (nats) between two integer columns."""
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    joint = _contingency(a, b) / len(a)
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(max(0.0, np.sum(joint[nz] * np.log(joint[nz] / (pa @ pb)[nz]))))


def entropy(a) -> float:
    _, counts = np.unique(np.asarray(a).ravel(), return_counts=True)
    p = counts / counts.sum()
    return float(-np.sum(p * np.log(p)))


def _varying_factors(factors):
    return [k for k in range(factors.shape[1]) if np.unique(factors[:, k]).size > 1]


# ----------------------------------------------------------------- MIG

def mig(codes, factors, bins: int = 20, return_matrix: bool = False):
    codes = np.asarray(codes, dtype=np.float64)
    factors = np.asarray(factors)
    if codes.shape[1] < 2:
        raise ValueError("MIG needs at least 2 latent dimensions")
    binned = discretize(codes, bins)
    m, K = codes.shape[1], factors.shape[1]
    mi = np.zeros((m, K))
    gaps = []
    for k in _varying_factors(factors):
        for j in range(m):
            mi[j, k] = mutual_information(binned[:, j], factors[:, k])
        top = np.sort(mi[:, k])[::-1]
        gaps.append((top[0] - top[1]) / entropy(factors[:, k]))
    score = float(np.clip(np.mean(gaps), 0.0, 1.0)) if gaps else 0.0
    return (score, mi) if return_matrix else score


# ----------------------------------------------------------------- SAP

def sap(codes, factors, return_matrix: bool = False):
    """Mean over factors of the gap between the two largest squared correlations."""
    codes = np.asarray(codes, dtype=np.float64)
    f = np.asarray(factors, dtype=np.float64)
    zc = codes - codes.mean(axis=0)
    fc = f - f.mean(axis=0)
    zs = np.sqrt(np.sum(zc ** 2, axis=0))
    fs = np.sqrt(np.sum(fc ** 2, axis=0))
    denom = np.outer(zs, fs)
    with np.errstate(invalid="ignore", divide="ignore"):
        S = np.where(denom > 0, (zc.T @ fc) / np.where(denom > 0, denom, 1.0), 0.0) ** 2
    gaps = []
    for k in _varying_factors(np.asarray(factors)):
        top = np.sort(S[:, k])[::-1]
        gaps.append(top[0] - (top[1] if len(top) > 1 else 0.0))
    score = float(np.clip(np.mean(gaps), 0.0, 1.0)) if gaps else 0.0
    return (score, S) if return_matrix else score


# ----------------------------------------------------------------- DCI

def _standardize(a):
    a = np.asarray(a, dtype=np.float64)
    mean = a.mean(axis=0)
    std = a.std(axis=0)
    return np.where(std > 0, (a - mean) / np.where(std > 0, std, 1.0), 0.0)


def lasso_cd(X, y, alpha: float = 0.01, iterations: int = 1000) -> np.ndarray:
    """Cyclic coordinate descent on (1/2N)||y - Xw||^2 + alpha ||w||_1."""
    N, p = X.shape
    gram = X.T @ X / N
    corr = X.T @ y / N
    w = np.zeros(p)
    diag = np.diag(gram)
    for _ in range(iterations):
        for j in range(p):
            if diag[j] <= 0:
                continue
            rho = corr[j] - gram[j] @ w + diag[j] * w[j]
            w[j] = np.sign(rho) * max(abs(rho) - alpha, 0.0) / diag[j]
    return w


def dci_importance(codes, factors, alpha: float = 0.01, iterations: int = 1000) -> np.ndarray:
    X = _standardize(codes)
    Y = _standardize(factors)
    return np.abs(np.stack([lasso_cd(X, Y[:, k], alpha, iterations)
                            for k in range(Y.shape[1])], axis=1))


def dci_from_importance(R) -> tuple[float, bool]:
    """Weighted per-latent disentanglement; returns (score, all_zero flag)."""
    R = np.asarray(R, dtype=np.float64)
    total = R.sum()
    if total <= 0:
        return 0.0, True
    K = R.shape[1]
    row = R.sum(axis=1)
    score = 0.0
    for j in np.nonzero(row > 0)[0]:
        P = R[j] / row[j]
        nz = P > 0
        H = -np.sum(P[nz] * np.log(P[nz]))
        D = 1.0 - H / np.log(K) if K > 1 else 1.0
        score += (row[j] / total) * D
    return float(np.clip(score, 0.0, 1.0)), False


def dci_disentanglement(codes, factors, return_matrix: bool = False):
    codes = np.asarray(codes, dtype=np.float64)
    if codes.shape[1] < 2:
        raise ValueError("DCI needs at least 2 latent dimensions")
    factors = np.asarray(factors)
    keep = _varying_factors(factors)
    R = np.zeros((codes.shape[1], factors.shape[1]))
    if keep:
        R[:, keep] = dci_importance(codes, factors[:, keep])
    score, empty = dci_from_importance(R)
    return (score, R, empty) if return_matrix else score


# ----------------------------------------------------------------- FVM

@dataclass
class FVMResult:
    score: float
    votes: np.ndarray
    active: np.ndarray
    warning: str = ""


def _fvm(codes, batch_codes, ds, rng, votes, train_votes, batch, prune_threshold) -> FVMResult:
    if train_votes < 1 or votes - train_votes < 1:
        raise ValueError(f"insufficient votes: {votes} total, {train_votes} for training")
    m, K = codes.shape[1], ds.spec.num_factors
    std = codes.std(axis=0)
    active = std >= prune_threshold * std.mean() if std.mean() > 0 else np.zeros(m, bool)
    active &= std > 0
    table = np.zeros((m, K), dtype=np.int64)
    if not active.any():
        return FVMResult(0.0, table, active, "all latent dimensions pruned")
    inv_std = 1.0 / np.where(std > 0, std, 1.0)
    record = np.empty((votes, 2), dtype=np.int64)
    for v in range(votes):
        k = int(rng.integers(K))
        idx, _ = fixed_factor_indices(ds, k, batch, rng)
        var = (batch_codes(idx) * inv_std).var(axis=0)
        var[~active] = np.inf
        record[v] = (int(np.argmin(var)), k)
    np.add.at(table, (record[:train_votes, 0], record[:train_votes, 1]), 1)
    classifier = np.argmax(table, axis=1)
    test = record[train_votes:]
    score = float(np.mean(classifier[test[:, 0]] == test[:, 1]))
    return FVMResult(score, table, active)


def fvm_from_codes(codes, ds: FactorDataset, rng: np.random.Generator, votes: int = 800,
                   train_votes: int = 500, batch: int = 64,
                   prune_threshold: float = 0.05) -> FVMResult:
    """FactorVAE majority-vote metric on a fixed table of per-row codes.

    Equivalent to ``fvm`` for deterministic encoders.
    """
    codes = np.asarray(codes, dtype=np.float64)
    return _fvm(codes, lambda idx: codes[idx], ds, rng, votes, train_votes, batch,
                prune_threshold)


def fvm(encoder, ds: FactorDataset, rng: np.random.Generator, votes: int = 800,
        train_votes: int = 500, batch: int = 64, prune_threshold: float = 0.05) -> FVMResult:
    """``encoder`` maps a uint8 image batch to posterior-mean codes.

    The global per-dimension std comes from one pass over the dataset; each
    vote encodes its own fixed-factor batch.
    """
    codes = np.asarray(encoder(ds.images), dtype=np.float64)
    return _fvm(codes, lambda idx: np.asarray(encoder(ds.images[idx]), dtype=np.float64),
                ds, rng, votes, train_votes, batch, prune_threshold)


# ---------------------------------------------------------------- report

@dataclass
class MetricsReport:
    fvm: float
    sap: float
    mig: float
    dci: float
    seed: int
    matrices: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    config: str = ""

    SECTIONS = (("FVM", "fvm", "votes"), ("SAP", "sap", "scores"),
                ("MIG", "mig", "mutual_information"), ("DCI", "dci", "importance"))

    def scores(self) -> dict:
        return {"fvm": self.fvm, "sap": self.sap, "mig": self.mig, "dci": self.dci}

    def to_text(self) -> str:
        lines = ["# clgvae metrics report", f"seed = {self.seed}"]
        for w in self.warnings:
            lines.append(f"warning = {w}")
        for title, key, mat in self.SECTIONS:
            lines.append(f"[{title}]")
            lines.append(f"score = {getattr(self, key)!r}")
            M = self.matrices.get(mat)
            if M is not None:
                M = np.atleast_2d(M)
                lines.append(f"matrix {mat} {M.shape[0]} {M.shape[1]}")
                lines.extend(" ".join(repr(float(v)) for v in r) for r in M)
        if self.config:
            lines.append("[CONFIG]")
            lines.extend(self.config.strip().splitlines())
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        scores, matrices, warnings, config_lines = {}, {}, [], []
        seed, section = 0, None
        lines = text.splitlines()
        i = 0
        while i < len(lines):
            line = lines[i].strip()
            i += 1
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1]
                continue
            if section == "CONFIG":
                config_lines.append(line)
                continue
            if line.startswith("matrix "):
                _, name, r, c = line.split()
                rows = [[float(v) for v in lines[i + k].split()] for k in range(int(r))]
                i += int(r)
                matrices[name] = np.array(rows).reshape(int(r), int(c))
                continue
            key, value = (s.strip() for s in line.split("=", 1))
            if section is None:
                if key == "seed":
                    seed = int(value)
                elif key == "warning":
                    warnings.append(value)
            elif key == "score":
                scores[section.lower()] = float(value)
        missing = {"fvm", "sap", "mig", "dci"} - set(scores)
        if missing:
            raise ValueError(f"metrics report missing sections: {sorted(missing)}")
        config = "\n".join(config_lines) + "\n" if config_lines else ""
        return cls(seed=seed, matrices=matrices, warnings=warnings, config=config, **scores)

    def __eq__(self, other):
        if not isinstance(other, MetricsReport):
            return NotImplemented
        return self.to_text() == other.to_text()


def evaluate_codes(codes, ds: FactorDataset, seed: int, config: str = "",
                   encoder=None) -> MetricsReport:
    """All four scores, one sub-seeded stream per metric.

    With ``encoder`` given, FVM encodes its fixed-factor batches through it;
    otherwise it indexes the precomputed ``codes``.
    """
    codes = np.asarray(codes, dtype=np.float64)
    if not np.all(np.isfinite(codes)):
        raise ValueError("codes contain non-finite values")
    fvm_seq = np.random.SeedSequence(int(seed)).spawn(4)[0]
    batch_codes = (lambda idx: codes[idx]) if encoder is None else (
        lambda idx: np.asarray(encoder(ds.images[idx]), dtype=np.float64))
    jobs = {
        "fvm": lambda: _fvm(codes, batch_codes, ds, np.random.default_rng(fvm_seq),
                            800, 500, 64, 0.05),
        "sap": lambda: sap(codes, ds.factors, return_matrix=True),
        "mig": lambda: mig(codes, ds.factors, return_matrix=True),
        "dci": lambda: dci_disentanglement(codes, ds.factors, return_matrix=True),
    }
    threads = max(1, int(os.environ.get("CLG_THREADS", "1")))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=min(threads, 4)) as pool:
            futures = {k: pool.submit(f) for k, f in jobs.items()}
            out = {k: f.result() for k, f in futures.items()}
    else:
        out = {k: f() for k, f in jobs.items()}
    f_res = out["fvm"]
    sap_score, S = out["sap"]
    mig_score, MI = out["mig"]
    dci_score, R, empty = out["dci"]
    warnings = []
    if f_res.warning:
        warnings.append(f"fvm: {f_res.warning}")
    if empty:
        warnings.append("dci: all-zero importance matrix")
    return MetricsReport(f_res.score, sap_score, mig_score, dci_score, int(seed),
                         {"votes": f_res.votes, "scores": S, "mutual_information": MI,
                          "importance": R}, warnings, config)


def evaluate_all(encoder, ds: FactorDataset, seed: int, config: str = "") -> MetricsReport:
    """Encode the dataset (eval mode) and compute the four scores."""
    return evaluate_codes(encoder(ds.images), ds, seed, config, encoder=encoder)
