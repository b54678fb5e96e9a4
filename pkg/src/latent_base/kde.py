"""Gaussian-kernel density scores of a test set under model samples."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionMismatch

CSV_COLUMNS = ("model_name", "kde_score", "log_kde_score", "n_test", "n_samples", "bandwidth_variance")


@dataclass(frozen=True)
class KdeConfig:
    bandwidth_variance: float = 0.1
    samples_per_batch: int = 1000

    def __post_init__(self):
        if not self.bandwidth_variance > 0:
            raise ValueError("bandwidth_variance must be positive")


@dataclass(frozen=True)
class KdeResult:
    """``score`` is the average kernel density over all (test, sample) pairs.
    ``log_score`` is the mean over test points of the log of their average
    kernel density. ``underflow`` marks a ``score`` that rounded to zero."""

    score: float
    log_score: float
    underflow: bool
    n_test: int
    n_samples: int
    bandwidth_variance: float


def _log_kernels(test, samples, var, block=512):
    d = test.shape[1]
    norm = -0.5 * d * np.log(2.0 * np.pi * var)
    s2 = np.sum(samples**2, axis=1)
    rows = []
    for start in range(0, len(test), block):
        t = test[start:start + block]
        sq = np.sum(t**2, axis=1)[:, None] - 2.0 * t @ samples.T + s2[None]
        rows.append(norm - 0.5 * np.maximum(sq, 0.0) / var)
    return np.concatenate(rows)


def kde_score(test_set, samples, cfg: KdeConfig = KdeConfig()) -> KdeResult:
    test = np.atleast_2d(np.asarray(test_set, dtype=np.float64))
    samp = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if test.size == 0 or samp.size == 0:
        raise ValueError("test set and samples must be non-empty")
    if test.shape[1] != samp.shape[1]:
        raise DimensionMismatch(f"test dim {test.shape[1]} != sample dim {samp.shape[1]}")
    lk = _log_kernels(test, samp, cfg.bandwidth_variance)
    n, m = lk.shape
    per_test = logsumexp(lk, axis=1) - np.log(m)
    log_mean = logsumexp(per_test) - np.log(n)
    score = float(np.exp(log_mean))
    return KdeResult(score, float(per_test.mean()), score == 0.0, n, m, cfg.bandwidth_variance)


def kde_compare(test_set, sample_sets: dict, cfg: KdeConfig = KdeConfig()) -> list:
    """Score every named sample set; rows sorted best first."""
    rows = []
    for name, samples in sample_sets.items():
        r = kde_score(test_set, samples, cfg)
        rows.append({"model_name": name, "kde_score": r.score, "log_kde_score": r.log_score,
                     "n_test": r.n_test, "n_samples": r.n_samples,
                     "bandwidth_variance": r.bandwidth_variance})
    rows.sort(key=lambda r: (-r["kde_score"], -r["log_kde_score"], r["model_name"]))
    return rows


def write_kde_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([r["model_name"], repr(float(r["kde_score"])), repr(float(r["log_kde_score"])),
                        r["n_test"], r["n_samples"], repr(float(r["bandwidth_variance"]))])
