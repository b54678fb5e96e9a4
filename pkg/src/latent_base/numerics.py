"""Dense SPD linear algebra and seeded random streams.

Everything is float64. Matrices are plain ``numpy.ndarray`` objects; the
factorization wrapper only exists so callers can't mix up a covariance with
its Cholesky factor.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .errors import DimensionMismatch, NotPositiveDefinite

SYMMETRY_RTOL = 1e-10


@dataclass(frozen=True)
class SpdFactorization:
    """Lower Cholesky factor of an SPD matrix."""

    lower: np.ndarray

    @property
    def dim(self) -> int:
        return self.lower.shape[0]


def cholesky(m) -> SpdFactorization:
    """Factorize a symmetric positive-definite matrix as ``L @ L.T``.

    Raises:
        DimensionMismatch: ``m`` is not square.
        NotPositiveDefinite: ``m`` is asymmetric or has a non-positive pivot.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"cholesky needs a square matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    scale = max(np.abs(m).max(), np.finfo(float).tiny)
    if np.abs(m - m.T).max() > SYMMETRY_RTOL * scale:
        raise NotPositiveDefinite("matrix is not symmetric")
    try:
        lower = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    if not np.all(np.diag(lower) > 0):
        raise NotPositiveDefinite("zero pivot")
    return SpdFactorization(lower)


def log_det_spd(f: SpdFactorization) -> float:
    return float(2.0 * np.sum(np.log(np.diag(f.lower))))


def solve_spd(f: SpdFactorization, b):
    """Solve ``m @ x = b``; ``b`` may be a vector or a matrix of columns."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != f.dim:
        raise DimensionMismatch(f"rhs has {b.shape[0]} rows, factor has dim {f.dim}")
    return sla.cho_solve((f.lower, True), b, check_finite=False)


def solve_lower(f: SpdFactorization, b):
    """``L⁻¹ b`` (whitening); used for Mahalanobis terms."""
    return sla.solve_triangular(f.lower, b, lower=True, check_finite=False)


def sample_gaussian(rng: np.random.Generator, mean, cov_factor: SpdFactorization, size=None):
    """Draw ``mean + L z`` with standard-normal ``z``.

    With ``size=None`` a single vector is returned, otherwise an array of shape
    ``(size, dim)``.
    """
    mean = np.asarray(mean, dtype=np.float64)
    if mean.shape != (cov_factor.dim,):
        raise DimensionMismatch(f"mean has shape {mean.shape}, factor has dim {cov_factor.dim}")
    if size is None:
        return mean + cov_factor.lower @ rng.standard_normal(cov_factor.dim)
    z = rng.standard_normal((size, cov_factor.dim))
    return mean + z @ cov_factor.lower.T


def make_rng(seed: int, stream: str | None = None) -> np.random.Generator:
    """Seeded PCG64 generator, optionally split off into a named sub-stream.

    Named streams (``"ae"``, ``"base"``, ``"sample"``...) are independent of each
    other, so rerunning one stage never shifts another stage's draws.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    if stream is not None:
        words.append(zlib.crc32(stream.encode("utf-8")))
    return np.random.default_rng(np.random.SeedSequence(words))


def gram_factor(weight) -> SpdFactorization:
    """Factorize ``WᵀW`` with a relative 1e-10 trace jitter.

    Rank-deficient ``W`` is rejected: if the smallest pivot is not clearly
    above the jitter, the Gram matrix is numerically singular.
    """
    weight = np.asarray(weight, dtype=np.float64)
    if weight.shape[0] < weight.shape[1]:
        raise DimensionMismatch(f"weight {weight.shape} has fewer rows than columns")
    gram = weight.T @ weight
    d = gram.shape[0]
    jitter = 1e-10 * np.trace(gram) / d
    if not jitter > 0:
        raise NotPositiveDefinite("WᵀW is zero")
    f = cholesky(gram + jitter * np.eye(d))
    if np.min(np.diag(f.lower)) ** 2 < 10.0 * jitter:
        raise NotPositiveDefinite("WᵀW is rank deficient")
    return f
