"""Full-covariance Gaussian mixture fitted by EM."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionMismatch
from .numerics import cholesky, solve_lower, solve_spd

log = logging.getLogger(__name__)

COV_JITTER = 1e-6
EMPTY_MASS = 1e-8
LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GaussianMixture:
    weights: np.ndarray  # (M,)
    means: np.ndarray  # (M, K)
    covariances: np.ndarray  # (M, K, K)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.covariances = np.asarray(self.covariances, dtype=np.float64)
        m, k = self.means.shape
        if self.weights.shape != (m,) or self.covariances.shape != (m, k, k):
            raise DimensionMismatch("inconsistent mixture parameter shapes")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must lie on the simplex")
        self._factors = [cholesky(c) for c in self.covariances]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @classmethod
    def standard_normal(cls, dim: int):
        return cls(np.ones(1), np.zeros((1, dim)), np.eye(dim)[None])

    def component_log_pdf(self, h):
        """Per-component ``log w_m + log N(h; μ_m, Σ_m)``, shape ``(N, M)``."""
        h = np.atleast_2d(np.asarray(h, dtype=np.float64))
        if h.shape[1] != self.dim:
            raise DimensionMismatch(f"point dim {h.shape[1]} != mixture dim {self.dim}")
        out = np.empty((h.shape[0], self.n_components))
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        for m, f in enumerate(self._factors):
            white = solve_lower(f, (h - self.means[m]).T)
            half_logdet = np.sum(np.log(np.diag(f.lower)))
            out[:, m] = log_w[m] - 0.5 * (self.dim * LOG_2PI + np.sum(white**2, axis=0)) - half_logdet
        return out

    def log_pdf(self, h):
        scalar = np.ndim(h) == 1
        val = logsumexp(self.component_log_pdf(h), axis=1)
        return float(val[0]) if scalar else val

    def responsibilities(self, h):
        lp = self.component_log_pdf(h)
        return np.exp(lp - logsumexp(lp, axis=1, keepdims=True))

    def grad_log_pdf(self, h):
        """∇_h log p(h) for a batch of points, shape ``(N, K)``."""
        h = np.atleast_2d(np.asarray(h, dtype=np.float64))
        resp = self.responsibilities(h)
        g = np.zeros_like(h)
        for m, f in enumerate(self._factors):
            g -= resp[:, m : m + 1] * solve_spd(f, (h - self.means[m]).T).T
        return g

    def sample(self, rng: np.random.Generator, n: int):
        """Draw ``n`` points; returns ``(points, component_labels)``."""
        if n < 1:
            raise ValueError("n must be >= 1")
        labels = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        points = np.empty((n, self.dim))
        for m, f in enumerate(self._factors):
            idx = labels == m
            points[idx] = self.means[m] + z[idx] @ f.lower.T
        return points, labels


def gmm_log_pdf(gmm: GaussianMixture, h):
    return gmm.log_pdf(h)


def gmm_sample(gmm: GaussianMixture, rng, n: int):
    return gmm.sample(rng, n)


def kmeans_pp(x, m: int, rng: np.random.Generator, n_iter: int = 10):
    """k-means++ seeding followed by ``n_iter`` Lloyd iterations.

    Returns ``(centers, labels)``.
    """
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, m):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    centers = np.array(centers)
    labels = np.zeros(n, dtype=int)
    for _ in range(n_iter):
        dist = (centers**2).sum(axis=1) - 2.0 * x @ centers.T
        labels = dist.argmin(axis=1)
        for k in range(m):
            members = x[labels == k]
            if len(members):
                centers[k] = members.mean(axis=0)
    return centers, labels


def _sample_cov(x):
    diff = x - x.mean(axis=0)
    cov = diff.T @ diff / x.shape[0]
    return 0.5 * (cov + cov.T) + COV_JITTER * np.eye(x.shape[1])


def init_gmm(x, m: int, rng: np.random.Generator) -> GaussianMixture:
    """k-means++ means, cluster-fraction weights, global covariance for every
    component."""
    centers, labels = kmeans_pp(x, m, rng)
    counts = np.bincount(labels, minlength=m).astype(float) + 1.0
    cov = _sample_cov(x)
    return GaussianMixture(counts / counts.sum(), centers, np.repeat(cov[None], m, axis=0))


@dataclass
class EmResult:
    model: object
    trace: list
    converged: bool
    n_iter: int


def gmm_fit_em(embeddings, n_components: int, rng: np.random.Generator, max_iters: int = 200,
               tol: float = 1e-6, init: GaussianMixture | None = None) -> EmResult:
    """Maximum-likelihood mixture fit by EM.

    ``trace`` holds the total log-likelihood of the data under every parameter
    set visited, starting with the initialization. Iteration stops once the
    relative improvement drops below ``tol``. A component whose responsibility
    mass falls under 1e-8 is re-seeded at a random data point (logged).
    """
    x = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    n, k = x.shape
    if n < n_components:
        raise ValueError(f"need at least {n_components} points, got {n}")
    gmm = init if init is not None else init_gmm(x, n_components, rng)
    if gmm.dim != k:
        raise DimensionMismatch("initial mixture has the wrong dimension")
    global_cov = _sample_cov(x)
    eye = np.eye(k)

    lp = gmm.component_log_pdf(x)
    norm = logsumexp(lp, axis=1, keepdims=True)
    trace = [float(norm.sum())]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        resp = np.exp(lp - norm)
        mass = resp.sum(axis=0)
        means = np.empty_like(gmm.means)
        covs = np.empty_like(gmm.covariances)
        for m in range(n_components):
            if mass[m] < EMPTY_MASS:
                log.warning("EM component %d is empty; re-seeding from a random point", m)
                means[m] = x[rng.integers(n)]
                covs[m] = global_cov
                mass[m] = n / n_components
                continue
            means[m] = resp[:, m] @ x / mass[m]
            diff = x - means[m]
            c = (resp[:, m, None] * diff).T @ diff / mass[m]
            covs[m] = 0.5 * (c + c.T) + COV_JITTER * eye
        weights = mass / mass.sum()
        gmm = GaussianMixture(weights, means, covs)
        lp = gmm.component_log_pdf(x)
        norm = logsumexp(lp, axis=1, keepdims=True)
        ll = float(norm.sum())
        prev = trace[-1]
        trace.append(ll)
        if abs(ll - prev) <= tol * abs(prev):
            converged = True
            break
    return EmResult(gmm, trace, converged, it)
