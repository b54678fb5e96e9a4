"""Hidden Markov model with diagonal-Gaussian emissions over latent frames.

The forward/backward recursions are scaled per step (normalizers accumulated
in log space) so sequences of 10⁴+ frames stay finite.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .gmm import EmResult, kmeans_pp

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-6
DEGENERATE_OCCUPANCY = 1e-8
LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GaussianHMM:
    initial: np.ndarray  # (S,)
    transitions: np.ndarray  # (S, S), row-stochastic
    emission_means: np.ndarray  # (S, K)
    emission_vars: np.ndarray  # (S, K)

    def __post_init__(self):
        self.initial = np.asarray(self.initial, dtype=np.float64)
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        self.emission_means = np.atleast_2d(np.asarray(self.emission_means, dtype=np.float64))
        self.emission_vars = np.atleast_2d(np.asarray(self.emission_vars, dtype=np.float64))
        s, k = self.emission_means.shape
        if (self.initial.shape != (s,) or self.transitions.shape != (s, s)
                or self.emission_vars.shape != (s, k)):
            raise DimensionMismatch("inconsistent HMM parameter shapes")
        if abs(self.initial.sum() - 1.0) > 1e-12 or np.any(np.abs(self.transitions.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("initial/transition probabilities must be normalized")
        if np.any(self.emission_vars < 1e-8):
            raise ValueError("emission variances must be >= 1e-8")

    @property
    def n_states(self) -> int:
        return self.emission_means.shape[0]

    @property
    def dim(self) -> int:
        return self.emission_means.shape[1]

    def emission_log_pdf(self, frames):
        """``log N(frame_t; μ_s, diag σ²_s)`` for every frame and state, ``(T, S)``."""
        x = np.atleast_2d(np.asarray(frames, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise DimensionMismatch(f"frame dim {x.shape[1]} != HMM dim {self.dim}")
        inv = 1.0 / self.emission_vars
        quad = (x**2) @ inv.T - 2.0 * x @ (self.emission_means * inv).T + np.sum(self.emission_means**2 * inv, axis=1)
        norm = np.sum(np.log(self.emission_vars), axis=1) + self.dim * LOG_2PI
        return -0.5 * (quad + norm)

    def _forward_backward(self, log_b, need_backward=True):
        t_len, s = log_b.shape
        peak = log_b.max(axis=1, keepdims=True)
        b = np.exp(log_b - peak)
        alpha = np.empty((t_len, s))
        scale = np.empty(t_len)
        a = self.initial * b[0]
        scale[0] = a.sum()
        alpha[0] = a / scale[0]
        for t in range(1, t_len):
            a = (alpha[t - 1] @ self.transitions) * b[t]
            scale[t] = a.sum()
            alpha[t] = a / scale[t]
        with np.errstate(divide="ignore"):
            loglik = float(np.sum(np.log(scale)) + peak.sum())
        if not need_backward:
            return loglik, alpha, None, scale, b
        beta = np.empty((t_len, s))
        beta[-1] = 1.0
        for t in range(t_len - 2, -1, -1):
            beta[t] = self.transitions @ (b[t + 1] * beta[t + 1]) / scale[t + 1]
        return loglik, alpha, beta, scale, b

    def log_likelihood(self, frames) -> float:
        log_b = self.emission_log_pdf(frames)
        return self._forward_backward(log_b, need_backward=False)[0]

    def sample(self, rng: np.random.Generator, n_frames: int):
        """Ancestral sampling; returns ``(frames, states)``."""
        if n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        states = np.empty(n_frames, dtype=int)
        states[0] = rng.choice(self.n_states, p=self.initial)
        for t in range(1, n_frames):
            states[t] = rng.choice(self.n_states, p=self.transitions[states[t - 1]])
        noise = rng.standard_normal((n_frames, self.dim))
        frames = self.emission_means[states] + noise * np.sqrt(self.emission_vars[states])
        return frames, states


def hmm_log_likelihood(hmm: GaussianHMM, seq) -> float:
    return hmm.log_likelihood(seq)


def hmm_sample(hmm: GaussianHMM, rng, n_frames: int):
    return hmm.sample(rng, n_frames)


def _normalize_rows(a):
    a = a / a.sum(axis=-1, keepdims=True)
    # second pass squeezes the row-sum error to a few ulps
    return a / a.sum(axis=-1, keepdims=True)


def init_hmm(frames, n_states: int, rng: np.random.Generator) -> GaussianHMM:
    """k-means emission means, pooled variances, near-uniform dynamics with
    Dirichlet(1) jitter."""
    means, _ = kmeans_pp(frames, n_states, rng)
    var = np.maximum(frames.var(axis=0), VAR_FLOOR)
    uniform = np.full(n_states, 1.0 / n_states)
    initial = _normalize_rows(0.5 * uniform + 0.5 * rng.dirichlet(np.ones(n_states)))
    trans = _normalize_rows(0.5 * uniform + 0.5 * rng.dirichlet(np.ones(n_states), size=n_states))
    return GaussianHMM(initial, trans, means, np.repeat(var[None], n_states, axis=0))


def _as_sequences(sequences):
    seqs = [np.atleast_2d(np.asarray(s, dtype=np.float64)) for s in sequences]
    if not seqs or any(len(s) == 0 for s in seqs):
        raise ValueError("every sequence must be non-empty")
    dims = {s.shape[1] for s in seqs}
    if len(dims) != 1:
        raise DimensionMismatch(f"sequences have mixed frame dims {sorted(dims)}")
    return seqs


def hmm_fit_baum_welch(sequences, n_states: int, rng: np.random.Generator, max_iters: int = 100,
                       tol: float = 1e-6, init: GaussianHMM | None = None) -> EmResult:
    """Baum-Welch over one or more frame sequences (statistics are summed).

    ``trace`` records the total log-likelihood of every parameter set visited.
    States whose occupancy falls below 1e-8 get their emission re-seeded at a
    random frame (logged).
    """
    seqs = _as_sequences(sequences)
    pooled = np.concatenate(seqs)
    if len(pooled) < n_states:
        raise ValueError(f"need at least {n_states} frames, got {len(pooled)}")
    hmm = init if init is not None else init_hmm(pooled, n_states, rng)
    if hmm.dim != pooled.shape[1]:
        raise DimensionMismatch("initial HMM has the wrong dimension")

    trace = []
    converged = False
    it = 0
    for it in range(max_iters + 1):
        s = hmm.n_states
        start = np.zeros(s)
        trans = np.zeros((s, s))
        occ = np.zeros(s)
        first = np.zeros((s, hmm.dim))
        second = np.zeros((s, hmm.dim))
        total = 0.0
        for x in seqs:
            log_b = hmm.emission_log_pdf(x)
            ll, alpha, beta, scale, b = hmm._forward_backward(log_b)
            total += ll
            gamma = alpha * beta
            gamma /= gamma.sum(axis=1, keepdims=True)
            start += gamma[0]
            if len(x) > 1:
                trans += hmm.transitions * (alpha[:-1].T @ (b[1:] * beta[1:] / scale[1:, None]))
            occ += gamma.sum(axis=0)
            first += gamma.T @ x
            second += gamma.T @ (x**2)
        trace.append(total)
        if it > 0 and abs(trace[-1] - trace[-2]) <= tol * abs(trace[-2]):
            converged = True
            break
        if it == max_iters:
            break

        means = np.empty_like(hmm.emission_means)
        var = np.empty_like(hmm.emission_vars)
        for k in range(s):
            if occ[k] < DEGENERATE_OCCUPANCY:
                log.warning("HMM state %d is unoccupied; re-seeding its emission", k)
                means[k] = pooled[rng.integers(len(pooled))]
                var[k] = np.maximum(pooled.var(axis=0), VAR_FLOOR)
                continue
            means[k] = first[k] / occ[k]
            var[k] = np.maximum(second[k] / occ[k] - means[k] ** 2, VAR_FLOOR)
        row = trans.sum(axis=1, keepdims=True)
        # states never left keep their old outgoing distribution
        trans = np.where(row > 0, trans / np.where(row > 0, row, 1.0), hmm.transitions)
        hmm = GaussianHMM(_normalize_rows(start / start.sum()), _normalize_rows(trans), means, var)
    return EmResult(hmm, trace, converged, it)
