"""Implicit-model densities and direct likelihood training.

For an invertible mapping ``x = f(h)`` with base density ``p0``,

    log p(x) = log p0(f⁻¹(x)) - log|det ∂f/∂h| evaluated at h = f⁻¹(x).

``net_log_volume`` returns the forward expansion ``log|det ∂f/∂h|``, so it
is subtracted here. The *proxy* density drops that term and is the only
option for mappings without a tractable Jacobian.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .autoencoder import Adam, TiedInvertibleAutoencoder
from .errors import DimensionMismatch, ExactVolumeUnavailable, NonFiniteObjective
from .gmm import GaussianMixture, gmm_fit_em
from .hmm import GaussianHMM
from .invertible_net import InverseCache, InvertibleNet

log = logging.getLogger(__name__)


@dataclass
class ImplicitModel:
    """A mapping (invertible net or autoencoder) paired with a base distribution."""

    mapping: object
    base: object

    def __post_init__(self):
        if self.base.dim != self.mapping.latent_dim:
            raise DimensionMismatch(
                f"base dim {self.base.dim} != mapping latent dim {self.mapping.latent_dim}")

    @property
    def net(self) -> InvertibleNet | None:
        """The invertible net behind the mapping, if there is one."""
        if isinstance(self.mapping, InvertibleNet):
            return self.mapping
        if isinstance(self.mapping, TiedInvertibleAutoencoder):
            return self.mapping.net
        return None

    @property
    def exact_volume(self) -> bool:
        return self.net is not None

    def encode(self, x):
        net = self.net
        return net.inverse(x) if net is not None else self.mapping.encode(x)

    def decode(self, h):
        net = self.net
        return net.forward(h) if net is not None else self.mapping.decode(h)

    def sample(self, rng, n):
        """``h ~ p0``, ``x = f(h)``; returns ``(x, labels)``.

        Labels are mixture components, or the state path for an HMM base (in
        which case ``n`` is the number of consecutive frames).
        """
        h, labels = self.base.sample(rng, n)
        return self.decode(h), labels


def _squeeze(values, like):
    return float(values[0]) if np.ndim(like) == 1 else values


def model_log_pdf(model: ImplicitModel, x):
    """Exact log-density of observation(s) ``x``."""
    net = model.net
    if net is None:
        raise ExactVolumeUnavailable(f"{type(model.mapping).__name__} has no exact volume term")
    if not isinstance(model.base, GaussianMixture):
        raise TypeError("model_log_pdf needs a mixture base; use sequence_log_pdf for HMMs")
    xb = np.atleast_2d(x)
    h = net.inverse(xb)
    return _squeeze(model.base.log_pdf(h) - net.log_volume(h), x)


def proxy_log_pdf(model: ImplicitModel, x):
    """Base log-density of the embedding, without the volume term."""
    if not isinstance(model.base, GaussianMixture):
        raise TypeError("proxy_log_pdf needs a mixture base")
    xb = np.atleast_2d(x)
    return _squeeze(model.base.log_pdf(model.encode(xb)), x)


@dataclass
class SequenceLogPdf:
    value: float
    exact: bool  # False: volume terms omitted (proxy)


def sequence_log_pdf(model: ImplicitModel, chunks) -> SequenceLogPdf:
    """Log-density of an observation sequence under an HMM base.

    Frames are encoded independently; the HMM supplies the temporal factor.
    Per-frame volume terms are included when the mapping is invertible.
    """
    if not isinstance(model.base, GaussianHMM):
        raise TypeError("sequence_log_pdf needs an HMM base")
    frames = model.encode(np.atleast_2d(chunks))
    value = model.base.log_likelihood(frames)
    net = model.net
    if net is None:
        return SequenceLogPdf(float(value), False)
    return SequenceLogPdf(float(value - np.sum(net.log_volume(frames))), True)


def implicit_objective(net: InvertibleNet, base: GaussianMixture, x) -> float:
    """Mean exact log-likelihood of a batch."""
    return float(np.mean(model_log_pdf(ImplicitModel(net, base), np.atleast_2d(x))))


def implicit_objective_and_grad(net: InvertibleNet, base: GaussianMixture, x):
    """Mean exact log-likelihood and its gradient w.r.t. the net's parameters.

    The volume term is differentiated along the inverse pass, which matches
    :meth:`InvertibleNet.log_volume` exactly for square nets.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    cache = InverseCache()
    h = net.inverse(x, cache)
    value = float(np.mean(base.log_pdf(h) - net.log_volume(h)))
    grads = net.inverse_backward(cache, base.grad_log_pdf(h), volume_weight=1.0)
    n = x.shape[0]
    return value, {k: g / n for k, g in grads.items()}


@dataclass
class ImplicitTrainResult:
    net: InvertibleNet
    base: GaussianMixture
    trace: list  # mean log-likelihood over the data after each epoch


def train_implicit_ml(net: InvertibleNet, base: GaussianMixture, data, rng: np.random.Generator,
                      learn_base: bool = False, epochs: int = 200, batch_size: int | None = None,
                      lr: float = 1e-2, refit_every: int = 5, em_iters: int = 50) -> ImplicitTrainResult:
    """Gradient ascent on the exact likelihood over the net's parameters.

    With ``learn_base`` the mixture is refitted by EM on the current
    embeddings before training and then every ``refit_every`` epochs
    (warm-started from the current mixture); otherwise it stays frozen.
    """
    if not net.is_square:
        raise DimensionMismatch("direct likelihood training needs a square net")
    x = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if x.shape[1] != net.output_dim:
        raise DimensionMismatch(f"data dim {x.shape[1]} != net dim {net.output_dim}")
    n = x.shape[0]
    batch_size = batch_size or n
    opt = Adam(lr=lr)
    params = net.params
    trace = []

    def refit(current):
        res = gmm_fit_em(net.inverse(x), current.n_components, rng, max_iters=em_iters, init=current)
        return res.model

    if learn_base:
        base = refit(base)
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            value, grads = implicit_objective_and_grad(net, base, x[order[start:start + batch_size]])
            if not np.isfinite(value):
                raise NonFiniteObjective(f"objective diverged in epoch {epoch}", trace)
            opt.update(params, grads, ascent=True)
        if learn_base and (epoch + 1) % refit_every == 0:
            base = refit(base)
        value = implicit_objective(net, base, x)
        if not np.isfinite(value):
            raise NonFiniteObjective(f"objective diverged in epoch {epoch}", trace)
        trace.append(value)
    return ImplicitTrainResult(net, base, trace)
