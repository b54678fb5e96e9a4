"""Stage-one training: autoencoders with hand-written backprop and Adam.

Every autoencoder here exposes the same small surface:

* ``input_dim`` / ``latent_dim``
* ``encode(x)`` / ``decode(h)`` on batches (rows are items)
* ``params`` -- dict of live parameter arrays
* ``loss_and_grads(x)`` -- mean squared reconstruction error and its gradient
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DimensionMismatch, NonFiniteLoss, ShapeMismatch
from .invertible_net import InverseCache, InvertibleNet, glorot_uniform

ACTIVATIONS = ("tanh", "sigmoid", "relu", "identity")


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return expit(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(name, z, a):
    if name == "tanh":
        return 1.0 - a**2
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "relu":
        return (z > 0).astype(np.float64)
    return np.ones_like(z)


def _check_batch(x, dim):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValueError("batch is empty")
    if x.shape[1] != dim:
        raise DimensionMismatch(f"batch dim {x.shape[1]} != model input dim {dim}")
    return x


class DenseAutoencoder:
    """Untied fully-connected encoder/decoder.

    ``encoder_layers`` and ``decoder_layers`` are lists of
    ``(weight, bias, activation)`` with weights shaped ``(out, in)``.
    """

    def __init__(self, encoder_layers, decoder_layers):
        self.encoder_layers = [(np.asarray(w, float), np.asarray(b, float), a) for w, b, a in encoder_layers]
        self.decoder_layers = [(np.asarray(w, float), np.asarray(b, float), a) for w, b, a in decoder_layers]
        for _, _, a in self.encoder_layers + self.decoder_layers:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        chain = self.encoder_layers + self.decoder_layers
        for (w0, _, _), (w1, _, _) in zip(chain, chain[1:]):
            if w0.shape[0] != w1.shape[1]:
                raise DimensionMismatch("layer chain is inconsistent")
        if self.encoder_layers[-1][0].shape[0] != self.decoder_layers[0][0].shape[1]:
            raise DimensionMismatch("encoder output must match decoder input")

    @classmethod
    def build(cls, input_dim, hidden_dims, latent_dim, rng, hidden_act="tanh",
              latent_act="identity", output_act="sigmoid"):
        """Mirror-image MLP ``input -> hidden... -> latent -> ...hidden -> input``."""
        enc_dims = [input_dim, *hidden_dims, latent_dim]
        dec_dims = enc_dims[::-1]

        def stack(dims, last_act):
            layers = []
            for i, (a, b) in enumerate(zip(dims, dims[1:])):
                act = last_act if i == len(dims) - 2 else hidden_act
                layers.append((glorot_uniform(rng, a, b), np.zeros(b), act))
            return layers

        return cls(stack(enc_dims, latent_act), stack(dec_dims, output_act))

    @property
    def input_dim(self) -> int:
        return self.encoder_layers[0][0].shape[1]

    @property
    def latent_dim(self) -> int:
        return self.encoder_layers[-1][0].shape[0]

    @property
    def _all_layers(self):
        named = [(f"enc{i}", layer) for i, layer in enumerate(self.encoder_layers)]
        named += [(f"dec{i}", layer) for i, layer in enumerate(self.decoder_layers)]
        return named

    @property
    def params(self) -> dict:
        out = {}
        for name, (w, b, _) in self._all_layers:
            out[f"{name}_W"] = w
            out[f"{name}_b"] = b
        return out

    @staticmethod
    def _run(layers, x):
        for w, b, act in layers:
            x = _act(act, x @ w.T + b)
        return x

    def encode(self, x):
        return self._run(self.encoder_layers, _check_batch(x, self.input_dim))

    def decode(self, h):
        return self._run(self.decoder_layers, _check_batch(h, self.latent_dim))

    def reconstruct(self, x):
        return self.decode(self.encode(x))

    def loss_and_grads(self, x):
        x = _check_batch(x, self.input_dim)
        layers = self._all_layers
        inputs, pre, outs = [], [], []
        a = x
        for _, (w, b, act) in layers:
            inputs.append(a)
            z = a @ w.T + b
            a = _act(act, z)
            pre.append(z)
            outs.append(a)
        resid = a - x
        n = x.shape[0]
        loss = float(np.sum(resid**2) / n)
        g = 2.0 * resid / n
        grads = {}
        for i in reversed(range(len(layers))):
            name, (w, _, act) = layers[i]
            gz = g * _act_grad(act, pre[i], outs[i])
            grads[f"{name}_W"] = gz.T @ inputs[i]
            grads[f"{name}_b"] = gz.sum(axis=0)
            g = gz @ w
        return loss, grads


class TiedInvertibleAutoencoder:
    """Autoencoder whose encoder is the exact (pseudo-)inverse of an
    :class:`InvertibleNet` decoder; both directions share ``W`` and ``b``."""

    def __init__(self, net: InvertibleNet):
        self.net = net

    @property
    def input_dim(self) -> int:
        return self.net.output_dim

    @property
    def latent_dim(self) -> int:
        return self.net.input_dim

    @property
    def params(self) -> dict:
        return self.net.params

    def encode(self, x):
        return self.net.inverse(_check_batch(x, self.input_dim))

    def decode(self, h):
        return self.net.forward(_check_batch(h, self.latent_dim))

    def reconstruct(self, x):
        return self.decode(self.encode(x))

    def loss_and_grads(self, x):
        x = _check_batch(x, self.input_dim)
        cache = InverseCache()
        h = self.net.inverse(x, cache)
        xhat = self.net.forward(h)
        resid = xhat - x
        n = x.shape[0]
        loss = float(np.sum(resid**2) / n)
        g_fwd, g_h = self.net.forward_backward(h, 2.0 * resid / n)
        g_inv = self.net.inverse_backward(cache, g_h)
        # x itself is data; its direct gradient is dropped
        return loss, {k: g_fwd[k] + g_inv[k] for k in g_fwd}


def reconstruction_loss(model, batch) -> float:
    """Mean over the batch of the squared L2 reconstruction error."""
    x = _check_batch(batch, model.input_dim)
    return float(np.sum((model.decode(model.encode(x)) - x) ** 2) / x.shape[0])


def backprop_gradients(model, batch) -> dict:
    loss, grads = model.loss_and_grads(batch)
    if not np.isfinite(loss):
        raise NonFiniteLoss("reconstruction loss is not finite")
    return grads


@dataclass
class Adam:
    """Adam with bias correction. Updates parameter arrays in place."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def update(self, params: dict, grads: dict, ascent: bool = False):
        for name, g in grads.items():
            if name not in params or np.shape(params[name]) != np.shape(g):
                raise ShapeMismatch(f"gradient {name!r} does not match its parameter")
        self.step += 1
        t = self.step
        for name, g in grads.items():
            if ascent:
                g = -g
            m = self.first_moment.get(name)
            if m is None:
                m = self.first_moment[name] = np.zeros_like(g)
                self.second_moment[name] = np.zeros_like(g)
            v = self.second_moment[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(state: Adam, params: dict, grads: dict):
    state.update(params, grads)
    return params, state


@dataclass
class TrainResult:
    initial_loss: float
    history: list  # full-dataset loss after each epoch


def train_stage1(model, dataset, epochs: int, rng: np.random.Generator, batch_size: int = 128,
                 optimizer: Adam | None = None, callback=None) -> TrainResult:
    """Minimize reconstruction error with minibatch Adam.

    The shuffle order comes from ``rng`` only, so equal seeds give bitwise
    equal histories. Raises :class:`NonFiniteLoss` (carrying the history so
    far) if a batch loss blows up.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    x = _check_batch(dataset, model.input_dim)
    opt = optimizer or Adam()
    params = model.params
    initial = reconstruction_loss(model, x)
    history = []
    n = x.shape[0]
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            loss, grads = model.loss_and_grads(x[order[start:start + batch_size]])
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NonFiniteLoss(f"loss diverged in epoch {epoch}", history)
            opt.update(params, grads)
        epoch_loss = reconstruction_loss(model, x)
        if not np.isfinite(epoch_loss):
            raise NonFiniteLoss(f"loss diverged in epoch {epoch}", history)
        history.append(epoch_loss)
        if callback is not None:
            callback(epoch, epoch_loss)
    return TrainResult(initial, history)


def encode_dataset(model, dataset):
    """Latent code of every item, in order."""
    return model.encode(dataset)
