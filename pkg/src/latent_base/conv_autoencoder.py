"""Three-stage strided 1-D convolutional autoencoder for audio chunks.

Encoder: conv -> tanh -> conv -> tanh -> conv (single channel, length =
latent_dim). The decoder mirrors it with transposed convolutions. Paddings are
derived from the requested stage lengths so that the chunk length maps to the
latent length and back exactly.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autoencoder import _check_batch
from .errors import DimensionMismatch


def _conv(x, w, stride, pad):
    """Cross-correlation. x: (B, C, L), w: (O, C, k) -> (B, O, T)."""
    k = w.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    return np.tensordot(win, w, axes=([1, 3], [1, 2])).transpose(0, 2, 1)


def _conv_weight_grad(x, gy, k, stride, pad):
    """d<gy, conv(x, w)>/dw, shape (O, C, k)."""
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    return np.tensordot(gy, win, axes=([0, 2], [0, 2]))


def _conv_adjoint(gy, w, stride, pad, in_len):
    """Adjoint of :func:`_conv` w.r.t. its input (a transposed convolution).
    gy: (B, O, T) -> (B, C, in_len)."""
    b, _, t = gy.shape
    _, c, k = w.shape
    cols = np.tensordot(gy, w, axes=([1], [0]))  # (B, T, C, k)
    out = np.zeros((b, c, in_len + 2 * pad))
    span = stride * (t - 1) + 1
    for j in range(k):
        out[:, :, j:j + span:stride] += cols[:, :, :, j].transpose(0, 2, 1)
    return out[:, :, pad:pad + in_len]


def stage_padding(len_in, len_out, kernel, stride):
    twice = (len_out - 1) * stride + kernel - len_in
    if twice < 0 or twice % 2 or (len_in + twice - kernel) % stride:
        raise DimensionMismatch(
            f"no symmetric padding maps length {len_in} to {len_out} (kernel {kernel}, stride {stride})")
    return twice // 2


class Conv1dAutoencoder:
    """Untied conv encoder / transposed-conv decoder on fixed-length chunks.

    Args:
        chunk_len: samples per chunk (800 = 100 ms at 8 kHz).
        latent_dim: length of the single-channel code.
        channels: widths of the two hidden stages.
        kernel: filter length in samples.
        stride: stride of every stage.
        stage_lengths: lengths after the first two stages; defaults to halving.
    """

    def __init__(self, chunk_len=800, latent_dim=80, channels=(16, 32), kernel=200, stride=2,
                 stage_lengths=None, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        if stage_lengths is None:
            stage_lengths = (chunk_len // stride, chunk_len // stride**2)
        self.chunk_len = chunk_len
        self.kernel = kernel
        self.stride = stride
        self.lengths = [chunk_len, *stage_lengths, latent_dim]
        self.channels = [1, *channels, 1]
        self.pads = [stage_padding(a, b, kernel, stride) for a, b in zip(self.lengths, self.lengths[1:])]
        self._params = {}
        for i in range(3):
            c_in, c_out = self.channels[i], self.channels[i + 1]
            limit = np.sqrt(6.0 / ((c_in + c_out) * kernel))
            self._params[f"enc{i}_W"] = rng.uniform(-limit, limit, (c_out, c_in, kernel))
            self._params[f"enc{i}_b"] = np.zeros(c_out)
            # decoder stage i undoes encoder stage 2 - i
            j = 2 - i
            self._params[f"dec{i}_W"] = rng.uniform(-limit, limit, (self.channels[j + 1], self.channels[j], kernel))
            self._params[f"dec{i}_b"] = np.zeros(self.channels[j])

    @property
    def input_dim(self) -> int:
        return self.chunk_len

    @property
    def latent_dim(self) -> int:
        return self.lengths[-1]

    @property
    def params(self) -> dict:
        return self._params

    def _encode(self, x):
        p = self._params
        a = x[:, None, :]
        cache = []
        for i in range(3):
            z = _conv(a, p[f"enc{i}_W"], self.stride, self.pads[i]) + p[f"enc{i}_b"][None, :, None]
            cache.append((a, z))
            a = np.tanh(z) if i < 2 else z
        return a[:, 0, :], cache

    def _decode(self, h):
        p = self._params
        a = h[:, None, :]
        cache = []
        for i in range(3):
            j = 2 - i
            z = _conv_adjoint(a, p[f"dec{i}_W"], self.stride, self.pads[j], self.lengths[j])
            z += p[f"dec{i}_b"][None, :, None]
            cache.append((a, z))
            a = np.tanh(z) if i < 2 else z
        return a[:, 0, :], cache

    def encode(self, x):
        return self._encode(_check_batch(x, self.input_dim))[0]

    def decode(self, h):
        return self._decode(_check_batch(h, self.latent_dim))[0]

    def reconstruct(self, x):
        return self.decode(self.encode(x))

    def loss_and_grads(self, x):
        x = _check_batch(x, self.input_dim)
        p = self._params
        h, enc_cache = self._encode(x)
        xhat, dec_cache = self._decode(h)
        n = x.shape[0]
        resid = xhat - x
        loss = float(np.sum(resid**2) / n)
        grads = {}
        g = (2.0 * resid / n)[:, None, :]
        for i in reversed(range(3)):
            j = 2 - i
            a, z = dec_cache[i]
            gz = g if i == 2 else g * (1.0 - np.tanh(z) ** 2)
            grads[f"dec{i}_b"] = gz.sum(axis=(0, 2))
            grads[f"dec{i}_W"] = _conv_weight_grad(gz, a, self.kernel, self.stride, self.pads[j])
            g = _conv(gz, p[f"dec{i}_W"], self.stride, self.pads[j])
        for i in reversed(range(3)):
            a, z = enc_cache[i]
            gz = g if i == 2 else g * (1.0 - np.tanh(z) ** 2)
            grads[f"enc{i}_b"] = gz.sum(axis=(0, 2))
            grads[f"enc{i}_W"] = _conv_weight_grad(a, gz, self.kernel, self.stride, self.pads[i])
            if i:
                g = _conv_adjoint(gz, p[f"enc{i}_W"], self.stride, self.pads[i], self.lengths[i])
        return loss, grads

    def config(self) -> dict:
        return {"chunk_len": self.chunk_len, "latent_dim": self.latent_dim,
                "channels": self.channels[1:-1], "kernel": self.kernel, "stride": self.stride,
                "stage_lengths": self.lengths[1:-1]}
