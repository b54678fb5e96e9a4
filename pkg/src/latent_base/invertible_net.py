"""Invertible perceptron: pseudo-invertible linear layers and piecewise
nonlinearities that switch to a linear tail where the original curve saturates.

The forward map is ``h -> act_L(W_L ... act_1(W_1 h + b_1) ... + b_L)``. Linear
layers may be rectangular (``out_dim >= in_dim``); they are inverted with the
least-squares pseudo-inverse ``(WᵀW)⁻¹Wᵀ(x - b)``, which is exact on the
layer's range.

Sign convention for volumes: :func:`net_log_volume` returns the log-volume
*expansion* of the forward map, ``log|det ∂f/∂h|`` (for rectangular layers
``½ log det WᵀW``). A density pushed through the net therefore *subtracts* it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from .errors import DimensionMismatch
from .numerics import SpdFactorization, gram_factor, log_det_spd, solve_spd

TANH = "tanh"
SIGMOID = "sigmoid"
DEFAULT_SLOPE = 0.01


def _log_sech2(t):
    # log(1 - tanh²t), stable for large |t|
    a = np.abs(t)
    return 2.0 * (np.log(2.0) - a - np.log1p(np.exp(-2.0 * a)))


class InvertibleNonlinearity:
    """tanh or sigmoid with linear tails of slope ``slope_c`` beyond ``±knot``.

    The knot is where the curve's own slope drops to ``slope_c``, and the tail
    offsets are chosen for continuity, so the function is C¹ and strictly
    increasing on the whole real line.

    Tails: ``slope_c * t + offset_b`` above the upper knot and
    ``slope_c * t + (2 * center - offset_b)`` below the lower one, where
    ``center`` is 0 for tanh and 0.5 for sigmoid (the curves are odd about it).
    """

    def __init__(self, kind: str = TANH, slope_c: float = DEFAULT_SLOPE):
        if kind not in (TANH, SIGMOID):
            raise ValueError(f"unknown nonlinearity kind {kind!r}")
        max_slope = 1.0 if kind == TANH else 0.25
        if not 0.0 < slope_c < max_slope:
            raise ValueError(f"slope_c must lie in (0, {max_slope}) for {kind}")
        self.kind = kind
        self.slope_c = float(slope_c)
        if kind == TANH:
            self.center = 0.0
            # 1 - tanh²(t) = c
            self.knot = float(np.arctanh(np.sqrt(1.0 - slope_c)))
        else:
            self.center = 0.5
            # σ(t)(1 - σ(t)) = c, upper root
            self.knot = float(logit(0.5 * (1.0 + np.sqrt(1.0 - 4.0 * slope_c))))
        self.knot_value = float(self._curve(self.knot))
        self.offset_b = self.knot_value - self.slope_c * self.knot

    def __repr__(self):
        return f"InvertibleNonlinearity({self.kind!r}, slope_c={self.slope_c})"

    def _curve(self, t):
        return np.tanh(t) if self.kind == TANH else expit(t)

    def _curve_inverse(self, y):
        return np.arctanh(y) if self.kind == TANH else logit(y)

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        inside = np.abs(t) <= self.knot
        tail = self.slope_c * t + np.where(t > 0, self.offset_b, 2 * self.center - self.offset_b)
        return np.where(inside, self._curve(np.clip(t, -self.knot, self.knot)), tail)

    def inverse(self, y):
        y = np.asarray(y, dtype=np.float64)
        lo = 2 * self.center - self.knot_value
        hi = self.knot_value
        inside = (y >= lo) & (y <= hi)
        tail = (y - np.where(y > self.center, self.offset_b, 2 * self.center - self.offset_b)) / self.slope_c
        core = self._curve_inverse(np.clip(y, lo, hi))
        # clip keeps the core branch from rounding past the knot
        return np.where(inside, np.clip(core, -self.knot, self.knot), tail)

    def derivative(self, t):
        t = np.asarray(t, dtype=np.float64)
        inside = np.abs(t) <= self.knot
        tc = np.clip(t, -self.knot, self.knot)
        if self.kind == TANH:
            core = 1.0 - np.tanh(tc) ** 2
        else:
            s = expit(tc)
            core = s * (1.0 - s)
        return np.where(inside, core, self.slope_c)

    def log_abs_deriv(self, t):
        t = np.asarray(t, dtype=np.float64)
        inside = np.abs(t) <= self.knot
        tc = np.clip(t, -self.knot, self.knot)
        if self.kind == TANH:
            core = _log_sech2(tc)
        else:
            core = -np.logaddexp(0.0, -tc) - np.logaddexp(0.0, tc)
        return np.where(inside, core, np.log(self.slope_c))

    def log_deriv_grad(self, t):
        """d/dt of :meth:`log_abs_deriv` (zero on the tails)."""
        t = np.asarray(t, dtype=np.float64)
        inside = np.abs(t) <= self.knot
        core = -2.0 * np.tanh(t) if self.kind == TANH else 1.0 - 2.0 * expit(t)
        return np.where(inside, core, 0.0)


def nonlinearity_eval(nl: InvertibleNonlinearity, t):
    return nl(t)


def nonlinearity_invert(nl: InvertibleNonlinearity, y):
    return nl.inverse(y)


def nonlinearity_log_abs_deriv(nl: InvertibleNonlinearity, t):
    return nl.log_abs_deriv(t)


@dataclass
class PseudoLinearLayer:
    """Affine layer ``W h + b`` with ``W`` of shape ``(out_dim, in_dim)``."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionMismatch(f"weight {self.weight.shape} vs bias {self.bias.shape}")
        if self.out_dim < self.in_dim:
            raise DimensionMismatch("pseudo-invertible layers need out_dim >= in_dim")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def gram(self) -> SpdFactorization:
        return gram_factor(self.weight)

    def forward(self, h):
        h = np.asarray(h, dtype=np.float64)
        if h.shape[-1] != self.in_dim:
            raise DimensionMismatch(f"input dim {h.shape[-1]} != {self.in_dim}")
        return h @ self.weight.T + self.bias

    def pseudo_inverse(self, x, factor: SpdFactorization | None = None):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.out_dim:
            raise DimensionMismatch(f"input dim {x.shape[-1]} != {self.out_dim}")
        factor = factor or self.gram()
        rhs = ((x - self.bias) @ self.weight).T
        h = solve_spd(factor, rhs)
        # one refinement step removes the O(jitter) bias of the regularized factor
        h = h + solve_spd(factor, rhs - self.weight.T @ (self.weight @ h))
        return h.T

    def log_volume(self, factor: SpdFactorization | None = None) -> float:
        return 0.5 * log_det_spd(factor or self.gram())


def linear_forward(layer: PseudoLinearLayer, h):
    return layer.forward(h)


def linear_pseudo_inverse(layer: PseudoLinearLayer, x):
    return layer.pseudo_inverse(x)


def linear_log_volume(layer: PseudoLinearLayer) -> float:
    return layer.log_volume()


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


@dataclass
class InverseCache:
    """Intermediates of one batched inverse pass, kept for backpropagation.

    ``acts[l]`` is the input to linear layer ``l`` on the way back (``acts[0]``
    is the latent code), ``pre[l]`` the recovered pre-activation of layer ``l``
    and ``factors[l]`` the Cholesky factor of ``W_lᵀW_l``.
    """

    acts: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    factors: list = field(default_factory=list)


class InvertibleNet:
    """Stack of pseudo-invertible linear layers, each followed by an optional
    invertible nonlinearity (``None`` = identity).

    Parameters are exposed through :attr:`params` (``W0, b0, W1, b1, ...``) as
    live views, so an optimizer updating that dict updates the net.
    """

    def __init__(self, layers, activations):
        if len(layers) != len(activations):
            raise ValueError("need one activation slot per layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise DimensionMismatch(f"layer chain breaks: {prev.out_dim} -> {nxt.in_dim}")
        self.layers = list(layers)
        self.activations = list(activations)

    @classmethod
    def perceptron(cls, latent_dim: int, hidden_dim: int = 600, output_dim: int = 784,
                   rng: np.random.Generator | None = None, slope_c: float = DEFAULT_SLOPE):
        """The two-layer tanh/sigmoid invertible perceptron, Glorot-initialized."""
        rng = rng if rng is not None else np.random.default_rng(0)
        dims = [latent_dim, hidden_dim, output_dim]
        layers = [PseudoLinearLayer(glorot_uniform(rng, a, b), np.zeros(b)) for a, b in zip(dims, dims[1:])]
        acts = [InvertibleNonlinearity(TANH, slope_c), InvertibleNonlinearity(SIGMOID, slope_c)]
        return cls(layers, acts)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    latent_dim = input_dim

    @property
    def is_square(self) -> bool:
        return all(l.in_dim == l.out_dim for l in self.layers)

    @property
    def params(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"W{i}"] = layer.weight
            out[f"b{i}"] = layer.bias
        return out

    def forward(self, h, return_pre=False):
        a = np.asarray(h, dtype=np.float64)
        pre = []
        for layer, act in zip(self.layers, self.activations):
            z = layer.forward(a)
            pre.append(z)
            a = act(z) if act is not None else z
        return (a, pre) if return_pre else a

    def inverse(self, x, cache: InverseCache | None = None):
        """Exact reverse composition: undo the last nonlinearity, pseudo-invert
        the last linear layer, and so on down to the latent code."""
        a = np.asarray(x, dtype=np.float64)
        if a.shape[-1] != self.output_dim:
            raise DimensionMismatch(f"input dim {a.shape[-1]} != {self.output_dim}")
        n = len(self.layers)
        acts, pres, factors = [None] * (n + 1), [None] * n, [None] * n
        acts[n] = a
        for i in reversed(range(n)):
            layer, act = self.layers[i], self.activations[i]
            z = act.inverse(a) if act is not None else a
            f = layer.gram()
            a = layer.pseudo_inverse(z, f)
            pres[i], factors[i], acts[i] = z, f, a
        if cache is not None:
            cache.acts, cache.pre, cache.factors = acts, pres, factors
        return a

    def log_volume(self, h):
        """Log-volume expansion of the forward map at latent point(s) ``h``.

        Sum of ``½ log det WᵀW`` over layers plus the log-derivative of every
        nonlinearity at its pre-activation. Exact ``log|det J|`` for square
        nets.
        """
        _, pre = self.forward(h, return_pre=True)
        total = sum(layer.log_volume() for layer in self.layers)
        for z, act in zip(pre, self.activations):
            if act is not None:
                total = total + act.log_abs_deriv(z).sum(axis=-1)
        return total if np.ndim(total) else float(total)

    # -- backpropagation -------------------------------------------------

    def forward_backward(self, h, grad_out):
        """Gradients of ``sum(grad_out * forward(h))`` w.r.t. params and ``h``."""
        a = np.atleast_2d(np.asarray(h, dtype=np.float64))
        inputs, pre = [], []
        for layer, act in zip(self.layers, self.activations):
            inputs.append(a)
            z = layer.forward(a)
            pre.append(z)
            a = act(z) if act is not None else z
        g = np.atleast_2d(grad_out)
        grads = {}
        for i in reversed(range(len(self.layers))):
            act = self.activations[i]
            gz = g * act.derivative(pre[i]) if act is not None else g
            grads[f"W{i}"] = gz.T @ inputs[i]
            grads[f"b{i}"] = gz.sum(axis=0)
            g = gz @ self.layers[i].weight
        return grads, g

    def inverse_backward(self, cache: InverseCache, grad_latent, volume_weight: float = 0.0):
        """Backpropagate through the inverse pass.

        Computes gradients w.r.t. every parameter of

            sum_n <grad_latent[n], inverse(x_n)> - volume_weight * V

        where ``V = sum_n sum_l [½ log det W_lᵀW_l + sum_i log act_l'(z_{l,i})]``
        with ``z`` the pre-activations recovered by the inverse pass (equal to
        the forward ones whenever ``x`` lies in the net's range).
        """
        g = np.atleast_2d(grad_latent)
        n_items = g.shape[0]
        grads = {}
        for i in range(len(self.layers)):
            layer, act = self.layers[i], self.activations[i]
            w, f = layer.weight, cache.factors[i]
            a_in = np.atleast_2d(cache.acts[i])
            z = np.atleast_2d(cache.pre[i])
            r = z - layer.bias
            s = solve_spd(f, g.T).T  # g G⁻¹
            ws = s @ w.T
            gw = (r - a_in @ w.T).T @ s - ws.T @ a_in
            gb = -ws.sum(axis=0)
            gz = ws
            if volume_weight:
                ginv = solve_spd(f, np.eye(layer.in_dim))
                gw = gw - volume_weight * n_items * (w @ ginv)
                if act is not None:
                    gz = gz - volume_weight * act.log_deriv_grad(z)
            grads[f"W{i}"] = gw
            grads[f"b{i}"] = gb
            g = gz / act.derivative(z) if act is not None else gz
        return grads


def net_forward(net: InvertibleNet, h):
    return net.forward(h)


def net_inverse(net: InvertibleNet, x):
    return net.inverse(x)


def net_log_volume(net: InvertibleNet, h):
    return net.log_volume(h)
