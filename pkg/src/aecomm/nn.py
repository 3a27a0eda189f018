"""Minimal dense-network engine: layers, manual backprop, BCE loss, Adam.

Everything runs in float64 numpy. Networks are plain layer stacks; the
forward pass returns the per-layer caches needed by the backward pass, so
evaluation on an immutable net snapshot is side-effect free and can run in
parallel. All randomness (dropout masks) comes from an explicitly passed
``numpy.random.Generator``.

Inputs may be a single vector ``(n,)`` or a batch ``(B, n)``; all layer math
is written against the batch form and vectors are promoted internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ConfigError, NumericsError

# Clamp applied to probabilities before logs in the BCE loss.
EPS_CLAMP = 1e-7


class Linear:
    """Affine layer ``y = x @ weight + bias`` with weight shape (n_in, n_out)."""

    kind = "linear"

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        weight = np.asarray(weight, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weight.ndim != 2 or bias.shape != (weight.shape[1],):
            raise ConfigError(
                f"linear layer wants weight (n_in, n_out) and bias (n_out,); "
                f"got {weight.shape} and {bias.shape}"
            )
        self.weight = weight
        self.bias = bias

    @classmethod
    def glorot(cls, n_in: int, n_out: int, rng: np.random.Generator) -> "Linear":
        limit = np.sqrt(6.0 / (n_in + n_out))
        return cls(rng.uniform(-limit, limit, size=(n_in, n_out)), np.zeros(n_out))

    @property
    def n_in(self) -> int:
        return self.weight.shape[0]

    @property
    def n_out(self) -> int:
        return self.weight.shape[1]

    def param_count(self) -> int:
        return self.weight.size + self.bias.size


class ReLU:
    kind = "relu"


class Sigmoid:
    kind = "sigmoid"


class LeakyReLU:
    kind = "leaky_relu"

    def __init__(self, slope: float = 0.2):
        self.slope = float(slope)


class Dropout:
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time."""

    kind = "dropout"

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = float(rate)


@dataclass
class DenseNet:
    """Ordered layer stack with a train/eval mode switch.

    ``mode == "eval"`` makes the forward pass a pure deterministic function
    of (net, input); dropout layers become the identity.
    """

    layers: list = field(default_factory=list)
    mode: str = "train"

    def train(self) -> "DenseNet":
        self.mode = "train"
        return self

    def eval(self) -> "DenseNet":
        self.mode = "eval"
        return self

    @property
    def n_in(self) -> int:
        return next(l.n_in for l in self.layers if isinstance(l, Linear))

    @property
    def n_out(self) -> int:
        return next(l.n_out for l in reversed(self.layers) if isinstance(l, Linear))

    def param_count(self) -> int:
        return sum(l.param_count() for l in self.layers if isinstance(l, Linear))


def net_params(net: DenseNet) -> list:
    """Flat parameter list: weight then bias for each linear layer, in order."""
    out = []
    for layer in net.layers:
        if isinstance(layer, Linear):
            out.append(layer.weight)
            out.append(layer.bias)
    return out


def dropout_apply(x, rate: float, rng, mode: str):
    """Apply inverted dropout to ``x``.

    Train mode zeroes entries independently with probability ``rate`` and
    scales survivors by 1/(1-rate) so the expectation is preserved; eval mode
    and rate 0 return ``x`` unchanged (and consume no randomness).

    Returns (output, mask) where mask is None when dropout was a no-op.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    x = np.asarray(x, dtype=np.float64)
    if mode == "eval" or rate == 0.0:
        return x, None
    if rng is None:
        raise ConfigError("dropout in train mode needs an rng")
    mask = rng.random(x.shape) >= rate
    return x * mask / (1.0 - rate), mask


def net_forward(net: DenseNet, x, rng=None):
    """Run the layer stack on ``x``; returns (output, caches).

    ``caches`` holds the per-layer values the backward pass needs. In train
    mode an rng is required whenever the net contains an active dropout
    layer. Non-finite layer outputs raise NumericsError with the layer index.
    """
    x = np.asarray(x, dtype=np.float64)
    was_vector = x.ndim == 1
    if was_vector:
        x = x[None, :]
    if x.ndim != 2:
        raise ConfigError(f"input must be a vector or a batch matrix, got ndim={x.ndim}")

    caches = [("input", was_vector)]
    for i, layer in enumerate(net.layers):
        if isinstance(layer, Linear):
            if x.shape[1] != layer.n_in:
                raise ConfigError(
                    f"layer {i}: input width {x.shape[1]} != expected {layer.n_in}"
                )
            caches.append(("linear", x))
            x = x @ layer.weight + layer.bias
            if not np.isfinite(x).all():
                raise NumericsError(f"non-finite output at layer {i} (linear)")
        elif isinstance(layer, ReLU):
            mask = x > 0.0
            caches.append(("relu", mask))
            x = x * mask
        elif isinstance(layer, LeakyReLU):
            mask = x > 0.0
            caches.append(("leaky_relu", mask))
            x = np.where(mask, x, layer.slope * x)
        elif isinstance(layer, Sigmoid):
            x = expit(x)
            caches.append(("sigmoid", x))
        elif isinstance(layer, Dropout):
            x, mask = dropout_apply(x, layer.rate, rng, net.mode)
            caches.append(("dropout", mask))
        else:
            raise ConfigError(f"unknown layer kind at index {i}: {layer!r}")
    out = x[0] if was_vector else x
    return out, caches


def net_backward(net: DenseNet, caches, grad_out):
    """Exact reverse-mode pass; returns (param_grads, grad_input).

    ``param_grads`` aligns with :func:`net_params`. ``caches`` must come from
    a forward pass of the same net on the same input.
    """
    if not caches or caches[0][0] != "input":
        raise ConfigError("net_backward needs the caches from net_forward")
    was_vector = caches[0][1]
    g = np.asarray(grad_out, dtype=np.float64)
    if was_vector:
        g = g[None, :]

    grads = []
    layer_caches = caches[1:]
    if len(layer_caches) != len(net.layers):
        raise ConfigError("cache/layer count mismatch; caches are stale")
    for layer, (tag, cached) in zip(reversed(net.layers), reversed(layer_caches)):
        if tag != layer.kind:
            raise ConfigError(f"cache kind {tag!r} does not match layer {layer.kind!r}")
        if tag == "linear":
            grads.append(g.sum(axis=0))          # bias
            grads.append(cached.T @ g)           # weight
            g = g @ layer.weight.T
        elif tag == "relu":
            g = g * cached
        elif tag == "leaky_relu":
            g = np.where(cached, g, layer.slope * g)
        elif tag == "sigmoid":
            g = g * cached * (1.0 - cached)
        elif tag == "dropout":
            if cached is not None:
                g = g * cached / (1.0 - layer.rate)
    grads.reverse()
    return grads, (g[0] if was_vector else g)


def zero_grads_like(params) -> list:
    return [np.zeros_like(p) for p in params]


def bce_loss(probs, bits):
    """Mean binary cross-entropy over all entries, plus d(loss)/d(probs).

    Probabilities are clamped to [EPS_CLAMP, 1-EPS_CLAMP] before the logs;
    the gradient is evaluated at the clamped values. ``bits`` must be 0/1.
    """
    probs = np.asarray(probs, dtype=np.float64)
    bits = np.asarray(bits, dtype=np.float64)
    if probs.shape != bits.shape:
        raise ConfigError(f"probs shape {probs.shape} != bits shape {bits.shape}")
    if not np.isin(bits, (0.0, 1.0)).all():
        raise ConfigError("bits must be 0 or 1")
    p = np.clip(probs, EPS_CLAMP, 1.0 - EPS_CLAMP)
    n = p.size
    loss = -(bits * np.log(p) + (1.0 - bits) * np.log1p(-p)).sum() / n
    grad = (p - bits) / (p * (1.0 - p)) / n
    return loss, grad


@dataclass
class AdamState:
    """Per-parameter first/second moment accumulators plus hyperparameters."""

    m: list
    v: list
    t: int = 0
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_init(params, alpha: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    return AdamState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        alpha=alpha, beta1=beta1, beta2=beta2, epsilon=epsilon,
    )


def adam_step(state: AdamState, params, grads):
    """One Adam update, in place on ``params``; returns (params, state).

    Follows the classic estimate/correct sequence: decay both moment
    accumulators toward the new gradient, divide out the (1 - beta^t) bias,
    then step by alpha * m_hat / (sqrt(v_hat) + epsilon).
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ConfigError("params/grads/state length mismatch")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ConfigError(f"gradient shape {g.shape} != param shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.alpha * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params, state
