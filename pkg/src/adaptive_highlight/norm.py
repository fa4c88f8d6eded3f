"""Temporal instance normalization and its three affine variants.

* :func:`t_ain` - affine parameters supplied from outside (predicted per user).
* :class:`UnconditionalTIN` - affine parameters are ordinary trainable weights.
* :func:`identity_norm` - normalization only (gamma=1, delta=0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import ShapeError, Value, _check_temporal, make_node

DEFAULT_EPSILON = 1e-5


@dataclass(frozen=True)
class TainConfig:
    channels: int
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")


@dataclass
class AffineParams:
    gamma: Value
    delta: Value

    def __post_init__(self):
        if self.gamma.shape != self.delta.shape or self.gamma.data.ndim != 1:
            raise ShapeError(f"gamma {self.gamma.shape} and delta {self.delta.shape} must be equal-length vectors")

    @property
    def channels(self):
        return self.gamma.shape[0]

    @classmethod
    def identity(cls, channels, dtype=np.float32):
        return cls(Value(np.ones(channels, dtype=dtype)), Value(np.zeros(channels, dtype=dtype)))


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    variance: np.ndarray


def temporal_stats(x):
    """Per-channel mean and population variance (divisor T) over time."""
    data = x.data[0] if isinstance(x, Value) else np.asarray(x)[0]
    mu = data.mean(axis=1)
    var = ((data - mu[:, None]) ** 2).mean(axis=1)
    return NormStats(mu, var)


def temporal_normalize(x, epsilon=DEFAULT_EPSILON):
    """``(x - mean_t) / sqrt(var_t + eps)`` per channel, differentiable through the stats."""
    _check_temporal(x)
    stats = temporal_stats(x)
    inv_std = 1.0 / np.sqrt(stats.variance + x.dtype.type(epsilon))
    xhat = (x.data[0] - stats.mean[:, None]) * inv_std[:, None]

    def backward(g):
        g = g[0]
        g_mean = g.mean(axis=1, keepdims=True)
        gx_mean = (g * xhat).mean(axis=1, keepdims=True)
        return [(inv_std[:, None] * (g - g_mean - xhat * gx_mean))[None]]

    return make_node(xhat[None], [x], backward)


def channel_affine(x, gamma, delta):
    """Scale and shift every channel uniformly over time."""
    _check_temporal(x)
    c = x.shape[1]
    if gamma.shape != (c,) or delta.shape != (c,):
        raise ShapeError(f"affine params {gamma.shape}/{delta.shape} do not match {c} channels")
    xd = x.data[0]
    out = xd * gamma.data[:, None] + delta.data[:, None]

    def backward(g):
        g = g[0]
        return [(g * gamma.data[:, None])[None], (g * xd).sum(axis=1), g.sum(axis=1)]

    return make_node(out[None], [x, gamma, delta], backward)


def t_ain(x, affine, cfg):
    if affine.channels != x.shape[1] or cfg.channels != x.shape[1]:
        raise ShapeError(
            f"T-AIN site has {x.shape[1]} channels, config says {cfg.channels}, affine has {affine.channels}"
        )
    return channel_affine(temporal_normalize(x, cfg.epsilon), affine.gamma, affine.delta)


def identity_norm(x, cfg):
    if cfg.channels != x.shape[1]:
        raise ShapeError(f"norm site has {x.shape[1]} channels, config says {cfg.channels}")
    return temporal_normalize(x, cfg.epsilon)


class UnconditionalTIN:
    """Temporal instance norm with learnable per-channel gamma*/delta* (init 1 and 0)."""

    def __init__(self, cfg, dtype=np.float32, gamma=None, delta=None):
        self.cfg = cfg
        self.gamma = gamma if gamma is not None else Value(np.ones(cfg.channels, dtype=dtype), requires_grad=True)
        self.delta = delta if delta is not None else Value(np.zeros(cfg.channels, dtype=dtype), requires_grad=True)

    @property
    def affine(self):
        return AffineParams(self.gamma, self.delta)

    def parameters(self):
        return {"gamma": self.gamma, "delta": self.delta}

    def __call__(self, x):
        return t_ain(x, self.affine, self.cfg)


def unconditional_tin(x, learnable_affine, cfg):
    """Functional form of :class:`UnconditionalTIN`; same math as :func:`t_ain`."""
    return t_ain(x, learnable_affine, cfg)
