"""Central finite-difference checks against the autodiff engine."""

from __future__ import annotations

import numpy as np

from .autograd import Value


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic)), initial=0.0))


def grad_check(f, x, h=1e-5):
    """Max relative error between autodiff and central differences of ``f`` at ``x``.

    ``f`` maps a :class:`Value` to a scalar :class:`Value`. The error per
    coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    x = np.array(x, dtype=np.float64)
    xv = Value(x.copy(), requires_grad=True)
    f(xv).backward()
    analytic = xv.grad.copy()

    numeric = np.empty_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(Value(x.copy())).item()
        flat[i] = orig - h
        fm = f(Value(x.copy())).item()
        flat[i] = orig
        numeric.reshape(-1)[i] = (fp - fm) / (2 * h)
    return relative_error(analytic, numeric)


def grad_check_params(loss_fn, params, h=1e-5, max_coords=None, rng=None):
    """Finite-difference check of ``loss_fn()`` w.r.t. named parameter Values.

    Parameters are perturbed in place. ``max_coords`` caps the number of
    coordinates probed per tensor (sampled with ``rng``). Returns
    ``{name: max relative error}``.
    """
    for p in params.values():
        p.zero_grad()
    loss_fn().backward()
    analytic = {name: p.grad.copy() for name, p in params.items()}

    errors = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            rng = rng if rng is not None else np.random.default_rng(0)
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        numeric = np.empty(coords.size)
        for j, i in enumerate(coords):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn().item()
            flat[i] = orig - h
            fm = loss_fn().item()
            flat[i] = orig
            numeric[j] = (fp - fm) / (2 * h)
        errors[name] = relative_error(analytic[name].reshape(-1)[coords], numeric)
    return errors


def _op_cases(rng):
    """``name -> (f, x0)`` for every differentiable primitive, in float64."""
    from . import autograd as ag
    from .norm import AffineParams, TainConfig, t_ain
    from .training import highlight_loss

    def const(*shape):
        return Value(rng.normal(size=shape))

    def probe(out):
        # contract against a fixed random tensor so every output entry matters
        return ag.total(ag.mul(out, Value(np.random.default_rng(99).normal(size=out.shape))))

    w_conv, b_conv = const(3, 2, 3), const(3)
    w_deconv = const(2, 3, 4)
    w_lin, b_lin, x_lin = const(5, 3), const(3), const(2, 5)
    right = const(4, 3)
    gamma, delta = const(2), const(2)
    mask_rng = lambda: np.random.default_rng(7)
    labels = (rng.random(6) < 0.5).astype(int)
    other = const(1, 2, 9)
    cases = {
        "temporal_conv.input": (lambda x: probe(ag.temporal_conv(x, w_conv, b_conv, padding=1)), (1, 2, 9)),
        "temporal_conv.weight": (lambda w: probe(ag.temporal_conv(other, w, b_conv, padding=1)), (3, 2, 3)),
        "temporal_conv.bias": (lambda b: probe(ag.temporal_conv(other, w_conv, b, padding=1)), (3,)),
        "temporal_deconv.input": (lambda x: probe(ag.temporal_deconv(x, w_deconv, 2, 9)), (1, 2, 5)),
        "temporal_deconv.weight": (lambda w: probe(ag.temporal_deconv(other, w, 2, 17)), (2, 3, 4)),
        "temporal_max_pool": (lambda x: probe(ag.temporal_max_pool(x)), (1, 3, 10)),
        "temporal_avg_pool_global": (lambda x: probe(ag.temporal_avg_pool_global(x)), (1, 3, 7)),
        "linear.input": (lambda x: probe(ag.linear(x, w_lin, b_lin)), (2, 5)),
        "linear.weight": (lambda w: probe(ag.linear(x_lin, w, b_lin)), (5, 3)),
        "matmul": (lambda a: probe(ag.matmul(a, right)), (2, 4)),
        "relu": (lambda x: probe(ag.relu(x)), (1, 2, 8)),
        "dropout": (lambda x: probe(ag.dropout(x, 0.5, True, mask_rng())), (1, 2, 8)),
        "add": (lambda x: probe(ag.add(x, other)), (1, 2, 9)),
        "mul": (lambda x: probe(ag.mul(x, other)), (1, 2, 9)),
        "softmax": (lambda x: probe(ag.softmax(x, axis=-1)), (3, 4)),
        "mean": (lambda x: probe(ag.mean(x, axis=0)), (3, 4)),
        "t_ain.input": (lambda x: probe(t_ain(x, AffineParams(gamma, delta), TainConfig(2))), (1, 2, 8)),
        "t_ain.gamma": (lambda g: probe(t_ain(other, AffineParams(g, delta), TainConfig(2))), (2,)),
        "t_ain.delta": (lambda d: probe(t_ain(other, AffineParams(gamma, d), TainConfig(2))), (2,)),
        "highlight_loss": (lambda s: highlight_loss(s, labels), (1, 6, 2)),
    }
    return {name: (f, rng.normal(size=shape)) for name, (f, shape) in cases.items()}


def run_suite(seed=0, max_coords=None):
    """Check every primitive and the full adaptive loss on the tiny config.

    The full-model check covers all parameters (encoder, decoder, history
    encoder and affine head) with ``D=4, T=32, n=2``. Returns ``{name: error}``.
    """
    from .networks import HighlightDetector, ModelConfig
    from .training import highlight_loss

    rng = np.random.default_rng(seed)
    errors = {name: grad_check(f, x0) for name, (f, x0) in _op_cases(rng).items()}
    for variant in ("adaptive", "adaptive-attn"):
        cfg = ModelConfig.tiny(feature_dim=4).for_variant(variant)
        model = HighlightDetector(cfg, seed=seed).to(np.float64)
        video, history = rng.normal(size=(32, 4)), rng.normal(size=(2, 4))
        labels = (rng.random(32) < 0.3).astype(int)
        per_param = grad_check_params(lambda: highlight_loss(model(video, history), labels), model.params,
                                      max_coords=max_coords, rng=rng)
        errors[f"{variant}.loss"] = max(per_param.values())
    return errors
