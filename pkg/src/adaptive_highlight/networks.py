"""Highlight network, history encoders and the baseline variants built from them.

Videos arrive as ``(T, D)`` (or ``(1, T, D)``) frame features and are moved to
the channels-first ``(1, D, T)`` layout used by the temporal operators. The
detector always returns ``(1, T, 2)`` logits: column 0 non-highlight, column 1
highlight.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import autograd as ag
from .autograd import Value
from .norm import DEFAULT_EPSILON, AffineParams, TainConfig, identity_norm, t_ain

BASE_CHANNELS = (64, 128, 256, 512, 512, 1024, 1024)
MIN_LENGTH = 32  # five stride-2 pools
NUM_POOLED_BLOCKS = 5

NORMALIZATION_MODES = ("adaptive", "unconditional", "identity", "none")
FUSION_MODES = ("none", "aggregate")
HISTORY_ENCODERS = ("conv", "attn")


class EmptyHistoryError(ValueError):
    """A history-conditioned model received a history with no elements."""


@dataclass(frozen=True)
class Variant:
    normalization: str
    fusion: str
    history_encoder: str = "conv"
    label: str = ""

    @property
    def user_adaptive(self):
        return self.normalization == "adaptive" or self.fusion == "aggregate"


VARIANTS = {
    "fcsn": Variant("none", "none", label="FCSN"),
    "h-fcsn": Variant("unconditional", "none", label="H-FCSN"),
    "fcsn-agg": Variant("none", "aggregate", label="FCSN-aggregate"),
    "h-fcsn-agg": Variant("unconditional", "aggregate", label="H-FCSN-aggregate"),
    "adaptive-attn": Variant("adaptive", "none", "attn", label="Adaptive-H-FCSN-attn"),
    "adaptive": Variant("adaptive", "none", "conv", label="Adaptive-H-FCSN"),
    # fixed gamma=1, delta=0 rows of the affine ablation
    "h-fcsn-fixed": Variant("identity", "none", label="H-FCSN (gamma=1, delta=0)"),
    "h-fcsn-agg-fixed": Variant("identity", "aggregate", label="H-FCSN-aggregate (gamma=1, delta=0)"),
}


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 64
    channels: tuple = tuple(c // 8 for c in BASE_CHANNELS)
    latent_dim: int = 256
    kernel_size: int = 3
    pool_window: int = 2
    pool_stride: int = 2
    dropout: float = 0.5
    decoder_channels: int = 128
    deconv1_kernel: int = 4
    deconv2_kernel: int = 32
    attn_dim: int = 64
    epsilon: float = DEFAULT_EPSILON
    history_encoder: str = "conv"
    normalization: str = "adaptive"
    fusion: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) != 7:
            raise ValueError(f"channels needs 7 entries (one per encoder block), got {len(self.channels)}")
        counts = (self.feature_dim, self.latent_dim, self.kernel_size, self.pool_window,
                  self.pool_stride, self.decoder_channels, self.deconv1_kernel,
                  self.deconv2_kernel, self.attn_dim, *self.channels)
        if min(counts) < 1:
            raise ValueError("all sizes in ModelConfig must be >= 1")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd so 'same' padding preserves length")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.normalization not in NORMALIZATION_MODES:
            raise ValueError(f"normalization must be one of {NORMALIZATION_MODES}")
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"fusion must be one of {FUSION_MODES}")
        if self.history_encoder not in HISTORY_ENCODERS:
            raise ValueError(f"history_encoder must be one of {HISTORY_ENCODERS}")

    @classmethod
    def scaled(cls, divisor=8, **overrides):
        """Full-size channel widths divided by ``divisor``."""
        channels = tuple(max(1, c // divisor) for c in BASE_CHANNELS)
        overrides.setdefault("latent_dim", max(1, 2048 // divisor))
        return cls(channels=channels, **overrides)

    @classmethod
    def tiny(cls, **overrides):
        base = dict(feature_dim=4, channels=(4, 4, 4, 4, 4, 8, 8), latent_dim=6,
                    decoder_channels=6, attn_dim=4)
        base.update(overrides)
        return cls(**base)

    def for_variant(self, name):
        v = VARIANTS[name]
        return replace(self, normalization=v.normalization, fusion=v.fusion,
                       history_encoder=v.history_encoder)

    @property
    def uses_history(self):
        return self.normalization == "adaptive" or self.fusion == "aggregate"

    @property
    def site_channels(self):
        return self.channels[6], self.channels[3]

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# ---------------------------------------------------------------------------
# parameters


def parameter_shapes(cfg):
    """Ordered ``name -> shape`` map; depends on ``cfg`` alone."""
    k, d = cfg.kernel_size, cfg.feature_dim
    shapes = {}

    def conv_stack(prefix):
        cin = d
        for i, cout in enumerate(cfg.channels, start=1):
            shapes[f"{prefix}.conv{i}.w"] = (cout, cin, k)
            shapes[f"{prefix}.conv{i}.b"] = (cout,)
            cin = cout

    conv_stack("enc")
    c_deep, c_skip = cfg.site_channels
    cd = cfg.decoder_channels
    if cfg.normalization == "unconditional":
        for site, c in (("norm1", c_deep), ("norm2", c_skip)):
            shapes[f"dec.{site}.gamma"] = (c,)
            shapes[f"dec.{site}.delta"] = (c,)
    shapes["dec.proj1.w"] = (cd, c_deep, 1)
    shapes["dec.proj1.b"] = (cd,)
    shapes["dec.proj2.w"] = (cd, c_skip, 1)
    shapes["dec.proj2.b"] = (cd,)
    shapes["dec.deconv1.w"] = (cd, cd, cfg.deconv1_kernel)
    shapes["dec.deconv1.b"] = (cd,)
    shapes["dec.deconv2.w"] = (cd, 2, cfg.deconv2_kernel)
    shapes["dec.deconv2.b"] = (2,)

    if cfg.normalization == "adaptive":
        if cfg.history_encoder == "conv":
            conv_stack("hist")
            shapes["hist.skip.w"] = (d, cfg.channels[6])
            shapes["hist.skip.b"] = (cfg.channels[6],)
            shapes["hist.out.w"] = (cfg.channels[6], cfg.latent_dim)
            shapes["hist.out.b"] = (cfg.latent_dim,)
        else:
            a = cfg.attn_dim
            for proj in ("q", "k", "v"):
                shapes[f"hist.{proj}.w"] = (d, a)
                shapes[f"hist.{proj}.b"] = (a,)
            shapes["hist.out.w"] = (a, cfg.latent_dim)
            shapes["hist.out.b"] = (cfg.latent_dim,)
        shapes["head.w"] = (cfg.latent_dim, 2 * (c_deep + c_skip))
        shapes["head.b"] = (2 * (c_deep + c_skip),)
    return shapes


def _fan_in(name, shape, cfg):
    if name.endswith("deconv1.w"):
        return shape[0] * math.ceil(shape[2] / 2)
    if name.endswith("deconv2.w"):
        return shape[0] * math.ceil(shape[2] / 16)
    if len(shape) == 3:
        return shape[1] * shape[2]
    return shape[0]


def init_parameters(cfg, rng, dtype=np.float32):
    """Fan-in scaled uniform init; norm gammas at 1, head bias gives gamma=1, delta=0."""
    shapes = parameter_shapes(cfg)
    weight_of = {n[:-2] + ".w": s for n, s in shapes.items() if n.endswith(".w")}
    params = {}
    for name, shape in shapes.items():
        if name.endswith(".gamma"):
            data = np.ones(shape)
        elif name.endswith(".delta"):
            data = np.zeros(shape)
        elif name == "head.b":
            data = _identity_head_bias(cfg)
        else:
            wname = name[:-2] + ".w"
            bound = 1.0 / math.sqrt(_fan_in(wname, weight_of[wname], cfg))
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Value(np.ascontiguousarray(data, dtype=dtype), requires_grad=True, name=name)
    return params


def _identity_head_bias(cfg):
    c_deep, c_skip = cfg.site_channels
    return np.concatenate([np.ones(c_deep), np.zeros(c_deep), np.ones(c_skip), np.zeros(c_skip)])


def parameter_groups(params):
    """Split into the encoder, decoder and history-encoder groups of the objective."""
    groups = {"encoder": {}, "decoder": {}, "history": {}}
    for name, p in params.items():
        key = {"enc": "encoder", "dec": "decoder"}.get(name.split(".")[0], "history")
        groups[key][name] = p
    return groups


# ---------------------------------------------------------------------------
# input handling


def as_frames(x, what="video"):
    arr = np.asarray(x)
    if arr.ndim == 3:
        if arr.shape[0] != 1:
            raise ag.ShapeError(f"{what} batch must be 1, got shape {arr.shape}")
        arr = arr[0]
    if arr.ndim != 2:
        raise ag.ShapeError(f"{what} must be (T, D) or (1, T, D), got shape {arr.shape}")
    return arr


def padded_length(t, multiple=MIN_LENGTH):
    return max(multiple, -(-t // multiple) * multiple)


def pad_repeat_last(frames, length):
    """Right-pad ``(T, D)`` rows by repeating the last row up to ``length``."""
    t = frames.shape[0]
    if t >= length:
        return frames
    return np.concatenate([frames, np.repeat(frames[-1:], length - t, axis=0)], axis=0)


def aggregate_fusion(frames, history):
    """Add the mean history vector to every frame."""
    history = as_frames(history, "history")
    if history.shape[0] == 0:
        raise EmptyHistoryError("aggregate fusion needs at least one history element")
    return frames + history.mean(axis=0, keepdims=True).astype(frames.dtype)


def _to_channels_first(frames, dtype):
    return Value(np.ascontiguousarray(frames.T[None], dtype=dtype))


# ---------------------------------------------------------------------------
# sub-networks


def _conv_stack(x, params, cfg, prefix, training, rng):
    pad = cfg.kernel_size // 2
    skip = None
    for i in range(1, 8):
        x = ag.temporal_conv(x, params[f"{prefix}.conv{i}.w"], params[f"{prefix}.conv{i}.b"], padding=pad)
        x = ag.relu(x)
        if i <= NUM_POOLED_BLOCKS:
            x = ag.temporal_max_pool(x, cfg.pool_window, cfg.pool_stride)
        else:
            x = ag.dropout(x, cfg.dropout, training, rng)
        if i == 4:
            skip = x
    return x, skip


def encoder_forward(video, params, cfg, training=False, rng=None):
    """Seven-block temporal conv encoder over ``(1, D, T)``.

    Returns the final feature map (T/32) and the conv-blk4 output (T/16).
    """
    if video.shape[2] < MIN_LENGTH:
        raise ag.ShapeError(f"encoder needs at least {MIN_LENGTH} frames after padding, got {video.shape[2]}")
    return _conv_stack(video, params, cfg, "enc", training, rng)


def _norm_site(x, site, affine, params, cfg):
    mode = cfg.normalization
    tcfg = TainConfig(x.shape[1], cfg.epsilon)
    if mode == "none":
        return x
    if mode == "identity":
        return identity_norm(x, tcfg)
    if mode == "unconditional":
        affine = AffineParams(params[f"dec.{site}.gamma"], params[f"dec.{site}.delta"])
    elif affine is None:
        raise ValueError("adaptive normalization needs predicted affine parameters")
    return t_ain(x, affine, tcfg)


def decoder_forward(deep, skip, affine1, affine2, params, cfg, t_out):
    """Normalize both encoder outputs, fuse them and upsample to ``(1, t_out, 2)``."""
    a = _norm_site(deep, "norm1", affine1, params, cfg)
    a = ag.temporal_conv(a, params["dec.proj1.w"], params["dec.proj1.b"])
    a = ag.temporal_deconv(a, params["dec.deconv1.w"], 2, crop_to=skip.shape[2], bias=params["dec.deconv1.b"])
    b = _norm_site(skip, "norm2", affine2, params, cfg)
    b = ag.temporal_conv(b, params["dec.proj2.w"], params["dec.proj2.b"])
    out = ag.temporal_deconv(ag.add(a, b), params["dec.deconv2.w"], 16, crop_to=t_out,
                             bias=params["dec.deconv2.b"])
    return ag.transpose(out, (0, 2, 1))


def _history_rows(history):
    rows = as_frames(history, "history")
    if rows.shape[0] == 0:
        raise EmptyHistoryError("history encoder needs at least one history element")
    return rows


def history_encoder_conv(history, params, cfg, training=False, rng=None, dtype=np.float32):
    """Temporal conv stack over the history axis, pooled, plus a pooled-input skip."""
    rows = _history_rows(history).astype(dtype)
    x = _to_channels_first(pad_repeat_last(rows, MIN_LENGTH), dtype)
    feats, _ = _conv_stack(x, params, cfg, "hist", training, rng)
    pooled = ag.reshape(ag.temporal_avg_pool_global(feats), (1, cfg.channels[6]))
    raw_mean = Value(rows.mean(axis=0, keepdims=True))
    skip = ag.linear(raw_mean, params["hist.skip.w"], params["hist.skip.b"])
    return ag.linear(ag.add(pooled, skip), params["hist.out.w"], params["hist.out.b"])


def attention_weights(history, params, cfg, dtype=np.float32):
    rows = Value(_history_rows(history).astype(dtype))
    q = ag.linear(rows, params["hist.q.w"], params["hist.q.b"])
    k = ag.linear(rows, params["hist.k.w"], params["hist.k.b"])
    v = ag.linear(rows, params["hist.v.w"], params["hist.v.b"])
    logits = ag.scale(ag.matmul(q, ag.transpose(k)), 1.0 / math.sqrt(cfg.attn_dim))
    return ag.softmax(logits, axis=1), v


def history_encoder_attn(history, params, cfg, dtype=np.float32):
    """Single-head self-attention over history rows, mean-pooled, then FC."""
    weights, v = attention_weights(history, params, cfg, dtype)
    attended = ag.matmul(weights, v)
    pooled = ag.reshape(ag.mean(attended, axis=0), (1, cfg.attn_dim))
    return ag.linear(pooled, params["hist.out.w"], params["hist.out.b"])


def affine_head(z, params, cfg):
    """Decode ``z`` (shape ``(1, Z)``) into gamma/delta for the deep and skip sites."""
    out = ag.reshape(ag.linear(z, params["head.w"], params["head.b"]), (-1,))
    c1, c2 = cfg.site_channels
    cuts = np.cumsum([0, c1, c1, c2, c2])
    parts = [ag.take(out, int(lo), int(hi), axis=0) for lo, hi in zip(cuts[:-1], cuts[1:])]
    return AffineParams(parts[0], parts[1]), AffineParams(parts[2], parts[3])


def encode_history(history, params, cfg, training=False, rng=None, dtype=np.float32):
    if cfg.history_encoder == "conv":
        return history_encoder_conv(history, params, cfg, training, rng, dtype)
    return history_encoder_attn(history, params, cfg, dtype)


def detector_forward(video, history, params, cfg, training=False, rng=None):
    """Frame logits ``(1, T, 2)`` for one video, conditioned on ``history`` as configured."""
    frames = as_frames(video)
    t = frames.shape[0]
    if t < 1:
        raise ag.ShapeError("video has no frames")
    if cfg.feature_dim != frames.shape[1]:
        raise ag.ShapeError(f"video feature dim {frames.shape[1]} != config feature_dim {cfg.feature_dim}")
    dtype = params["enc.conv1.w"].dtype
    if cfg.uses_history and (history is None or as_frames(history, "history").shape[0] == 0):
        raise EmptyHistoryError(f"{cfg.normalization}/{cfg.fusion} model needs a non-empty history")

    if cfg.fusion == "aggregate":
        frames = aggregate_fusion(frames, history)
    x = _to_channels_first(pad_repeat_last(frames, padded_length(t)), dtype)
    deep, skip = encoder_forward(x, params, cfg, training, rng)

    affine1 = affine2 = None
    if cfg.normalization == "adaptive":
        z = encode_history(history, params, cfg, training, rng, dtype)
        affine1, affine2 = affine_head(z, params, cfg)
    return decoder_forward(deep, skip, affine1, affine2, params, cfg, t)


def baseline_forward(video, history, params, cfg, training=False, rng=None):
    """Non-T-AIN variants (FCSN, H-FCSN and their aggregate forms)."""
    if cfg.normalization == "adaptive":
        raise ValueError("baseline_forward is for non-adaptive normalization modes")
    return detector_forward(video, history, params, cfg, training, rng)


class HighlightDetector:
    """Config plus parameters; callable on ``(video, history)``."""

    def __init__(self, cfg, params=None, seed=0):
        self.cfg = cfg
        if params is None:
            params = init_parameters(cfg, np.random.default_rng(seed))
        expected = parameter_shapes(cfg)
        if list(params) != list(expected) or any(params[n].shape != s for n, s in expected.items()):
            raise ag.ShapeError("parameter set does not match the model config")
        self.params = params

    def __call__(self, video, history=None, training=False, rng=None):
        return detector_forward(video, history, self.params, self.cfg, training, rng)

    def parameters(self):
        return self.params

    def predict(self, video, history=None):
        """Eval-mode logits as a ``(T, 2)`` array."""
        return self(video, history).data[0]

    def frame_scores(self, video, history=None):
        """Highlight log-odds per frame (order-equivalent to the softmax probability)."""
        logits = self.predict(video, history).astype(np.float64)
        return logits[:, 1] - logits[:, 0]

    def snapshot(self):
        return {n: p.data.copy() for n, p in self.params.items()}

    def load_snapshot(self, arrays):
        for n, p in self.params.items():
            p.data[...] = arrays[n]

    def to(self, dtype):
        params = {n: Value(p.data.astype(dtype), requires_grad=True, name=n) for n, p in self.params.items()}
        return HighlightDetector(self.cfg, params)
