"""Frame-wise cross-entropy, Adam, and the single-video training loop."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .autograd import ShapeError, make_node
from .checkpoint import save_model
from .networks import HighlightDetector

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    """Loss became NaN or infinite."""


def highlight_loss(scores, labels):
    """Mean over frames of the softmax cross-entropy of ``(1, T, 2)`` logits.

    Uses ``logsumexp`` with max subtraction so large logits do not overflow.
    """
    labels = np.asarray(labels).astype(np.int64).reshape(-1)
    if scores.data.ndim != 3 or scores.shape[0] != 1 or scores.shape[2] != 2:
        raise ShapeError(f"scores must be (1, T, 2), got {scores.shape}")
    t = scores.shape[1]
    if labels.shape[0] != t:
        raise ShapeError(f"{labels.shape[0]} labels for {t} frames")
    if labels.size and (labels.min() < 0 or labels.max() > 1):
        raise ValueError("labels must be binary")

    logits = scores.data[0]
    top = logits.max(axis=1, keepdims=True)
    shifted = logits - top
    lse = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(t), labels]
    loss = (lse - picked).mean()

    def backward(g):
        probs = np.exp(shifted - lse[:, None])
        probs[np.arange(t), labels] -= 1
        return [(g[0] / t * probs)[None].astype(scores.dtype)]

    return make_node(np.array([loss], dtype=scores.dtype), [scores], backward)


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    u: dict = field(default_factory=dict)
    t: int = 0


class Adam:
    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0 or not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValueError("need lr > 0 and betas in [0, 1)")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = OptimizerState()

    def step(self, params, grads=None):
        """Update ``params`` (name -> Value) in place from ``grads`` or each ``.grad``."""
        st = self.state
        st.t += 1
        bc1 = 1.0 - self.beta1 ** st.t
        bc2 = 1.0 - self.beta2 ** st.t
        for name, p in params.items():
            g = p.grad if grads is None else grads[name]
            if g.shape != p.shape:
                raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
            if name not in st.m:
                st.m[name] = np.zeros_like(p.data)
                st.u[name] = np.zeros_like(p.data)
            m, u = st.m[name], st.u[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            u *= self.beta2
            u += (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            u_hat = u / bc2
            p.data -= (self.lr * m_hat / (np.sqrt(u_hat) + self.eps)).astype(p.dtype)


def adam_step(params, grads, state, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    opt = Adam(lr, beta1, beta2, eps)
    opt.state = state
    opt.step(params, grads)
    return params, state


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    epochs: int = 30
    seed: int = 0
    checkpoint_every: int = 0
    history_size: int | None = None  # restrict training histories; None = full

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("adam betas must be in [0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class TrainResult:
    model: HighlightDetector
    log: list
    best_epoch: int


def train(train_samples, model_cfg, train_cfg, val_samples=None, log_path=None, checkpoint_dir=None):
    """Optimize every parameter of the configured variant, one video per step.

    Returns the parameters of the epoch with the best validation mAP (the last
    epoch when no validation split is given).
    """
    from .data import restrict_history
    from .evaluation import evaluate

    if not train_samples:
        raise ValueError("training set is empty")
    if train_cfg.history_size is not None:
        train_samples = [restrict_history(s, train_cfg.history_size) for s in train_samples]

    seeds = np.random.SeedSequence(train_cfg.seed).spawn(3)
    init_rng, order_rng, drop_rng = (np.random.default_rng(s) for s in seeds)
    model = HighlightDetector(model_cfg, seed=int(init_rng.integers(2**63)))
    params = model.params
    opt = Adam(train_cfg.learning_rate, train_cfg.beta1, train_cfg.beta2, train_cfg.adam_epsilon)

    history_log = []
    best = (-np.inf, 0, model.snapshot())
    log_file = open(log_path, "w") if log_path else None
    try:
        for epoch in range(1, train_cfg.epochs + 1):
            started = time.perf_counter()
            losses = []
            for i in order_rng.permutation(len(train_samples)):
                s = train_samples[i]
                for p in params.values():
                    p.zero_grad()
                loss = highlight_loss(model(s.video, s.history, training=True, rng=drop_rng), s.labels)
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingDivergence(f"non-finite loss {value} at epoch {epoch} on {s.video_id}")
                loss.backward()
                opt.step(params)
                losses.append(value)

            entry = {"epoch": epoch, "mean_loss": float(np.mean(losses))}
            if val_samples:
                entry["val_map"] = evaluate(model, val_samples).map
            entry["wall_time"] = round(time.perf_counter() - started, 3)
            history_log.append(entry)
            log.info("epoch %d loss %.4f val mAP %s", epoch, entry["mean_loss"], entry.get("val_map"))
            if log_file:
                log_file.write(json.dumps(entry) + "\n")
                log_file.flush()

            score = entry.get("val_map", epoch)
            if score > best[0]:
                best = (score, epoch, model.snapshot())
            if checkpoint_dir and train_cfg.checkpoint_every and epoch % train_cfg.checkpoint_every == 0:
                save_model(model, f"{checkpoint_dir}/epoch{epoch:03d}.ckpt")
    finally:
        if log_file:
            log_file.close()

    model.load_snapshot(best[2])
    return TrainResult(model, history_log, best[1])
