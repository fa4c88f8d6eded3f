"""Run configuration: a TOML file with ``[data]``, ``[model]`` and ``[train]`` tables.

Example::

    seed = 3
    variant = "adaptive"

    [data]
    num_users = [200, 40, 40]
    noise = 0.1

    [model]
    latent_dim = 128

    [train]
    epochs = 30

Keys map one-to-one onto the keyword arguments of ``generate_synthetic``,
``ModelConfig`` and ``TrainConfig``. Command-line flags override file values.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass, field, fields, replace

import tomli

from .data import generate_synthetic
from .networks import VARIANTS, ModelConfig
from .training import TrainConfig

TOP_LEVEL_KEYS = ("seed", "variant", "history_size")
_TUPLE_KEYS = {"num_users", "frame_range", "segment_range", "channels"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    variant: str = "adaptive"
    history_size: int | None = None
    data: dict = field(default_factory=dict)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def model_for(self, variant=None):
        return self.model.for_variant(variant or self.variant)

    def train_config(self):
        return replace(self.train, seed=self.seed, history_size=self.history_size)

    def data_kwargs(self):
        return {**self.data, "seed": self.seed}


def _data_keys():
    return [p for p in inspect.signature(generate_synthetic).parameters if p != "seed"]


def _check_keys(section, table, allowed):
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    for key in table:
        if key not in allowed:
            raise ConfigError(f"unknown key '{section}.{key}'")


def _tuples(table):
    return {k: tuple(v) if k in _TUPLE_KEYS and isinstance(v, list) else v for k, v in table.items()}


def from_dict(raw):
    """Validate a parsed config mapping into a :class:`RunConfig`."""
    for key in raw:
        if key in ("data", "model", "train"):
            continue
        if key not in TOP_LEVEL_KEYS:
            raise ConfigError(f"unknown key '{key}'")
    data = raw.get("data", {})
    model = raw.get("model", {})
    train = raw.get("train", {})
    _check_keys("data", data, _data_keys())
    # variant-controlled fields are chosen by ``variant``, not set directly
    model_keys = [f.name for f in fields(ModelConfig) if f.name not in ("normalization", "fusion", "history_encoder")]
    _check_keys("model", model, model_keys)
    _check_keys("train", train, [f.name for f in fields(TrainConfig) if f.name not in ("seed", "history_size")])

    cfg = RunConfig(data=_tuples(data))
    if "seed" in raw:
        cfg.seed = _typed("seed", raw["seed"], int)
    if "variant" in raw:
        cfg.variant = _variant(raw["variant"])
    if "history_size" in raw:
        cfg.history_size = _typed("history_size", raw["history_size"], int)
    try:
        cfg.model = ModelConfig(**_tuples(model))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[model]: {exc}") from exc
    try:
        cfg.train = TrainConfig(**train)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[train]: {exc}") from exc
    return cfg


def _typed(key, value, kind):
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ConfigError(f"key '{key}' must be {kind.__name__}, got {value!r}")
    return value


def _variant(name):
    if name not in VARIANTS:
        raise ConfigError(f"key 'variant': unknown variant {name!r}")
    return name


def load_config(path=None):
    if path is None:
        return RunConfig()
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(raw)


def apply_overrides(cfg, seed=None, variant=None, history_size=None):
    if seed is not None:
        cfg.seed = seed
    if variant is not None:
        cfg.variant = _variant(variant)
    if history_size is not None:
        if history_size < 1:
            raise ConfigError("history_size must be >= 1")
        cfg.history_size = history_size
    return cfg
