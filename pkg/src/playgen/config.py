"""Dataclass configs for the model, training, and the synthetic environment.

Configs round-trip through plain dicts / YAML so runs are reproducible from a
single human-readable file.  ``apply_overrides`` implements the CLI's
``--set a.b=c`` mechanism.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    """Raised for invalid or inconsistent configuration values."""


VAR_MIN_DEFAULT = 1e-4
VAR_MAX_DEFAULT = 1e2


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    ``num_actions`` is the size K of the discrete action space.  Frames are
    ``frame_channels x height x width`` with pixels in [0, 1]; the encoder
    reduces the spatial resolution by ``reduction`` (a power of two).  The
    decoder emits ``decoder_scales`` output heads at resolutions
    ``height / 2**(decoder_scales-1) ... height``.
    """

    num_actions: int = 5
    action_dim: int = 16
    frame_channels: int = 3
    height: int = 64
    width: int = 64
    feature_channels: int = 32
    reduction: int = 4
    base_channels: int = 24
    recurrent_layers: int = 1
    recurrent_channels: int = 64
    decoder_scales: int = 3
    tau: float = 1.0
    hard_sampling: bool = True
    var_min: float = VAR_MIN_DEFAULT
    var_max: float = VAR_MAX_DEFAULT
    # ablation switches
    use_gumbel: bool = True
    use_variability: bool = True
    use_action_loss: bool = True

    def validate(self) -> "ModelConfig":
        if self.num_actions < 2:
            raise ConfigError(f"num_actions must be >= 2, got {self.num_actions}")
        if self.decoder_scales < 1:
            raise ConfigError(f"decoder_scales must be >= 1, got {self.decoder_scales}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.reduction < 1 or (self.reduction & (self.reduction - 1)) != 0:
            raise ConfigError(f"reduction must be a power of two, got {self.reduction}")
        if self.height % self.reduction or self.width % self.reduction:
            raise ConfigError("height/width must be divisible by reduction")
        if 2 ** (self.decoder_scales - 1) > self.reduction:
            raise ConfigError("decoder_scales too large for the spatial reduction")
        if not (0 < self.var_min < self.var_max):
            raise ConfigError("need 0 < var_min < var_max")
        if self.recurrent_layers < 1:
            raise ConfigError("recurrent_layers must be >= 1")
        return self

    @property
    def grid_height(self) -> int:
        return self.height // self.reduction

    @property
    def grid_width(self) -> int:
        return self.width // self.reduction

    @property
    def num_downsamples(self) -> int:
        return int(math.log2(self.reduction))


@dataclass
class LossWeights:
    """Non-negative weights for the optional loss terms.

    The two pixel reconstruction terms are always weighted 1.
    """

    rec_features: float = 1.0
    rec_actions: float = 1.0
    action_info: float = 0.1
    prior_kl: float = 1e-3

    def validate(self) -> "LossWeights":
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v < 0:
                raise ConfigError(f"loss weight {f.name} must be >= 0, got {v}")
        return self


@dataclass
class TrainConfig:
    """Optimization loop settings.

    ``teacher_forced_prefix`` is the number of initial steps whose dynamics
    input features come from real frames; later steps are fed features of the
    model's own reconstructions.  ``None`` means half the sequence length.
    """

    sequence_length: int = 16
    teacher_forced_prefix: int | None = None
    batch_size: int = 4
    learning_rate: float = 2e-4
    total_steps: int = 1000
    seed: int = 0
    centroid_rate: float = 0.05
    grad_clip: float = 5.0
    checkpoint_every: int = 250
    log_every: int = 25
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)

    def validate(self) -> "TrainConfig":
        self.model.validate()
        self.weights.validate()
        if self.sequence_length < 2:
            raise ConfigError("sequence_length must be >= 2")
        tf = self.prefix_steps
        if not (1 <= tf <= self.sequence_length):
            raise ConfigError(
                f"teacher_forced_prefix must be in [1, {self.sequence_length}], got {tf}"
            )
        if not (0 < self.centroid_rate <= 1):
            raise ConfigError(f"centroid_rate must be in (0, 1], got {self.centroid_rate}")
        if self.batch_size < 1 or self.total_steps < 1:
            raise ConfigError("batch_size and total_steps must be >= 1")
        return self

    @property
    def prefix_steps(self) -> int:
        if self.teacher_forced_prefix is None:
            return self.sequence_length // 2
        return self.teacher_forced_prefix


DEFAULT_ACTIONS: dict[str, tuple[int, int]] = {
    "left": (-4, 0),
    "right": (4, 0),
    "up": (0, -4),
    "down": (0, 4),
    "stay": (0, 0),
}


@dataclass
class EnvSpec:
    """Synthetic single-agent environment: one sprite moving on a static
    textured canvas under a small discrete action set.

    Displacements are pixels per frame; per-step Gaussian jitter of scale
    ``jitter`` is added to each axis and the result is rounded to integer
    pixels so rendering stays crisp.  Positions are clamped so the sprite
    always lies fully inside the canvas.
    """

    height: int = 64
    width: int = 64
    sprite_size: int = 9
    actions: dict[str, tuple[int, int]] = field(
        default_factory=lambda: dict(DEFAULT_ACTIONS)
    )
    jitter: float = 0.5
    spawn_margin: int = 24
    sequence_length: int = 16
    sequences: dict[str, int] = field(
        default_factory=lambda: {"train": 500, "val": 64, "test": 64}
    )
    seed: int = 0

    def validate(self) -> "EnvSpec":
        if self.sprite_size < 3 or self.sprite_size % 2 == 0:
            raise ConfigError("sprite_size must be odd and >= 3")
        if self.sprite_size >= min(self.height, self.width):
            raise ConfigError("sprite must fit inside the canvas")
        if self.jitter < 0:
            raise ConfigError("jitter must be >= 0")
        if self.sequence_length < 2:
            raise ConfigError("sequence_length must be >= 2")
        if len(self.actions) < 2:
            raise ConfigError("need at least 2 actions")
        span_x = self.width - self.sprite_size - 2 * self.spawn_margin
        span_y = self.height - self.sprite_size - 2 * self.spawn_margin
        if span_x < 0 or span_y < 0:
            raise ConfigError("spawn_margin leaves no room for the sprite")
        for name, (dx, dy) in self.actions.items():
            if abs(dx) >= self.width - self.sprite_size or abs(dy) >= self.height - self.sprite_size:
                raise ConfigError(f"action {name!r} displacement too large for canvas")
        return self

    @property
    def action_names(self) -> list[str]:
        return list(self.actions.keys())


# ---------------------------------------------------------------------------
# dict / YAML round-tripping


def _from_dict(cls, data: dict[str, Any]):
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping for {cls.__name__}, got {type(data).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        f = names[key]
        if f.name == "model":
            value = _from_dict(ModelConfig, value)
        elif f.name == "weights":
            value = _from_dict(LossWeights, value)
        elif f.name == "actions" and isinstance(value, dict):
            value = {str(k): (int(v[0]), int(v[1])) for k, v in value.items()}
        kwargs[key] = value
    return cls(**kwargs)


def to_dict(cfg) -> dict[str, Any]:
    d = dataclasses.asdict(cfg)

    def clean(obj):
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        if isinstance(obj, tuple):
            return list(obj)
        return obj

    return clean(d)


def model_config_from_dict(data: dict[str, Any]) -> ModelConfig:
    return _from_dict(ModelConfig, data).validate()


def train_config_from_dict(data: dict[str, Any]) -> TrainConfig:
    return _from_dict(TrainConfig, data).validate()


def env_spec_from_dict(data: dict[str, Any]) -> EnvSpec:
    return _from_dict(EnvSpec, data).validate()


def load_yaml(path: str | Path) -> dict[str, Any]:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def save_yaml(cfg, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(to_dict(cfg), fh, sort_keys=False)


def apply_overrides(data: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    """Apply ``key.subkey=value`` overrides on a nested config dict.

    Values are parsed as YAML scalars so ``--set model.tau=0.5`` and
    ``--set model.use_gumbel=false`` both do the right thing.
    """
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r} descends into a non-mapping")
        node[parts[-1]] = value
    return data
