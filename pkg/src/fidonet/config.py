"""Model and training configuration.

Field names here are the single source of truth for config-file keys;
the CLI loads TOML or JSON documents whose sections mirror these
dataclasses exactly and rejects unknown keys.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .providers import ProviderConfig

CNN_CHANNELS = (16, 32, 64, 128)
N_CLASSES = 10


@dataclass(frozen=True)
class ModelConfig:
    """Architecture dimensions; the channel counts of the conv block and
    the 10-way class head are fixed."""

    n_fft: int = 512
    n_filters: int = 128
    kernel_len: int = 251
    d_ws: int = 1280
    heads: int = 8
    concat_mode: str = "feature"  # "feature" | "temporal"
    temporal_width: int = 128
    blstm_hidden: int = 128
    dense_dim: int = 128
    layer_norm: bool = False
    dtype: str = "f32"  # "f32" | "f64"

    def __post_init__(self):
        if self.concat_mode not in ("feature", "temporal"):
            raise ConfigError(f"unknown concat_mode {self.concat_mode!r}")
        if self.dtype not in ("f32", "f64"):
            raise ConfigError(f"unknown dtype {self.dtype!r}")
        for name, d in (("d_ps", self.d_ps), ("d_fb", self.n_filters), ("d_ws", self.d_ws)):
            if d % self.heads != 0:
                raise ConfigError(f"{name}={d} not divisible by {self.heads} heads")

    @property
    def d_ps(self) -> int:
        return self.n_fft // 2

    @property
    def d_fb(self) -> int:
        return self.n_filters

    @property
    def adapter_dim(self) -> int:
        return CNN_CHANNELS[-1]

    @property
    def channel_width(self) -> int:
        """Per-channel fused feature width entering the assessment stage:
        conv output plus adapter output in feature mode, conv output alone
        in the temporal ablation mode."""
        if self.concat_mode == "feature":
            return CNN_CHANNELS[-1] + self.adapter_dim
        return CNN_CHANNELS[-1]

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "f32" else np.float64


def tiny_model_config(**overrides) -> ModelConfig:
    """Desk-scale preset: d_ps=16, d_fb=8, d_ws=16, two heads."""
    base = dict(n_fft=32, n_filters=8, d_ws=16, heads=2)
    base.update(overrides)
    return ModelConfig(**base)


@dataclass(frozen=True)
class LossWeights:
    gamma1: float = 1.0
    gamma2: float = 0.4
    gamma3: float = 0.2

    def __post_init__(self):
        if min(self.gamma1, self.gamma2, self.gamma3) < 0:
            raise ConfigError("loss weights must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 50
    batch_size: int = 1
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    frame_loss_weight: float = 1.0
    early_stop_patience: int = 10
    grad_clip: float | None = None
    target_train_loss: float | None = None
    checkpoint_dir: str | None = None
    provider: ProviderConfig = field(default_factory=ProviderConfig)

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")


# -- (de)serialization ---------------------------------------------------


def config_to_dict(model: ModelConfig, train: TrainConfig | None = None) -> dict:
    doc: dict = {"model": dataclasses.asdict(model)}
    if train is not None:
        td = dataclasses.asdict(train)
        td["loss_weights"] = dataclasses.asdict(train.loss_weights)
        td["provider"] = dataclasses.asdict(train.provider)
        doc["train"] = td
    return doc


def _build(cls, data: dict, section: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    return cls(**data)


def configs_from_dict(doc: dict) -> tuple[ModelConfig, TrainConfig]:
    unknown = set(doc) - {"model", "train"}
    if unknown:
        raise ConfigError(f"unknown top-level section(s): {', '.join(sorted(unknown))}")
    model = _build(ModelConfig, dict(doc.get("model", {})), "model")
    tdata = dict(doc.get("train", {}))
    if "loss_weights" in tdata:
        tdata["loss_weights"] = _build(LossWeights, dict(tdata["loss_weights"]), "train.loss_weights")
    if "provider" in tdata:
        tdata["provider"] = _build(ProviderConfig, dict(tdata["provider"]), "train.provider")
    train = _build(TrainConfig, tdata, "train")
    return model, train


def load_config_file(path: str | Path) -> tuple[ModelConfig, TrainConfig]:
    """Load a TOML or JSON config document."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix == ".json":
        doc = json.loads(text)
    elif path.suffix == ".toml":
        try:
            import tomllib  # Python >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        doc = tomllib.loads(text)
    else:
        raise ConfigError(f"config file must be .toml or .json, got {path.suffix!r}")
    return configs_from_dict(doc)
