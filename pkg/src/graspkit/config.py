"""Run configuration: one JSON file with model / train / data / eval sections."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .encoder import EncoderConfig
from .model import ModelConfig

ENV_PREFIX = "GRASPKIT_"


class ConfigError(ValueError):
    pass


@dataclass
class TrainSection:
    lr: float = 0.001
    momentum: float = 0.99
    batch_size: int = 8
    epochs: int = 30
    max_steps: int | None = None
    lr_decay_every: int = 10
    lr_decay_factor: float = 10.0
    seed: int = 0
    loss_weights: tuple = (0.05, 0.25, 0.5)
    graspability_weight: float = 1.0
    pos_weight: float = 1.0

    def lr_at(self, epoch: int) -> float:
        """Step schedule: divide by ``lr_decay_factor`` every ``lr_decay_every`` epochs."""
        if self.lr_decay_every <= 0:
            return self.lr
        return self.lr / self.lr_decay_factor ** (epoch // self.lr_decay_every)


@dataclass
class DataSection:
    train_scenes: str | None = None
    synth_count: int = 16
    synth_objects: int = 1
    synth_seed: int = 0
    augment: bool = True


@dataclass
class EvalSection:
    score_threshold: float = 0.5
    nms_iou: float = 0.25
    per_category_nms: bool = False


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig.micro)
    train: TrainSection = field(default_factory=TrainSection)
    data: DataSection = field(default_factory=DataSection)
    eval: EvalSection = field(default_factory=EvalSection)
    out_dir: str = "runs/default"

    def validate(self) -> "RunConfig":
        t = self.train
        if not t.lr > 0:
            raise ConfigError("train.lr must be > 0")
        if not 0 <= t.momentum < 1:
            raise ConfigError("train.momentum must be in [0, 1)")
        if t.batch_size < 1 or t.epochs < 1:
            raise ConfigError("train.batch_size and train.epochs must be >= 1")
        if t.lr_decay_factor <= 0:
            raise ConfigError("train.lr_decay_factor must be > 0")
        if len(t.loss_weights) != 3:
            raise ConfigError("train.loss_weights needs three values (box, angle, class)")
        if self.model.k_angle < 2 or self.model.k_obj < 1:
            raise ConfigError("model.k_angle must be >= 2 and model.k_obj >= 1")
        if self.data.synth_count < 1 or self.data.synth_objects < 1:
            raise ConfigError("data.synth_count and data.synth_objects must be >= 1")
        if not 0 <= self.eval.score_threshold <= 1:
            raise ConfigError("eval.score_threshold must be in [0, 1]")
        return self

    def model_dict(self) -> dict:
        m = self.model
        return {**m.encoder.to_dict(), "k_angle": m.k_angle, "k_obj": m.k_obj,
                "fused_dim": m.fused_dim, "head_dim": m.head_dim}

    def to_dict(self) -> dict:
        return {
            "model": self.model_dict(),
            "train": {**asdict(self.train), "loss_weights": list(self.train.loss_weights)},
            "data": asdict(self.data),
            "eval": asdict(self.eval),
            "paths": {"out_dir": self.out_dir},
        }

    def model_hash(self) -> str:
        blob = json.dumps(self.model_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _section(cls, raw: dict, name: str):
    known = {f.name for f in fields(cls)}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown key(s) in {name}: {', '.join(sorted(extra))}")
    return cls(**raw)


def model_from_dict(raw: dict) -> ModelConfig:
    raw = dict(raw)
    head = {k: raw.pop(k) for k in ("k_angle", "k_obj", "fused_dim", "head_dim") if k in raw}
    try:
        enc = EncoderConfig(**raw)
    except TypeError as e:
        raise ConfigError(f"model: {e}") from None
    except ValueError as e:
        raise ConfigError(f"model: {e}") from None
    return ModelConfig(enc, **head)


def config_from_dict(raw: dict) -> RunConfig:
    unknown = set(raw) - {"model", "train", "data", "eval", "paths"}
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    model = model_from_dict(raw["model"]) if "model" in raw else ModelConfig.micro()
    train = _section(TrainSection, raw.get("train", {}), "train")
    train.loss_weights = tuple(train.loss_weights)
    cfg = RunConfig(
        model=model,
        train=train,
        data=_section(DataSection, raw.get("data", {}), "data"),
        eval=_section(EvalSection, raw.get("eval", {}), "eval"),
        out_dir=raw.get("paths", {}).get("out_dir", "runs/default"),
    )
    return apply_env(cfg).validate()


def apply_env(cfg: RunConfig) -> RunConfig:
    """Environment variables override paths only."""
    if os.environ.get(ENV_PREFIX + "OUT_DIR"):
        cfg.out_dir = os.environ[ENV_PREFIX + "OUT_DIR"]
    if os.environ.get(ENV_PREFIX + "TRAIN_SCENES"):
        cfg.data.train_scenes = os.environ[ENV_PREFIX + "TRAIN_SCENES"]
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from None
    cfg = config_from_dict(raw)
    if cfg.data.train_scenes and not Path(cfg.data.train_scenes).is_absolute():
        cfg.data.train_scenes = str(path.parent / cfg.data.train_scenes)
    return cfg


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
