"""Declarative run configuration, JSON (de)serialization, dotted-path
overrides, and the named experiment presets."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from .backbone import BackboneConfig
from .errors import InvalidArgumentError
from .losses import ContrastiveConfig, LossWeights


class ConfigError(InvalidArgumentError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    train_dir: str
    test_dir: str


@dataclass(frozen=True)
class OptimizerConfig:
    lr0: float = 1e-4
    decay: float = 0.9  # Adam first-moment decay
    schedule: str = "cosine"

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ConfigError("optimizer.lr0 must be > 0")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")


@dataclass(frozen=True)
class ProjectorTraining:
    out_channels: int = 4
    epochs: int = 100
    lr: float = 5e-3
    batch_size: int = 4


@dataclass(frozen=True)
class Seeds:
    init: int = 0
    data: int = 1
    buffer: int = 2
    perceptual: int = 3
    projector: int = 4


@dataclass(frozen=True)
class RunConfig:
    tasks: tuple
    backbone: BackboneConfig = field(default_factory=BackboneConfig.desk)
    loss: LossWeights = field(default_factory=LossWeights)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    projector: ProjectorTraining = field(default_factory=ProjectorTraining)
    seeds: Seeds = field(default_factory=Seeds)
    steps_per_task: int = 2000
    patch_size: int = 24
    buffer_capacity: int = 64
    replay_mode: str = "kd"  # "kd" (knowledge replay) or "er" (experience replay)
    joint: bool = False  # merge all task datasets into one training stage

    def __post_init__(self):
        if len(self.tasks) < 1:
            raise ConfigError("at least one task required")
        if self.steps_per_task < 1:
            raise ConfigError("steps_per_task must be >= 1")
        if self.buffer_capacity < 0:
            raise ConfigError("buffer_capacity must be >= 0")
        if self.replay_mode not in ("kd", "er"):
            raise ConfigError(f"unknown replay_mode {self.replay_mode!r}")
        object.__setattr__(self, "tasks", tuple(self.tasks))

    def to_dict(self) -> dict:
        return {
            "tasks": [vars(t).copy() for t in self.tasks],
            "backbone": self.backbone.to_dict(),
            "loss": {
                "beta1": self.loss.beta1,
                "beta2": self.loss.beta2,
                "alpha": self.loss.alpha,
                "lam": self.loss.lam,
            },
            "contrastive": {"tau": self.contrastive.tau,
                            "weights": list(self.contrastive.weights)},
            "optimizer": {"lr0": self.optimizer.lr0, "decay": self.optimizer.decay,
                          "schedule": self.optimizer.schedule},
            "projector": vars(self.projector).copy(),
            "seeds": vars(self.seeds).copy(),
            "steps_per_task": self.steps_per_task,
            "patch_size": self.patch_size,
            "buffer_capacity": self.buffer_capacity,
            "replay_mode": self.replay_mode,
            "joint": self.joint,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = copy.deepcopy(d)
        try:
            return cls(
                tasks=tuple(TaskSpec(**t) for t in d.pop("tasks")),
                backbone=BackboneConfig(**d.pop("backbone", {})),
                loss=LossWeights(**d.pop("loss", {})),
                contrastive=ContrastiveConfig(
                    **{k: tuple(v) if k == "weights" else v
                       for k, v in d.pop("contrastive", {}).items()}
                ),
                optimizer=OptimizerConfig(**d.pop("optimizer", {})),
                projector=ProjectorTraining(**d.pop("projector", {})),
                seeds=Seeds(**d.pop("seeds", {})),
                **d,
            )
        except (TypeError, KeyError, InvalidArgumentError) as e:
            raise ConfigError(str(e)) from e


def load_config(path: Path | str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"{path}: {e}") from e


def apply_override(d: dict, dotted: str, raw_value: str) -> None:
    """Set a dotted-path key, e.g. loss.lam=0.8; values parse as JSON when
    possible, otherwise as strings."""
    keys = dotted.split(".")
    node = d
    for k in keys[:-1]:
        if k not in node:
            node[k] = {}
        if not isinstance(node[k], dict):
            raise ConfigError(f"config section {k!r} in {dotted!r} is not a table")
        node = node[k]
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    node[keys[-1]] = value


# Experiment presets, expressed as dotted-path diffs over a base config.
# full_method vs finetune differ only in the balance weights and the buffer.
PRESETS = {
    "full_method": {"loss.alpha": 1.0, "loss.lam": 0.3, "buffer_capacity": 64},
    "finetune": {"loss.alpha": 0.0, "loss.lam": 0.0, "buffer_capacity": 0},
    "lsw_kd": {"loss.alpha": 1.0, "loss.lam": 0.0, "buffer_capacity": 64},
    "er_lsw": {"loss.alpha": 0.0, "loss.lam": 0.0, "buffer_capacity": 64,
               "replay_mode": "er"},
    "joint": {"joint": True, "loss.alpha": 0.0, "loss.lam": 0.0,
              "buffer_capacity": 0},
    "individual": {"loss.alpha": 0.0, "loss.lam": 0.0, "buffer_capacity": 0},
    "joint_m": {"loss.alpha": 0.0, "loss.lam": 0.0, "buffer_capacity": 64,
                "replay_mode": "er"},
}


def apply_preset(d: dict, name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r} (have {sorted(PRESETS)})")
    out = copy.deepcopy(d)
    for key, value in PRESETS[name].items():
        apply_override(out, key, json.dumps(value))
    return out
