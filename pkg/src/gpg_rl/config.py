"""Training configuration and its flat ``key=value`` text format.

One ``key = value`` pair per line; blank lines and ``#`` comments are ignored.
Keys are exactly the :class:`TrainConfig` field names.  Booleans accept
true/false/1/0/yes/no; ``hidden`` is a comma-separated list of layer widths.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .advantage import parse_binning
from .errors import ConfigError

ALGORITHMS = ("gpg", "ppo", "grpo")


@dataclass(frozen=True)
class TrainConfig:
    env: str = "cartpole"
    algorithm: str = "gpg"
    binning: str = "time"
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    learning_rate: float = 2.5e-4
    anneal_lr: bool = False
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-5
    update_epochs: int = 4
    num_minibatches: int = 4
    num_envs: int = 4
    rollout_length: int = 128
    iterations: int = 200
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    normalize_adv: bool = True
    loo_baseline: bool = False
    exclude_truncated_from_update: bool = False
    hidden: str = "64,64"
    eval_episodes: int = 5
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        parse_binning(self.binning)
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigError(f"gae_lambda must lie in [0, 1], got {self.gae_lambda}")
        if self.clip_eps <= 0:
            raise ConfigError("clip_eps must be positive")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be nonnegative")
        for name in ("update_epochs", "num_minibatches", "num_envs", "rollout_length",
                     "eval_episodes", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.iterations < 0:
            raise ConfigError("iterations must be nonnegative")
        self.hidden_sizes  # validates

    @property
    def hidden_sizes(self) -> tuple:
        try:
            sizes = tuple(int(h) for h in str(self.hidden).split(",") if h.strip())
        except ValueError:
            raise ConfigError(f"hidden must be comma-separated integers, got {self.hidden!r}") from None
        if any(h < 1 for h in sizes):
            raise ConfigError("hidden layer widths must be positive")
        return sizes

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.to_dict().items())

    @classmethod
    def from_mapping(cls, mapping, base: "TrainConfig | None" = None) -> "TrainConfig":
        base = base or cls()
        types = {f.name: f.type for f in fields(cls)}
        changes = {}
        for key, raw in mapping.items():
            key = key.strip().replace("-", "_")
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            changes[key] = _coerce(key, raw, types[key])
        return base.replace(**changes)

    @classmethod
    def from_text(cls, text: str, base: "TrainConfig | None" = None) -> "TrainConfig":
        return cls.from_mapping(parse_key_values(text), base)

    @classmethod
    def from_file(cls, path, base: "TrainConfig | None" = None) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(), base)


def parse_key_values(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(key, raw, typ):
    if not isinstance(raw, str):
        return raw
    try:
        if typ in ("bool", bool):
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in ("int", int):
            return int(raw)
        if typ in ("float", float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {typ}") from None
    return raw


# Per-environment hyperparameter presets applied before user overrides.
PRESETS = {
    "cartpole": {"anneal_lr": True},
    # segments cut by the rollout boundary carry partial returns that bias
    # same-timestep bins once envs desynchronize; dropping them plus a stronger
    # entropy bonus keeps exploration alive until the goal is found
    "cliffwalking": {"exclude_truncated_from_update": True, "learning_rate": 2.5e-3,
                     "entropy_coef": 0.05},
    "pointmass": {"entropy_coef": 0.0},
}


def preset_for(env_id: str) -> TrainConfig:
    key = "tabular" if env_id.startswith("tabular:") else env_id
    return TrainConfig(env=env_id).replace(**PRESETS.get(key, {}))
