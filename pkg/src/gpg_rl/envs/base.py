"""Environment specification and the single-env base class.

Every environment owns a Philox generator (numpy's counter-based bit
generator).  ``reset(seed)`` reseeds it; ``reset()`` continues the stream, so
autoreset episodes inside one vector slot stay on that slot's substream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError


def make_rng(seed) -> np.random.Generator:
    """Philox generator from an int, a SeedSequence, or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class EnvSpec:
    env_id: str
    observation_kind: str          # "box" or "discrete"
    observation_size: int          # vector dim, or number of states
    action_kind: str               # "discrete" or "box"
    action_size: int               # number of actions, or action dim
    reward_bound: float
    max_episode_steps: int
    action_low: float = -1.0
    action_high: float = 1.0

    def __post_init__(self):
        if self.observation_kind not in ("box", "discrete"):
            raise InvalidInputError(f"unknown observation kind {self.observation_kind!r}")
        if self.action_kind not in ("box", "discrete"):
            raise InvalidInputError(f"unknown action kind {self.action_kind!r}")
        if not (np.isfinite(self.reward_bound) and self.reward_bound > 0):
            raise InvalidInputError("reward bound must be finite and positive")
        if self.max_episode_steps < 1:
            raise InvalidInputError("max_episode_steps must be positive")


class Env:
    """Single environment; subclasses implement ``_reset`` and ``_transition``."""

    spec: EnvSpec

    def __init__(self, seed=None):
        self.rng = make_rng(seed)
        self.elapsed = 0
        self._needs_reset = True

    def reset(self, seed=None):
        if seed is not None:
            self.rng = make_rng(seed)
        self.elapsed = 0
        self._needs_reset = False
        return self._reset()

    def step(self, action):
        """Advance one transition; returns ``(obs, reward, terminated, truncated)``."""
        if self._needs_reset:
            raise InvalidInputError("step() called before reset() or after episode end")
        action = self._check_action(action)
        obs, reward, terminated = self._transition(action)
        self.elapsed += 1
        truncated = (not terminated) and self.elapsed >= self.spec.max_episode_steps
        if terminated or truncated:
            self._needs_reset = True
        return obs, float(reward), bool(terminated), bool(truncated)

    def _check_action(self, action):
        spec = self.spec
        if spec.action_kind == "discrete":
            a = int(action)
            if a != action or not 0 <= a < spec.action_size:
                raise InvalidInputError(f"action {action!r} outside 0..{spec.action_size - 1}")
            return a
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.size != spec.action_size:
            raise InvalidInputError(f"action has {a.size} dims, expected {spec.action_size}")
        return np.clip(a, spec.action_low, spec.action_high)

    def _reset(self):
        raise NotImplementedError

    def _transition(self, action):
        raise NotImplementedError
