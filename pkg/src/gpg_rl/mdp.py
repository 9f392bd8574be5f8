"""Trajectory data model: step records, episode segments, rollout groups and returns.

A rollout buffer is the raw ``(rollout_length, num_envs)`` stream produced by a
vectorized environment.  :func:`segment_rollout` cuts it into episode segments
at done markers; the resulting :class:`RolloutGroup` is the unit over which
group baselines are estimated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterator, Sequence

import numpy as np

from .errors import CorruptionError, InvalidInputError


@dataclass(frozen=True)
class StepRecord:
    observation: Any
    action: Any
    reward: float
    behavior_log_prob: float
    episode_timestep: int
    terminated: bool = False
    truncated: bool = False


@dataclass(frozen=True, eq=False)
class EpisodeSegment:
    """One contiguous run of steps from a single environment slot.

    Columns are stored as arrays; ``steps`` rebuilds the per-step view.
    ``terminated``/``truncated`` describe the last step only.  A segment that
    ends because the rollout buffer ran out has both flags false.
    ``final_observation`` is the successor of the last step (the true final
    observation for done steps, not the autoreset one).
    """

    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    log_probs: np.ndarray
    timesteps: np.ndarray
    terminated: bool = False
    truncated: bool = False
    final_observation: Any = None
    env_index: int = 0

    def __post_init__(self):
        n = len(self.rewards)
        if n == 0:
            raise InvalidInputError("episode segment must be nonempty")
        for name in ("observations", "actions", "log_probs", "timesteps"):
            if len(getattr(self, name)) != n:
                raise InvalidInputError(f"segment column {name!r} has length "
                                        f"{len(getattr(self, name))}, expected {n}")
        if self.terminated and self.truncated:
            raise InvalidInputError("a segment cannot be both terminated and truncated")
        ts = np.asarray(self.timesteps)
        if ts[0] < 0 or np.any(np.diff(ts) != 1):
            raise InvalidInputError("episode timesteps must be consecutive nonnegative integers")

    @classmethod
    def from_steps(cls, steps: Sequence[StepRecord], final_observation=None, env_index=0):
        if not steps:
            raise InvalidInputError("episode segment must be nonempty")
        for s in steps[:-1]:
            if s.terminated or s.truncated:
                raise InvalidInputError("done flags may only be set on the last step")
        return cls(
            observations=np.asarray([s.observation for s in steps]),
            actions=np.asarray([s.action for s in steps]),
            rewards=np.asarray([s.reward for s in steps], dtype=np.float64),
            log_probs=np.asarray([s.behavior_log_prob for s in steps], dtype=np.float64),
            timesteps=np.asarray([s.episode_timestep for s in steps], dtype=np.int64),
            terminated=bool(steps[-1].terminated),
            truncated=bool(steps[-1].truncated),
            final_observation=final_observation,
            env_index=env_index,
        )

    @property
    def complete(self) -> bool:
        """True when the episode ended here (termination or time-limit truncation)."""
        return self.terminated or self.truncated

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def steps(self) -> list[StepRecord]:
        n = len(self)
        return [
            StepRecord(
                observation=self.observations[i],
                action=self.actions[i],
                reward=float(self.rewards[i]),
                behavior_log_prob=float(self.log_probs[i]),
                episode_timestep=int(self.timesteps[i]),
                terminated=self.terminated and i == n - 1,
                truncated=self.truncated and i == n - 1,
            )
            for i in range(n)
        ]


@dataclass(frozen=True)
class RolloutGroup:
    segments: list[EpisodeSegment]
    nominal_group_size: int
    iteration_index: int = 0

    def __post_init__(self):
        if self.nominal_group_size < 1:
            raise InvalidInputError("nominal group size must be positive")

    @property
    def effective_group_size(self) -> int:
        return len(self.segments)

    def __iter__(self) -> Iterator[EpisodeSegment]:
        return iter(self.segments)

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def num_steps(self) -> int:
        return sum(len(s) for s in self.segments)


@dataclass
class RolloutBuffer:
    """Raw per-env step stream, every array indexed ``[step, env, ...]``.

    ``timesteps[k, e]`` is the within-episode index of ``observations[k, e]``;
    ``next_observations[k, e]`` is the true successor of that step, which for
    a done step is the final observation rather than the autoreset one.
    """

    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    log_probs: np.ndarray
    timesteps: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray
    next_observations: np.ndarray
    extras: dict = field(default_factory=dict)

    @property
    def rollout_length(self) -> int:
        return self.rewards.shape[0]

    @property
    def num_envs(self) -> int:
        return self.rewards.shape[1]


def compute_returns(segment, gamma: float) -> np.ndarray:
    """Discounted reward-to-go ``R_t = r_t + gamma * R_{t+1}`` for one segment.

    ``segment`` may be an :class:`EpisodeSegment` or a plain reward sequence.
    Nothing is bootstrapped past the last step.
    """
    rewards = segment.rewards if isinstance(segment, EpisodeSegment) else segment
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.ndim != 1 or rewards.size == 0:
        raise InvalidInputError("returns need a nonempty 1-D reward sequence")
    if not 0.0 <= gamma <= 1.0:
        raise InvalidInputError(f"gamma must lie in [0, 1], got {gamma}")
    out = np.empty_like(rewards)
    acc = 0.0
    for t in range(rewards.size - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def segment_rollout(buffer: RolloutBuffer, num_envs: int | None = None,
                    iteration_index: int = 0) -> RolloutGroup:
    """Split a rollout buffer into episode segments at done markers.

    Segments are ordered by env slot, then by time.  A run still open when the
    buffer ends becomes a segment with both done flags false.
    """
    if num_envs is None:
        num_envs = buffer.num_envs
    if buffer.rewards.ndim != 2 or buffer.num_envs != num_envs:
        raise InvalidInputError(f"buffer holds {buffer.rewards.shape[1:]} envs, "
                                f"expected {num_envs}")
    length = buffer.rollout_length
    term = np.asarray(buffer.terminated, dtype=bool)
    trunc = np.asarray(buffer.truncated, dtype=bool)
    ts = np.asarray(buffer.timesteps)
    if np.any(term & trunc):
        k, e = np.argwhere(term & trunc)[0]
        raise CorruptionError(f"step {k} of env {e} is both terminated and truncated")
    done = term | trunc

    segments = []
    for e in range(num_envs):
        start = 0
        for k in range(length):
            if k > 0:
                expected = 0 if done[k - 1, e] else ts[k - 1, e] + 1
                if ts[k, e] != expected:
                    raise CorruptionError(
                        f"env {e}: timestep {ts[k, e]} at step {k} but expected {expected}"
                        + (" (missing reset after done)" if done[k - 1, e] else ""))
            if done[k, e] or k == length - 1:
                sl = slice(start, k + 1)
                segments.append(EpisodeSegment(
                    observations=buffer.observations[sl, e],
                    actions=buffer.actions[sl, e],
                    rewards=np.asarray(buffer.rewards[sl, e], dtype=np.float64),
                    log_probs=np.asarray(buffer.log_probs[sl, e], dtype=np.float64),
                    timesteps=np.asarray(ts[sl, e], dtype=np.int64),
                    terminated=bool(term[k, e]),
                    truncated=bool(trunc[k, e]),
                    final_observation=buffer.next_observations[k, e],
                    env_index=e,
                ))
                start = k + 1
    return RolloutGroup(segments, nominal_group_size=num_envs,
                        iteration_index=iteration_index)
