"""Synchronous vectorized environment with autoreset."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..errors import InvalidInputError


class VectorizedEnv:
    """``num_envs`` independent copies of one environment stepped in lockstep.

    Slot ``i`` draws from its own Philox substream spawned from ``seed``, so
    results do not depend on the order or thread in which slots are stepped.
    When a slot finishes an episode it is reset immediately; the returned
    observation is the fresh one and ``info["final_observation"]`` holds the
    observation that ended the episode.
    """

    def __init__(self, env_fn, num_envs: int, seed: int = 0, threads: int = 1):
        if num_envs < 1:
            raise InvalidInputError("num_envs must be positive")
        self.envs = [env_fn() for _ in range(num_envs)]
        self.spec = self.envs[0].spec
        self.num_envs = num_envs
        self.seed = seed
        self.threads = max(1, int(threads))
        self.timesteps = np.zeros(num_envs, dtype=np.int64)
        self.episode_returns = np.zeros(num_envs)
        self._obs = None

    @property
    def observations(self):
        return self._obs

    def _stack(self, obs_list):
        if self.spec.observation_kind == "discrete":
            return np.asarray(obs_list, dtype=np.int64)
        return np.stack([np.asarray(o, dtype=np.float64) for o in obs_list])

    def reset(self, seed: int | None = None):
        if seed is not None:
            self.seed = seed
        seeds = np.random.SeedSequence(self.seed).spawn(self.num_envs)
        obs = [env.reset(s) for env, s in zip(self.envs, seeds)]
        self.timesteps[:] = 0
        self.episode_returns[:] = 0.0
        self._obs = self._stack(obs)
        return self._obs

    def _step_slot(self, i, action):
        env = self.envs[i]
        obs, reward, terminated, truncated = env.step(action)
        final = obs
        if terminated or truncated:
            obs = env.reset()
        return obs, final, reward, terminated, truncated

    def step(self, actions):
        """Step every slot; returns ``(obs, rewards, terminated, truncated, info)``.

        ``info`` carries ``final_observation`` (true successor of this step),
        ``episode_returns`` (undiscounted totals of episodes that just ended,
        NaN elsewhere) and ``timesteps`` (episode index of the returned obs).
        """
        if self._obs is None:
            raise InvalidInputError("reset() must be called before step()")
        if len(actions) != self.num_envs:
            raise InvalidInputError(f"got {len(actions)} actions for {self.num_envs} envs")
        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                results = list(pool.map(self._step_slot, range(self.num_envs), actions))
        else:
            results = [self._step_slot(i, a) for i, a in enumerate(actions)]
        obs, final, rewards, term, trunc = zip(*results)
        rewards = np.asarray(rewards, dtype=np.float64)
        term = np.asarray(term, dtype=bool)
        trunc = np.asarray(trunc, dtype=bool)
        done = term | trunc
        self.episode_returns += rewards
        finished = np.where(done, self.episode_returns, np.nan)
        self.episode_returns[done] = 0.0
        self.timesteps = np.where(done, 0, self.timesteps + 1)
        self._obs = self._stack(obs)
        info = {"final_observation": self._stack(final), "episode_returns": finished,
                "timesteps": self.timesteps.copy()}
        return self._obs, rewards, term, trunc, info
