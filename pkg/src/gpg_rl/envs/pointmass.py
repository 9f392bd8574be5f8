"""2-D point mass pushed towards the origin.

State is ``(x, y, vx, vy)``, every coordinate clipped to [-2, 2].  The action is
a force in [-1, 1]^2.  Reward is minus the distance to the origin after the
move, so it is bounded by 2*sqrt(2).  Episodes never terminate and are
truncated after 100 steps.
"""

import math

import numpy as np

from .base import Env, EnvSpec

DT = 0.1
BOUND = 2.0


class PointMass(Env):
    spec = EnvSpec("pointmass", "box", 4, "box", 2, reward_bound=2 * math.sqrt(2.0),
                   max_episode_steps=100, action_low=-1.0, action_high=1.0)

    def _reset(self):
        pos = self.rng.uniform(-1.5, 1.5, size=2)
        self.state = np.concatenate([pos, np.zeros(2)])
        return self.state.copy()

    def _transition(self, action):
        vel = np.clip(self.state[2:] + DT * action, -BOUND, BOUND)
        pos = np.clip(self.state[:2] + DT * vel, -BOUND, BOUND)
        self.state = np.concatenate([pos, vel])
        return self.state.copy(), -math.hypot(pos[0], pos[1]), False
