"""Cart-pole balancing with the standard benchmark constants and Euler integration."""

import math

import numpy as np

from .base import Env, EnvSpec

GRAVITY = 9.8
CART_MASS = 1.0
POLE_MASS = 0.1
TOTAL_MASS = CART_MASS + POLE_MASS
HALF_LENGTH = 0.5
POLE_MASS_LENGTH = POLE_MASS * HALF_LENGTH
FORCE_MAG = 10.0
TAU = 0.02
X_THRESHOLD = 2.4
THETA_THRESHOLD = 12 * 2 * math.pi / 360


def physics_step(state, force):
    """One Euler step of the cart-pole ODE; ``state = (x, x_dot, theta, theta_dot)``."""
    x, x_dot, theta, theta_dot = state
    costheta = math.cos(theta)
    sintheta = math.sin(theta)
    temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sintheta) / TOTAL_MASS
    thetaacc = (GRAVITY * sintheta - costheta * temp) / (
        HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * costheta * costheta / TOTAL_MASS))
    xacc = temp - POLE_MASS_LENGTH * thetaacc * costheta / TOTAL_MASS
    x = x + TAU * x_dot
    x_dot = x_dot + TAU * xacc
    theta = theta + TAU * theta_dot
    theta_dot = theta_dot + TAU * thetaacc
    return (x, x_dot, theta, theta_dot)


class CartPole(Env):
    spec = EnvSpec("cartpole", "box", 4, "discrete", 2, reward_bound=1.0,
                   max_episode_steps=500)

    def _reset(self):
        self.state = tuple(float(v) for v in self.rng.uniform(-0.05, 0.05, size=4))
        return np.array(self.state)

    def _transition(self, action):
        force = FORCE_MAG if action == 1 else -FORCE_MAG
        self.state = physics_step(self.state, force)
        x, _, theta, _ = self.state
        terminated = (x < -X_THRESHOLD or x > X_THRESHOLD
                      or theta < -THETA_THRESHOLD or theta > THETA_THRESHOLD)
        return np.array(self.state), 1.0, terminated
