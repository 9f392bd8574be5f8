"""Central finite-difference oracle shared by the gradient tests."""

import numpy as np

from gpg_rl.policy import CategoricalMLPPolicy, GaussianMLPPolicy, TabularSoftmaxPolicy


def random_models(kind, rng, n):
    """``n`` random ``(model, obs_batch, action_batch)`` probes for a policy head."""
    out = []
    for _ in range(n):
        seed = int(rng.integers(1 << 30))
        batch = int(rng.integers(1, 6))
        if kind == "categorical":
            m = CategoricalMLPPolicy("box", 4, 3, hidden=(8, 8), seed=seed)
            m.theta += rng.normal(scale=0.5, size=m.theta.size)
            obs = rng.normal(size=(batch, 4))
            act = rng.integers(3, size=batch)
        elif kind == "categorical-discrete":
            m = CategoricalMLPPolicy("discrete", 6, 4, hidden=(8,), seed=seed)
            m.theta += rng.normal(scale=0.5, size=m.theta.size)
            obs = rng.integers(6, size=batch)
            act = rng.integers(4, size=batch)
        elif kind == "gaussian":
            m = GaussianMLPPolicy("box", 3, 2, hidden=(8, 8), seed=seed)
            m.theta += rng.normal(scale=0.3, size=m.theta.size)
            obs = rng.normal(size=(batch, 3))
            act = rng.normal(size=(batch, 2))
        else:
            m = TabularSoftmaxPolicy(5, 3, rng.normal(size=15))
            obs = rng.integers(5, size=batch)
            act = rng.integers(3, size=batch)
        out.append((m, obs, act))
    return out


def directional_fd_error(model, obs, act, rng, weights=None):
    """Relative error between <grad, v> and a central difference of sum(w * log pi).

    Step ``h = 1e-6 * max(1, |theta|_inf)`` along a random unit direction.
    """
    w = np.ones(len(obs)) if weights is None else weights
    g = model.grad_log_prob(obs, act, weights=w)
    v = rng.normal(size=model.theta.size)
    v /= np.linalg.norm(v)
    h = 1e-6 * max(1.0, float(np.max(np.abs(model.theta))))
    theta = model.theta.copy()
    model.theta = theta + h * v
    up = np.sum(w * model.log_prob(obs, act))
    model.theta = theta - h * v
    down = np.sum(w * model.log_prob(obs, act))
    model.theta = theta
    fd = (up - down) / (2 * h)
    return abs(fd - g @ v) / max(abs(fd), abs(g @ v), 1e-8)
