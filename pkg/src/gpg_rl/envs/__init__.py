"""Built-in environments and the string-id registry.

Ids: ``cartpole``, ``cliffwalking``, ``pointmass`` and ``tabular:<path>``.
"""

from functools import partial

from ..errors import ConfigError
from .base import Env, EnvSpec, make_rng
from .cartpole import CartPole
from .cliffwalking import CliffWalking
from .pointmass import PointMass
from .tabular import (TabularEnv, TabularMDP, Trajectory, bandit_mdp, chain_mdp,
                      cliff_grid_mdp, enumerate_trajectories, stochastic_chain_mdp)
from .vector import VectorizedEnv

REGISTRY = {"cartpole": CartPole, "cliffwalking": CliffWalking, "pointmass": PointMass}


def env_factory(env_id: str):
    """Zero-argument constructor for the environment named ``env_id``."""
    if env_id.startswith("tabular:"):
        mdp = TabularMDP.load(env_id.split(":", 1)[1])
        return partial(TabularEnv, mdp, env_id=env_id)
    try:
        return REGISTRY[env_id]
    except KeyError:
        raise ConfigError(f"unknown environment id {env_id!r}; expected one of "
                          f"{sorted(REGISTRY)} or tabular:<path>") from None


def make_env(env_id: str, seed=None) -> Env:
    env = env_factory(env_id)()
    if seed is not None:
        env.rng = make_rng(seed)
    return env


def make_vector_env(env_id: str, num_envs: int, seed: int = 0, threads: int = 1):
    return VectorizedEnv(env_factory(env_id), num_envs, seed=seed, threads=threads)


__all__ = [
    "Env", "EnvSpec", "CartPole", "CliffWalking", "PointMass", "TabularEnv", "TabularMDP",
    "Trajectory", "VectorizedEnv", "bandit_mdp", "chain_mdp", "cliff_grid_mdp",
    "enumerate_trajectories", "env_factory", "make_env", "make_rng", "make_vector_env",
    "stochastic_chain_mdp",
]
