"""Finite-horizon tabular MDPs: data type, text format, sampler and trajectory enumeration.

Text format (whitespace separated, ``#`` starts a comment, line breaks are not
significant)::

    S A T
    rho_0[0] ... rho_0[S-1]
    P[s, a, s']   for s in 0..S-1, a in 0..A-1, s' in 0..S-1   (row-major)
    r[s, a, s']   same order

Episodes last exactly T steps; absorbing states are modelled with self-loops.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from ..errors import InvalidInputError, ResourceError
from .base import Env, EnvSpec
from .cliffwalking import MOVES, grid_transition

ENUMERATION_LIMIT = 10**7


@dataclass(frozen=True, eq=False)
class TabularMDP:
    transitions: np.ndarray   # (S, A, S)
    rewards: np.ndarray       # (S, A, S)
    initial: np.ndarray       # (S,)
    horizon: int

    def __post_init__(self):
        P = np.asarray(self.transitions, dtype=np.float64)
        R = np.asarray(self.rewards, dtype=np.float64)
        rho = np.asarray(self.initial, dtype=np.float64)
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "rewards", R)
        object.__setattr__(self, "initial", rho)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise InvalidInputError(f"transition tensor must be (S, A, S), got {P.shape}")
        if R.shape != P.shape:
            raise InvalidInputError(f"reward tensor shape {R.shape} != {P.shape}")
        if rho.shape != (P.shape[0],):
            raise InvalidInputError(f"initial distribution must have {P.shape[0]} entries")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=2) - 1.0) > 1e-12):
            raise InvalidInputError("each P(.|s,a) must be a probability vector")
        if np.any(rho < 0) or abs(rho.sum() - 1.0) > 1e-12:
            raise InvalidInputError("initial distribution must sum to 1")
        if not np.all(np.isfinite(R)):
            raise InvalidInputError("rewards must be finite")
        if int(self.horizon) < 1:
            raise InvalidInputError("horizon must be positive")

    @property
    def num_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def reward_bound(self) -> float:
        return max(float(np.max(np.abs(self.rewards))), 1e-12)

    def to_text(self) -> str:
        S, A = self.num_states, self.num_actions
        lines = [f"{S} {A} {self.horizon}", " ".join(repr(float(v)) for v in self.initial),
                 "# P[s, a, :]"]
        lines += [" ".join(repr(float(v)) for v in self.transitions[s, a])
                  for s in range(S) for a in range(A)]
        lines.append("# r[s, a, :]")
        lines += [" ".join(repr(float(v)) for v in self.rewards[s, a])
                  for s in range(S) for a in range(A)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TabularMDP":
        tokens = []
        for line in text.splitlines():
            tokens.extend(line.split("#", 1)[0].split())
        if len(tokens) < 3:
            raise InvalidInputError("tabular MDP file needs a 'S A T' header")
        try:
            S, A, T = (int(t) for t in tokens[:3])
            values = np.array([float(t) for t in tokens[3:]])
        except ValueError as exc:
            raise InvalidInputError(f"malformed tabular MDP file: {exc}") from None
        need = S + 2 * S * A * S
        if values.size != need:
            raise InvalidInputError(f"expected {need} numbers after header, found {values.size}")
        rho = values[:S]
        P = values[S:S + S * A * S].reshape(S, A, S)
        R = values[S + S * A * S:].reshape(S, A, S)
        return cls(P, R, rho, T)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "TabularMDP":
        return cls.from_text(Path(path).read_text())


class TabularEnv(Env):
    def __init__(self, mdp: TabularMDP, seed=None, env_id="tabular"):
        super().__init__(seed)
        self.mdp = mdp
        self.spec = EnvSpec(env_id, "discrete", mdp.num_states, "discrete", mdp.num_actions,
                            reward_bound=mdp.reward_bound, max_episode_steps=mdp.horizon)

    def _reset(self):
        self.state = int(self.rng.choice(self.mdp.num_states, p=self.mdp.initial))
        return self.state

    def _transition(self, action):
        s = self.state
        nxt = int(self.rng.choice(self.mdp.num_states, p=self.mdp.transitions[s, action]))
        self.state = nxt
        return nxt, self.mdp.rewards[s, action, nxt], False


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray    # (T+1,)
    actions: np.ndarray   # (T,)
    rewards: np.ndarray   # (T,)


@dataclass(frozen=True, eq=False)
class EnumeratedTrajectories:
    """All positive-probability paths, stored column-wise.

    ``dynamics_prob`` is the policy-independent factor
    ``rho_0(s_0) * prod_t P(s_{t+1} | s_t, a_t)``.
    """

    states: np.ndarray         # (M, T+1)
    actions: np.ndarray        # (M, T)
    rewards: np.ndarray        # (M, T)
    dynamics_prob: np.ndarray  # (M,)

    def __len__(self) -> int:
        return len(self.dynamics_prob)

    def __iter__(self) -> Iterator[tuple[Trajectory, float]]:
        for i in range(len(self)):
            yield (Trajectory(self.states[i], self.actions[i], self.rewards[i]),
                   float(self.dynamics_prob[i]))


def enumerate_trajectories(mdp: TabularMDP, horizon: int | None = None,
                           limit: int = ENUMERATION_LIMIT) -> EnumeratedTrajectories:
    T = mdp.horizon if horizon is None else int(horizon)
    S, A = mdp.num_states, mdp.num_actions
    starts = np.flatnonzero(mdp.initial > 0)
    states = starts[:, None]
    actions = np.zeros((len(starts), 0), dtype=np.int64)
    rewards = np.zeros((len(starts), 0))
    prob = mdp.initial[starts]
    for _ in range(T):
        cur = states[:, -1]
        # successors with nonzero probability, per (path, action)
        pa, aa, sa = np.nonzero(mdp.transitions[cur] > 0)
        if len(pa) > limit:
            raise ResourceError(f"trajectory enumeration exceeds {limit} paths")
        nxt_p = mdp.transitions[cur[pa], aa, sa]
        states = np.concatenate([states[pa], sa[:, None]], axis=1)
        actions = np.concatenate([actions[pa], aa[:, None]], axis=1)
        rewards = np.concatenate([rewards[pa], mdp.rewards[cur[pa], aa, sa][:, None]], axis=1)
        prob = prob[pa] * nxt_p
    return EnumeratedTrajectories(states, actions.astype(np.int64), rewards, prob)


# -- standard small MDPs -------------------------------------------------------

def bandit_mdp(arm_rewards=(0.0, 1.0)) -> TabularMDP:
    A = len(arm_rewards)
    P = np.ones((1, A, 1))
    R = np.asarray(arm_rewards, dtype=np.float64).reshape(1, A, 1)
    return TabularMDP(P, R, np.ones(1), horizon=1)


def chain_mdp(n_states=3, horizon=3, slip=0.0) -> TabularMDP:
    """Chain with actions left (0) and right (1); reward 1 for landing on the last state.

    With ``slip > 0`` the chosen move fails and the agent stays put with that
    probability.
    """
    P = np.zeros((n_states, 2, n_states))
    R = np.zeros_like(P)
    for s in range(n_states):
        for a, target in ((0, max(s - 1, 0)), (1, min(s + 1, n_states - 1))):
            P[s, a, target] += 1.0 - slip
            P[s, a, s] += slip
    R[:, :, n_states - 1] = 1.0
    rho = np.zeros(n_states)
    rho[0] = 1.0
    return TabularMDP(P, R, rho, horizon)


def stochastic_chain_mdp(n_states=4, horizon=4, slip=0.2) -> TabularMDP:
    return chain_mdp(n_states, horizon, slip)


def cliff_grid_mdp(n_rows=3, n_cols=4, horizon=6) -> TabularMDP:
    """Cliff grid as a fixed-horizon MDP; the goal becomes an absorbing zero-reward state."""
    S = n_rows * n_cols
    goal = S - 1
    P = np.zeros((S, 4, S))
    R = np.zeros_like(P)
    for s in range(S):
        r0, c0 = divmod(s, n_cols)
        for a in MOVES:
            if s == goal:
                P[s, a, s] = 1.0
                continue
            r, c, rew, _ = grid_transition(r0, c0, a, n_rows, n_cols)
            P[s, a, r * n_cols + c] = 1.0
            R[s, a, r * n_cols + c] = rew
    rho = np.zeros(S)
    rho[(n_rows - 1) * n_cols] = 1.0
    return TabularMDP(P, R, rho, horizon)
