"""4x12 cliff-walking grid.

The agent starts at the bottom-left cell and must reach the bottom-right one.
Cells between them on the bottom row are the cliff: stepping in costs -100 and
sends the agent back to the start without ending the episode.  Every other
move costs -1, including the one that reaches the goal.
"""

import numpy as np

from .base import Env, EnvSpec

UP, RIGHT, DOWN, LEFT = 0, 1, 2, 3
MOVES = {UP: (-1, 0), RIGHT: (0, 1), DOWN: (1, 0), LEFT: (0, -1)}


def grid_transition(row, col, action, n_rows, n_cols):
    """Move on a cliff grid; returns ``(row, col, reward, at_goal)``."""
    dr, dc = MOVES[action]
    r = min(max(row + dr, 0), n_rows - 1)
    c = min(max(col + dc, 0), n_cols - 1)
    if r == n_rows - 1 and 0 < c < n_cols - 1:
        return n_rows - 1, 0, -100.0, False
    return r, c, -1.0, (r == n_rows - 1 and c == n_cols - 1)


class CliffWalking(Env):
    n_rows, n_cols = 4, 12
    spec = EnvSpec("cliffwalking", "discrete", 48, "discrete", 4, reward_bound=100.0,
                   max_episode_steps=200)

    @property
    def start_state(self):
        return (self.n_rows - 1) * self.n_cols

    def _reset(self):
        self.row, self.col = self.n_rows - 1, 0
        return self.start_state

    def _transition(self, action):
        self.row, self.col, reward, done = grid_transition(
            self.row, self.col, action, self.n_rows, self.n_cols)
        return self.row * self.n_cols + self.col, reward, done


def optimal_return(n_rows=4, n_cols=12, max_steps=200):
    """Best achievable undiscounted return from the start, by value iteration."""
    n = n_rows * n_cols
    goal = n - 1
    value = np.zeros(n)
    for _ in range(max_steps):
        new = np.full(n, -np.inf)
        new[goal] = 0.0
        for s in range(n):
            if s == goal:
                continue
            r0, c0 = divmod(s, n_cols)
            for a in MOVES:
                r, c, rew, at_goal = grid_transition(r0, c0, a, n_rows, n_cols)
                cont = 0.0 if at_goal else value[r * n_cols + c]
                new[s] = max(new[s], rew + cont)
        if np.array_equal(new, value):
            break
        value = new
    return float(value[(n_rows - 1) * n_cols])
