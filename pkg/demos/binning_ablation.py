"""
How the baseline bins change learning on a continuous task
==========================================================

A point mass must reach the origin; the reward is the negative distance.  A
single bin for the whole group (the GRPO-like outcome baseline) ignores that
returns-to-go shrink along the episode; binning by timestep or by a spatial
lattice compares like with like.
"""

import numpy as np

from gpg_rl.advantage import group_advantages
from gpg_rl.config import preset_for
from gpg_rl.mdp import EpisodeSegment, compute_returns
from gpg_rl.trainer import Trainer, evaluate

# what the bins do on a tiny hand-made group: three 1-D episodes of four steps,
# starting at different distances from the origin and drifting towards it
starts = [2.0, 1.0, -0.6]
group, returns = [], []
for x0 in starts:
    x = x0 * 0.7 ** np.arange(4)
    rewards = -np.abs(x)
    group.append(EpisodeSegment(x[:, None], np.zeros((4, 1)), rewards, np.zeros(4),
                                np.arange(4), terminated=True))
    returns.append(compute_returns(rewards, 1.0))
for binning in ["universal", "time", "spatial:0.5"]:
    adv, _ = group_advantages(group, returns, binning)
    print(f"{binning:>12}", [np.round(a, 2).tolist() for a in adv])

# short training runs with each binning from the same seed
for binning in ["universal", "time", "spatial:0.5", "spatialtime:0.5"]:
    cfg = preset_for("pointmass").replace(binning=binning, num_envs=16, iterations=50, seed=0)
    trainer = Trainer(cfg)
    trainer.train()
    mean, std = evaluate(trainer.policy, "pointmass", 5)
    print(f"{binning:>16}  eval return {mean:.2f} +- {std:.2f}")
