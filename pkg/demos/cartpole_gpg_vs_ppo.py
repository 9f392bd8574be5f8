"""
CartPole with and without a critic
==================================

Trains the critic-free group policy gradient (time-bin baseline) and PPO with a
GAE critic on CartPole, using identical rollout settings, then evaluates each
policy on fresh episodes.  A full 200-iteration run takes a couple of minutes
per algorithm on one core; pass a smaller count on the command line to try it
quickly.
"""

import sys

import numpy as np

from gpg_rl.config import preset_for
from gpg_rl.trainer import Trainer, evaluate

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 200

for algorithm in ["gpg", "ppo"]:
    cfg = preset_for("cartpole").replace(algorithm=algorithm, num_envs=32,
                                         iterations=iterations, seed=0)
    trainer = Trainer(cfg)
    history = trainer.train()
    returns = np.array([m.mean_return for m in history])
    # mean training return over windows of 20 iterations
    print(algorithm, np.round(returns[: len(returns) // 20 * 20].reshape(-1, 20).mean(1), 1))
    print(algorithm, "value net:", trainer.valuenet is not None)
    mean, std = evaluate(trainer.policy, "cartpole", 5)
    print(f"{algorithm} eval return {mean:.1f} +- {std:.1f}")
