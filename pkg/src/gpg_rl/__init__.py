"""Critic-free group policy gradients with bin baselines, alongside PPO and GRPO."""

__version__ = "0.1.0"
