"""Clipped-surrogate policy optimization with pluggable advantage estimators.

Each iteration freezes the behaviour policy, collects ``num_envs x
rollout_length`` steps, segments them into a group of episodes, computes
advantages (group bin baseline, GAE with a critic, or GRPO outcome
normalization) and runs ``update_epochs`` passes of shuffled minibatch Adam
steps on the clipped surrogate.  Only the PPO path builds a value network.
"""

from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import asdict, dataclass

import numpy as np

from .advantage import (gae_advantages, group_advantages, grpo_outcome_advantages,
                        normalize_advantages)
from .config import TrainConfig
from .envs import make_env, make_rng, make_vector_env
from .checkpoint import check_compatible, save_checkpoint
from .errors import CheckpointError, ConfigError, InvalidInputError, NumericalError
from .mdp import RolloutBuffer, compute_returns, segment_rollout
from .policy import Policy, ValueNet, make_policy

METRIC_FIELDS = ("iteration", "env_steps", "mean_return", "std_return", "loss_pi", "loss_v",
                 "entropy", "clip_frac", "grad_norm", "effective_group_size", "wall_ms")


def clipped_surrogate_loss(policy: Policy, obs, actions, old_log_probs, advantages,
                           clip_eps: float, entropy_coef: float = 0.0, denominator=None):
    """Negated clipped surrogate (plus entropy bonus) and its parameter gradient.

    The per-step objective is ``min(ratio * A, clip(ratio, 1-eps, 1+eps) * A)``
    with ``ratio = exp(log pi - log pi_old)``.  The sum is divided by
    ``denominator`` (default: batch size).  Returns ``(loss, grad, stats)``.
    """
    adv = np.asarray(advantages, dtype=np.float64)
    if adv.size == 0:
        raise InvalidInputError("empty batch")
    if not np.all(np.isfinite(adv)):
        raise NumericalError("non-finite advantages", {"advantages": adv})
    logp, ent, backward = policy.evaluate(obs, actions)
    logp, ent = np.atleast_1d(logp), np.atleast_1d(ent)
    old_log_probs = np.asarray(old_log_probs, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = np.exp(logp - old_log_probs)
    if not np.all(np.isfinite(ratio)):
        bad = np.flatnonzero(~np.isfinite(ratio))
        raise NumericalError(f"non-finite probability ratio at {bad.size} steps",
                             {"log_probs": logp, "old_log_probs": old_log_probs,
                              "theta": policy.theta})
    denom = float(adv.size if denominator is None else denominator)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
    objective = np.minimum(surr1, surr2)
    inside = (ratio > 1.0 - clip_eps) & (ratio < 1.0 + clip_eps)
    active = (surr1 <= surr2) | inside
    loss = -objective.sum() / denom - entropy_coef * ent.sum() / denom
    dlogp = -np.where(active, surr1, 0.0) / denom
    dent = np.full(ent.shape, -entropy_coef / denom) if entropy_coef else None
    grad = backward(dlogp, dent)
    stats = {
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > clip_eps)),
        "approx_kl": float(np.mean((ratio - 1.0) - (logp - old_log_probs))),
        "entropy": float(ent.mean()),
        "objective": float(objective.sum() / denom),
    }
    return float(loss), grad, stats


def value_loss(valuenet: ValueNet, obs, targets):
    """``0.5 * mean((V(s) - target)^2)`` and its gradient."""
    v, backward = valuenet.value_and_backward(obs)
    diff = np.atleast_1d(v) - np.asarray(targets, dtype=np.float64)
    return float(0.5 * np.mean(diff * diff)), backward(diff / diff.size)


class Adam:
    """Bias-corrected Adam over one flat parameter vector."""

    def __init__(self, size, lr=2.5e-4, betas=(0.9, 0.999), eps=1e-5):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params, grads, lr=None):
        """Return updated parameters for a *descent* step along ``grads``."""
        lr = self.lr if lr is None else lr
        if params.shape != self.m.shape or grads.shape != self.m.shape:
            raise InvalidInputError("parameters, gradients and moments must be aligned")
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads * grads
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return params - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(params, grads, state: Adam, lr=None):
    return state.step(params, grads, lr)


def clip_grad_norm(grad, max_norm):
    """Rescale ``grad`` to global norm ``max_norm`` if larger; returns ``(grad, norm)``."""
    norm = float(np.sqrt(np.dot(grad, grad)))
    if max_norm > 0 and norm > max_norm:
        grad = grad * (max_norm / norm)
    return grad, norm


@dataclass
class IterationMetrics:
    iteration: int
    env_steps: int
    mean_return: float
    std_return: float
    loss_pi: float
    loss_v: float
    entropy: float
    clip_frac: float
    grad_norm: float
    effective_group_size: int
    wall_ms: float

    def as_row(self):
        d = asdict(self)
        return [d[k] for k in METRIC_FIELDS]


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    advantages: np.ndarray
    targets: np.ndarray | None


class Trainer:
    """Runs the collect / estimate / optimize loop for one config and seed."""

    def __init__(self, config: TrainConfig, policy: Policy | None = None,
                 valuenet: ValueNet | None = None):
        self.config = config
        env_seq, act_seq, shuf_seq, init_seq = np.random.SeedSequence(config.seed).spawn(4)
        self.venv = make_vector_env(config.env, config.num_envs,
                                    seed=int(env_seq.generate_state(1)[0]),
                                    threads=config.threads)
        self.spec = self.venv.spec
        init_seed = int(init_seq.generate_state(1)[0])
        self.policy = policy or make_policy(self.spec, config.hidden_sizes, seed=init_seed)
        if config.algorithm == "ppo":
            self.valuenet = valuenet or ValueNet(self.spec.observation_kind,
                                                 self.spec.observation_size,
                                                 config.hidden_sizes, seed=init_seed + 1)
        else:
            self.valuenet = None
        n = self.policy.n_params + (self.valuenet.n_params if self.valuenet else 0)
        self.optimizer = Adam(n, config.learning_rate, (config.adam_beta1, config.adam_beta2),
                              config.adam_eps)
        self.action_rng = make_rng(act_seq)
        self.shuffle_rng = make_rng(shuf_seq)
        self.obs = self.venv.reset()
        self.iteration = 0
        self.env_steps = 0
        self.recent_returns = deque(maxlen=100)
        self.last_group = None
        self.last_batch = None
        self.first_surrogate_grad = None
        self.first_minibatch_stats = None

    # -- checkpointing -----------------------------------------------------------

    def save(self, path):
        save_checkpoint(path, self.policy, self.valuenet, self.optimizer, env_id=self.config.env,
                        iteration=self.iteration, config=self.config.to_dict())

    def restore(self, data):
        """Continue from a loaded checkpoint.

        Parameters, optimizer moments and the iteration count are restored.
        Environments restart from fresh episodes and the action and shuffle
        streams are re-derived from ``(seed, iteration)``, so a resumed run is
        reproducible but not identical to an uninterrupted one.
        """
        check_compatible(data["policy"], self.spec)
        if data["policy"].n_params != self.policy.n_params:
            raise CheckpointError(f"checkpoint policy has {data['policy'].n_params} parameters, "
                                  f"config expects {self.policy.n_params}")
        if (data["value"] is None) != (self.valuenet is None):
            raise CheckpointError("checkpoint and config disagree about the value network")
        self.policy.theta = data["policy"].theta.copy()
        if self.valuenet is not None:
            self.valuenet.theta = data["value"].theta.copy()
        arrays, header = data["arrays"], data["header"]
        if "adam_m" in arrays and arrays["adam_m"].size == self.optimizer.m.size:
            self.optimizer.m = arrays["adam_m"].copy()
            self.optimizer.v = arrays["adam_v"].copy()
            self.optimizer.t = int(header["adam_step"])
        self.iteration = int(header["iteration"])
        self.env_steps = self.iteration * self.config.rollout_length * self.config.num_envs
        act_seq, shuf_seq, env_seq = np.random.SeedSequence(
            [self.config.seed, self.iteration]).spawn(3)
        self.action_rng = make_rng(act_seq)
        self.shuffle_rng = make_rng(shuf_seq)
        self.obs = self.venv.reset(int(env_seq.generate_state(1)[0]))

    # -- collection -----------------------------------------------------------

    def _exec_actions(self, actions):
        if self.spec.action_kind == "box":
            return np.clip(actions, self.spec.action_low, self.spec.action_high)
        return actions

    def collect_rollout(self) -> tuple[RolloutBuffer, list]:
        L, E = self.config.rollout_length, self.config.num_envs
        obs0 = self.obs
        obs_buf = np.empty((L, *obs0.shape), dtype=obs0.dtype)
        next_buf = np.empty_like(obs_buf)
        if self.spec.action_kind == "discrete":
            act_buf = np.empty((L, E), dtype=np.int64)
        else:
            act_buf = np.empty((L, E, self.spec.action_size))
        rew = np.empty((L, E))
        logp = np.empty((L, E))
        ts = np.empty((L, E), dtype=np.int64)
        term = np.empty((L, E), dtype=bool)
        trunc = np.empty((L, E), dtype=bool)
        finished = []
        for k in range(L):
            obs_buf[k] = self.obs
            ts[k] = self.venv.timesteps
            a, lp = self.policy.sample(self.obs, self.action_rng)
            act_buf[k] = a
            logp[k] = lp
            self.obs, rew[k], term[k], trunc[k], info = self.venv.step(self._exec_actions(a))
            next_buf[k] = info["final_observation"]
            done_returns = info["episode_returns"]
            finished.extend(done_returns[~np.isnan(done_returns)].tolist())
        self.env_steps += L * E
        return RolloutBuffer(obs_buf, act_buf, rew, logp, ts, term, trunc, next_buf), finished

    # -- advantages -----------------------------------------------------------

    def compute_advantages(self, group) -> Batch:
        cfg = self.config
        segs = group.segments
        returns = [compute_returns(seg, cfg.gamma) for seg in segs]
        obs = np.concatenate([seg.observations for seg in segs])
        actions = np.concatenate([seg.actions for seg in segs])
        log_probs = np.concatenate([seg.log_probs for seg in segs])
        targets = None
        if cfg.algorithm == "gpg":
            advs, _ = group_advantages(segs, returns, cfg.binning, cfg.loo_baseline)
            adv = np.concatenate(advs)
        elif cfg.algorithm == "grpo":
            totals = np.array([seg.rewards.sum() for seg in segs])
            per_seg = grpo_outcome_advantages(totals) if len(segs) >= 2 else np.zeros(len(segs))
            adv = np.concatenate([np.full(len(seg), a) for seg, a in zip(segs, per_seg)])
        else:
            values = np.atleast_1d(self.valuenet.value(obs))
            finals = np.stack([np.asarray(seg.final_observation) for seg in segs])
            boot = np.atleast_1d(self.valuenet.value(finals))
            advs, off = [], 0
            for i, seg in enumerate(segs):
                v = values[off:off + len(seg)]
                off += len(seg)
                advs.append(gae_advantages(seg.rewards, v, 0.0 if seg.terminated else boot[i],
                                           cfg.gamma, cfg.gae_lambda))
            adv = np.concatenate(advs)
            targets = adv + values
        if cfg.exclude_truncated_from_update:
            keep = np.concatenate([np.full(len(s), s.complete) for s in segs])
            obs, actions, log_probs, adv = obs[keep], actions[keep], log_probs[keep], adv[keep]
            targets = targets[keep] if targets is not None else None
        return Batch(obs, actions, log_probs, adv, targets)

    # -- optimization -----------------------------------------------------------

    def value_loss(self, obs, targets):
        if self.valuenet is None:
            raise ConfigError(f"value loss requested under {self.config.algorithm!r}; "
                              "only ppo has a critic")
        return value_loss(self.valuenet, obs, targets)

    def _params(self):
        if self.valuenet is None:
            return self.policy.theta
        return np.concatenate([self.policy.theta, self.valuenet.theta])

    def _set_params(self, params):
        n = self.policy.n_params
        self.policy.theta = params[:n].copy()
        if self.valuenet is not None:
            self.valuenet.theta = params[n:].copy()

    def _diagnostics(self, batch, idx):
        d = {"theta": self.policy.theta, "obs": batch.obs[idx], "actions": batch.actions[idx],
             "advantages": batch.advantages[idx], "old_log_probs": batch.log_probs[idx]}
        if self.valuenet is not None:
            d["phi"] = self.valuenet.theta
        return d

    def update(self, batch: Batch):
        cfg = self.config
        lr = cfg.learning_rate
        if cfg.anneal_lr and cfg.iterations > 0:
            lr *= 1.0 - self.iteration / cfg.iterations
        B = len(batch.advantages)
        sums = {"loss_pi": 0.0, "loss_v": 0.0, "entropy": 0.0, "clip_frac": 0.0, "grad_norm": 0.0}
        n_updates = 0
        self.first_surrogate_grad = None
        self.first_minibatch_stats = None
        if B == 0:
            return sums
        for _ in range(cfg.update_epochs):
            perm = self.shuffle_rng.permutation(B)
            for idx in np.array_split(perm, cfg.num_minibatches):
                if idx.size == 0:
                    continue
                adv = batch.advantages[idx]
                if cfg.normalize_adv:
                    adv = normalize_advantages(adv)
                loss_pi, g_pi, stats = clipped_surrogate_loss(
                    self.policy, batch.obs[idx], batch.actions[idx], batch.log_probs[idx],
                    adv, cfg.clip_eps, cfg.entropy_coef)
                if self.first_surrogate_grad is None:
                    self.first_surrogate_grad = g_pi.copy()
                    self.first_minibatch_stats = stats
                grad = g_pi
                loss_v = 0.0
                if self.valuenet is not None:
                    loss_v, g_v = self.value_loss(batch.obs[idx], batch.targets[idx])
                    grad = np.concatenate([g_pi, cfg.value_coef * g_v])
                if not (math.isfinite(loss_pi) and math.isfinite(loss_v)
                        and np.all(np.isfinite(grad))):
                    raise NumericalError(f"non-finite loss at iteration {self.iteration}",
                                         self._diagnostics(batch, idx))
                grad, norm = clip_grad_norm(grad, cfg.max_grad_norm)
                with np.errstate(over="ignore", invalid="ignore"):
                    params = self.optimizer.step(self._params(), grad, lr)
                if not np.all(np.isfinite(params)):
                    raise NumericalError(f"non-finite parameters after the optimizer step at "
                                         f"iteration {self.iteration}",
                                         self._diagnostics(batch, idx))
                self._set_params(params)
                sums["loss_pi"] += loss_pi
                sums["loss_v"] += loss_v
                sums["entropy"] += stats["entropy"]
                sums["clip_frac"] += stats["clip_frac"]
                sums["grad_norm"] += norm
                n_updates += 1
        return {k: v / max(n_updates, 1) for k, v in sums.items()}

    def train_iteration(self) -> IterationMetrics:
        start = time.perf_counter()
        buffer, finished = self.collect_rollout()
        group = segment_rollout(buffer, self.config.num_envs, self.iteration)
        batch = self.compute_advantages(group)
        self.last_group, self.last_batch = group, batch
        stats = self.update(batch)
        self.recent_returns.extend(finished)
        if finished:
            ret = np.asarray(finished)
        elif self.recent_returns:
            ret = np.asarray(self.recent_returns)
        else:
            ret = self.venv.episode_returns.copy()
        self.iteration += 1
        return IterationMetrics(
            iteration=self.iteration, env_steps=self.env_steps,
            mean_return=float(ret.mean()), std_return=float(ret.std()),
            loss_pi=stats["loss_pi"], loss_v=stats["loss_v"], entropy=stats["entropy"],
            clip_frac=stats["clip_frac"], grad_norm=stats["grad_norm"],
            effective_group_size=group.effective_group_size,
            wall_ms=(time.perf_counter() - start) * 1000.0)

    def train(self, iterations=None, callback=None):
        n = self.config.iterations if iterations is None else iterations
        history = []
        for _ in range(n):
            m = self.train_iteration()
            history.append(m)
            if callback is not None:
                callback(m)
        return history


def train_iteration(trainer: Trainer) -> IterationMetrics:
    return trainer.train_iteration()


def run_episode(policy, env, rng, seed=None):
    obs = env.reset(seed)
    total = 0.0
    while True:
        a, _ = policy.sample(obs, rng)
        if env.spec.action_kind == "box":
            a = np.clip(a, env.spec.action_low, env.spec.action_high)
        obs, r, terminated, truncated = env.step(a)
        total += r
        if terminated or truncated:
            return total


def evaluate(policy, env_id, n_eval_seeds=5, seed=10_000):
    """Mean and population std of episodic return over ``n_eval_seeds`` fresh episodes.

    Actions are sampled from the policy.  Episode ``i`` uses env seed
    ``(seed, i)`` and action seed ``(seed, i, 1)``; parameters are not touched.
    """
    returns = []
    for i in range(n_eval_seeds):
        env = make_env(env_id)
        rng = make_rng(np.random.SeedSequence([seed, i, 1]))
        returns.append(run_episode(policy, env, rng, np.random.SeedSequence([seed, i])))
    returns = np.asarray(returns)
    return float(returns.mean()), float(returns.std())
