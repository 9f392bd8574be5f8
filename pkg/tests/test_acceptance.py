"""Headline acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line, printed together at the end of the
pytest session.  The three training criteria take several minutes on one core.
"""

import functools

import numpy as np
import pytest

from gpg_rl.advantage import gae_advantages, group_advantages, grpo_outcome_advantages
from gpg_rl.config import preset_for
from gpg_rl.envs import bandit_mdp, chain_mdp, cliff_grid_mdp
from gpg_rl.mdp import EpisodeSegment, compute_returns
from gpg_rl.oracle import (asymptotic_covariance, consistency_experiment, estimate_gradient,
                           exact_objective_and_gradient, grpo_corollary_check,
                           sample_group_advantages)
from gpg_rl.policy import TabularSoftmaxPolicy, ValueNet
from gpg_rl.trainer import Trainer, clipped_surrogate_loss, evaluate

from .conftest import record
from .gradcheck import directional_fd_error, random_models

N_LIST = (100, 1000, 10_000)
TRAIN_SEEDS = (0, 1, 2, 3)
EVAL_SEED = 10_000


def uniform_policy(mdp):
    return TabularSoftmaxPolicy(mdp.num_states, mdp.num_actions)


def rel_l2(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def test_surrogate_gradient_at_old_params_is_reinforce_form():
    rng = np.random.default_rng(2024)
    kinds = ["categorical", "gaussian", "tabular", "categorical-discrete"]
    probes = [p for k in kinds for p in random_models(k, rng, 13)][:50]
    worst = 0.0
    for pol, obs, act in probes:
        adv = rng.normal(size=len(obs)) * rng.uniform(0.1, 10)
        _, grad, _ = clipped_surrogate_loss(pol, obs, act, pol.log_prob(obs, act), adv, 0.2)
        ref = -pol.grad_log_prob(obs, act, weights=adv) / len(obs)
        worst = max(worst, rel_l2(grad, ref))
    # the same identity on sampled tabular groups against the oracle's estimator
    mdp = chain_mdp()
    pol = TabularSoftmaxPolicy(3, 2, rng.normal(size=6))
    for seed in range(5):
        g = estimate_gradient(mdp, pol, "time", 200, np.random.default_rng(seed))
        s, a, adv = sample_group_advantages(mdp, pol, "time", 200, np.random.default_rng(seed))
        s, a = s.ravel(), a.ravel()
        _, grad, _ = clipped_surrogate_loss(pol, s, a, pol.log_prob(s, a), adv.ravel(), 0.2,
                                            denominator=200)
        worst = max(worst, rel_l2(-grad, g))
    assert record("clipped surrogate at theta_old equals REINFORCE form (50 probes)",
                  worst <= 1e-10, f"worst rel L2 {worst:.2e} <= 1e-10")


@pytest.mark.parametrize("name, make, binning", [("3-state chain", chain_mdp, "time"),
                                                ("3x4 cliff grid", cliff_grid_mdp, "state")])
def test_group_estimator_is_consistent(name, make, binning):
    mdp = make()
    report = consistency_experiment(mdp, uniform_policy(mdp), binning, N_LIST, repetitions=20)
    med = report.median_errors()
    ok = report.monotone_non_increasing() and med[10_000] <= 0.05
    detail = ", ".join(f"N={n}: {e:.4f}" for n, e in med.items())
    assert record(f"consistency, {binning} binning on {name}", ok,
                  detail + "; monotone and <= 0.05 at N=1e4")


def test_grpo_matches_normalized_gradient_on_bandit():
    mdp = bandit_mdp()
    pol = uniform_policy(mdp)
    report = grpo_corollary_check(mdp, pol, N_LIST, repetitions=20)
    _, g = exact_objective_and_gradient(mdp, pol)
    target_ok = np.allclose(report.exact_gradient, 2 * g, rtol=0, atol=1e-15)
    err = report.median_errors()[10_000]
    assert record("GRPO estimate vs grad eta / std(R) on bandit", target_ok and err <= 0.05,
                  f"target = 2 grad eta: {target_ok}; median rel err at N=1e4 {err:.2e} <= 0.05")


def test_time_binning_beats_reinforce_on_chain():
    # The population medians differ by only a few percent on this MDP, so a
    # 20-repetition median cannot resolve the ordering; 10^4 repetitions can.
    mdp = chain_mdp()
    pol = uniform_policy(mdp)
    errs, traces = {}, {}
    for est in ("time", "reinforce"):
        rep = consistency_experiment(mdp, pol, est, (10_000,), repetitions=10_000)
        errs[est] = rep.median_errors()[10_000]
        traces[est] = np.trace(asymptotic_covariance(mdp, pol, est)[1])
    ok = errs["time"] < errs["reinforce"] and traces["time"] < traces["reinforce"]
    assert record("time binning median error < REINFORCE median error on chain", ok,
                  f"N=1e4, 10^4 reps: {errs['time']:.5f} vs {errs['reinforce']:.5f}; "
                  f"exact N*trace(Cov): {traces['time']:.4f} vs {traces['reinforce']:.4f}")


def test_universal_binning_equals_grpo_outcome():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        n, length = int(rng.integers(2, 33)), int(rng.integers(1, 20))
        terminal = rng.normal(size=n) * rng.uniform(0.01, 100)
        segs, rets = [], []
        for r in terminal:
            rew = np.zeros(length)
            rew[-1] = r
            segs.append(EpisodeSegment(np.zeros((length, 1)), np.zeros(length, dtype=int), rew,
                                       np.zeros(length), np.arange(length), terminated=True))
            rets.append(compute_returns(rew, 1.0))
        adv, _ = group_advantages(segs, rets, "universal")
        first = np.array([a[0] for a in adv])
        sd = max(first.std(), 1e-8)
        worst = max(worst, np.max(np.abs(first / sd - grpo_outcome_advantages(terminal))))
    assert record("universal-binning GPG equals GRPO outcome advantages (100 groups)",
                  worst <= 1e-12, f"max abs diff {worst:.1e} <= 1e-12")


def test_gae_recurrence_equals_double_sum():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(1000):
        T = int(rng.integers(1, 60))
        gamma, lam = rng.uniform(0, 1), rng.uniform(0, 1)
        r, v, boot = rng.normal(size=T), rng.normal(size=T), rng.normal()
        vn = np.append(v, boot)
        delta = r + gamma * vn[1:] - vn[:-1]
        direct = np.array([sum((gamma * lam) ** (s - t) * delta[s] for s in range(t, T))
                           for t in range(T)])
        worst = max(worst, np.max(np.abs(gae_advantages(r, v, boot, gamma, lam) - direct)))
    assert record("GAE recurrence equals direct double sum (1000 segments)", worst <= 1e-12,
                  f"max abs diff {worst:.1e} <= 1e-12")


def value_fd_error(rng):
    vn = ValueNet("box", 4, hidden=(8, 8), seed=int(rng.integers(1 << 30)))
    vn.theta += rng.normal(scale=0.3, size=vn.theta.size)
    x, w = rng.normal(size=(5, 4)), rng.normal(size=5)
    _, back = vn.value_and_backward(x)
    g = back(w)
    v = rng.normal(size=vn.theta.size)
    v /= np.linalg.norm(v)
    h = 1e-6 * max(1.0, float(np.max(np.abs(vn.theta))))
    theta = vn.theta.copy()
    vn.theta = theta + h * v
    up = w @ vn.value(x)
    vn.theta = theta - h * v
    down = w @ vn.value(x)
    vn.theta = theta
    fd = (up - down) / (2 * h)
    return abs(fd - g @ v) / max(abs(fd), abs(g @ v), 1e-8)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(99)
    errors = []
    for kind in ["categorical", "categorical-discrete", "gaussian", "tabular"]:
        for model, obs, act in random_models(kind, rng, 20):
            errors.append(directional_fd_error(model, obs, act, rng,
                                               weights=rng.normal(size=len(obs))))
    errors += [value_fd_error(rng) for _ in range(20)]
    worst = max(errors)
    assert record(f"policy/value gradients vs central differences ({len(errors)} probes)",
                  worst <= 1e-5, f"worst relative error {worst:.1e} <= 1e-5")


@functools.lru_cache(maxsize=None)
def final_eval(env, algorithm, num_envs, seed, binning="time"):
    cfg = preset_for(env).replace(algorithm=algorithm, binning=binning, num_envs=num_envs,
                                  iterations=200, seed=seed)
    trainer = Trainer(cfg)
    trainer.train()
    return evaluate(trainer.policy, env, cfg.eval_episodes, seed=EVAL_SEED)[0]


def medians(env, algorithm, num_envs, binning="time"):
    vals = [final_eval(env, algorithm, num_envs, s, binning) for s in TRAIN_SEEDS]
    return float(np.median(vals)), vals


def test_cartpole_reproduction():
    gpg, gvals = medians("cartpole", "gpg", 32)
    ppo, pvals = medians("cartpole", "ppo", 32)
    ok = gpg >= 450 and gpg >= ppo - 30
    assert record("CartPole GPG 32 envs 200 iters: median eval >= 450 and >= PPO - 30", ok,
                  f"GPG median {gpg:.1f} {np.round(gvals, 1).tolist()}, "
                  f"PPO median {ppo:.1f} {np.round(pvals, 1).tolist()}")


def test_cliffwalking_reproduction():
    med, vals = medians("cliffwalking", "gpg", 16)
    assert record("CliffWalking GPG 16 envs 200 iters: median eval >= -20", med >= -20,
                  f"median {med:.1f} {np.round(vals, 1).tolist()}")


def test_pointmass_time_binning_not_worse_than_universal():
    time_med, tvals = medians("pointmass", "gpg", 16, "time")
    uni_med, uvals = medians("pointmass", "gpg", 16, "universal")
    assert record("PointMass 16 envs: time-binning median >= universal median",
                  time_med >= uni_med,
                  f"time {time_med:.2f} {np.round(tvals, 2).tolist()}, "
                  f"universal {uni_med:.2f} {np.round(uvals, 2).tolist()}")
