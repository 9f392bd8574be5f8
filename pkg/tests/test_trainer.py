import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpg_rl.config import TrainConfig, preset_for
from gpg_rl.envs.cliffwalking import DOWN, RIGHT, UP
from gpg_rl.errors import ConfigError, NumericalError
from gpg_rl.policy import TabularSoftmaxPolicy, ValueNet
from gpg_rl.trainer import (METRIC_FIELDS, Adam, Batch, Trainer, clip_grad_norm,
                            clipped_surrogate_loss, evaluate, value_loss)

from .gradcheck import random_models


def one_step(ratio, adv, eps=0.2):
    pol = TabularSoftmaxPolicy(1, 2, [0.1, -0.3])
    obs, act = np.array([0]), np.array([1])
    old = pol.log_prob(obs, act) - math.log(ratio)
    return clipped_surrogate_loss(pol, obs, act, old, np.array([adv]), eps), pol, obs, act


def test_surrogate_clipped_examples():
    (loss, grad, stats), *_ = one_step(1.5, 1.0)
    assert stats["objective"] == pytest.approx(1.2, abs=1e-12)
    assert loss == pytest.approx(-1.2, abs=1e-12)
    assert np.all(grad == 0.0) and stats["clip_frac"] == 1.0

    (loss, grad, stats), *_ = one_step(0.5, -1.0)
    assert stats["objective"] == pytest.approx(-0.8, abs=1e-12)
    assert np.all(grad == 0.0)


def test_surrogate_unclipped_branch_has_ratio_weighted_gradient():
    (loss, grad, stats), pol, obs, act = one_step(0.5, 1.0)
    assert stats["objective"] == pytest.approx(0.5, abs=1e-12)
    np.testing.assert_allclose(grad, -0.5 * pol.grad_log_prob(obs, act), atol=1e-15)


def test_surrogate_at_old_params_is_reinforce_form():
    rng = np.random.default_rng(0)
    for kind in ["categorical", "gaussian", "tabular"]:
        for pol, obs, act in random_models(kind, rng, 5):
            adv = rng.normal(size=len(obs))
            loss, grad, stats = clipped_surrogate_loss(pol, obs, act, pol.log_prob(obs, act), adv, 0.2)
            ref = -pol.grad_log_prob(obs, act, weights=adv) / len(obs)
            assert np.linalg.norm(grad - ref) <= 1e-10 * max(np.linalg.norm(ref), 1e-12)
            assert stats["objective"] == pytest.approx(adv.mean(), abs=1e-12)
            assert stats["clip_frac"] == 0.0


def test_surrogate_rejects_non_finite():
    pol = TabularSoftmaxPolicy(1, 2)
    with pytest.raises(NumericalError) as info:
        clipped_surrogate_loss(pol, np.array([0]), np.array([0]), np.array([-1e6]), np.array([1.0]), 0.2)
    assert "theta" in info.value.diagnostics
    with pytest.raises(NumericalError):
        clipped_surrogate_loss(pol, np.array([0]), np.array([0]), np.array([0.0]), np.array([np.nan]), 0.2)


def test_value_loss_examples():
    vn = ValueNet("box", 2, hidden=(3,), seed=0)
    vn.theta[:] = 0.0
    loss, grad = value_loss(vn, np.zeros((2, 2)), [2.0, -2.0])
    assert loss == 2.0
    vn = ValueNet("box", 2, hidden=(4,), seed=1)
    x = np.random.default_rng(0).normal(size=(5, 2))
    loss, grad = value_loss(vn, x, vn.value(x))
    assert loss == 0.0 and np.all(grad == 0.0)


def test_value_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    vn = ValueNet("box", 3, hidden=(6,), seed=4)
    x, y = rng.normal(size=(7, 3)), rng.normal(size=7)
    _, g = value_loss(vn, x, y)
    v = rng.normal(size=vn.theta.size)
    h = 1e-6
    theta = vn.theta.copy()
    vn.theta = theta + h * v
    up = value_loss(vn, x, y)[0]
    vn.theta = theta - h * v
    down = value_loss(vn, x, y)[0]
    vn.theta = theta
    fd = (up - down) / (2 * h)
    assert abs(fd - g @ v) <= 1e-5 * max(abs(fd), 1e-8)


def test_adam_examples():
    opt = Adam(3, lr=0.1)
    p = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(opt.step(p, np.zeros(3)), p)
    assert opt.t == 1

    opt = Adam(3, lr=0.1, eps=1e-5)
    g = np.array([0.5, -2.0, 1e-3])
    new = opt.step(p, g)
    np.testing.assert_allclose(p - new, 0.1 * g / (np.abs(g) + 1e-5), rtol=1e-12)

    a, b = Adam(3), Adam(3)
    np.testing.assert_array_equal(a.step(p, g), b.step(p, g))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 50), st.floats(1e-3, 10), st.floats(1e-3, 1e3), st.integers(0, 2**31))
def test_clip_grad_norm_bound(n, max_norm, scale, seed):
    g = np.random.default_rng(seed).normal(size=n) * scale
    clipped, norm = clip_grad_norm(g, max_norm)
    assert norm == pytest.approx(np.linalg.norm(g))
    assert np.linalg.norm(clipped) <= max_norm + 1e-12 or np.array_equal(clipped, g)
    if norm <= max_norm:
        np.testing.assert_array_equal(clipped, g)


def small(**kw):
    base = dict(env="cliffwalking", num_envs=3, rollout_length=40, iterations=3, hidden="16",
                seed=5)
    base.update(kw)
    return TrainConfig(**base)


def test_zero_learning_rate_keeps_theta_and_exposes_reinforce_gradient():
    cfg = small(learning_rate=0.0, update_epochs=1, num_minibatches=1, normalize_adv=False,
                entropy_coef=0.0)
    tr = Trainer(cfg)
    theta = tr.policy.theta.copy()
    tr.train_iteration()
    np.testing.assert_array_equal(tr.policy.theta, theta)
    b = tr.last_batch
    ref = -tr.policy.grad_log_prob(b.obs, b.actions, weights=b.advantages) / len(b.advantages)
    g = tr.first_surrogate_grad
    assert np.linalg.norm(g - ref) <= 1e-10 * max(np.linalg.norm(ref), 1e-12)
    assert tr.first_minibatch_stats["clip_frac"] == 0.0


def test_gpg_is_critic_free():
    for algo in ("gpg", "grpo"):
        tr = Trainer(small(algorithm=algo))
        assert tr.valuenet is None
        assert tr.optimizer.m.size == tr.policy.n_params
        with pytest.raises(ConfigError):
            tr.value_loss(np.zeros(2, dtype=int), np.zeros(2))
    tr = Trainer(small(algorithm="ppo"))
    assert tr.optimizer.m.size == tr.policy.n_params + tr.valuenet.n_params


def test_first_minibatch_never_clips():
    for algo in ("gpg", "ppo", "grpo"):
        tr = Trainer(small(algorithm=algo, env="cartpole"))
        for _ in range(2):
            tr.train_iteration()
            assert tr.first_minibatch_stats["clip_frac"] == 0.0


def test_gpg_and_ppo_share_first_trajectories():
    a = Trainer(small(algorithm="gpg", entropy_coef=0.0, value_coef=0.0, env="cartpole"))
    b = Trainer(small(algorithm="ppo", entropy_coef=0.0, value_coef=0.0, env="cartpole"))
    np.testing.assert_array_equal(a.policy.theta, b.policy.theta)
    buf_a, _ = a.collect_rollout()
    buf_b, _ = b.collect_rollout()
    for name in ("observations", "actions", "rewards", "log_probs", "terminated", "truncated"):
        np.testing.assert_array_equal(getattr(buf_a, name), getattr(buf_b, name))


def strip_wall(history):
    return [m.as_row()[:-1] for m in history]


def test_training_is_deterministic_and_thread_independent():
    runs = [Trainer(small(env="pointmass", threads=t)) for t in (1, 1, 3)]
    hist = [strip_wall(tr.train()) for tr in runs]
    assert hist[0] == hist[1] == hist[2]
    np.testing.assert_array_equal(runs[0].policy.theta, runs[2].policy.theta)


def test_metrics_rows_are_finite_and_ordered():
    for algo in ("gpg", "ppo", "grpo"):
        tr = Trainer(small(algorithm=algo, env="cartpole"))
        m = tr.train_iteration()
        row = m.as_row()
        assert len(row) == len(METRIC_FIELDS)
        assert all(math.isfinite(float(x)) for x in row)
        assert m.iteration == 1 and m.env_steps == 120
        assert m.effective_group_size >= 3
        assert m.grad_norm > 0


def test_nan_advantages_abort_with_diagnostics():
    tr = Trainer(small(normalize_adv=False))
    buf, _ = tr.collect_rollout()
    obs = buf.observations.ravel()
    batch = Batch(obs, buf.actions.ravel(), buf.log_probs.ravel(),
                  np.full(obs.size, np.inf), None)
    with pytest.raises(NumericalError) as info:
        tr.update(batch)
    assert "advantages" in info.value.diagnostics


def test_grpo_on_single_segment_group_is_inert():
    tr = Trainer(small(algorithm="grpo", num_envs=1, rollout_length=5, learning_rate=0.0))
    buf, _ = tr.collect_rollout()
    from gpg_rl.mdp import segment_rollout
    batch = tr.compute_advantages(segment_rollout(buf, 1))
    assert np.all(batch.advantages == 0.0)


def test_exclude_truncated_segments():
    tr = Trainer(small(exclude_truncated_from_update=True, rollout_length=10))
    buf, _ = tr.collect_rollout()
    from gpg_rl.mdp import segment_rollout
    group = segment_rollout(buf, 3)
    batch = tr.compute_advantages(group)
    assert len(batch.advantages) == sum(len(s) for s in group.segments if s.complete)


def cliff_path_policy():
    logits = np.zeros((48, 4))
    logits[:, RIGHT] = 50.0
    logits[36] = 0.0
    logits[36, UP] = 50.0
    logits[35] = 0.0
    logits[35, DOWN] = 50.0
    return TabularSoftmaxPolicy(48, 4, logits.ravel())


def test_evaluate_examples():
    pol = cliff_path_policy()
    theta = pol.theta.copy()
    assert evaluate(pol, "cliffwalking", 5) == (-13.0, 0.0)
    np.testing.assert_array_equal(pol.theta, theta)
    mean, _ = evaluate(TabularSoftmaxPolicy(48, 4), "cliffwalking", 5)
    assert mean < -500
    assert evaluate(pol, "cliffwalking", 3, seed=1) == evaluate(pol, "cliffwalking", 3, seed=1)


def test_config_text_round_trip_and_errors(tmp_path):
    cfg = preset_for("pointmass").replace(binning="spatialtime:0.25", learning_rate=1e-3)
    assert TrainConfig.from_text(cfg.to_text()) == cfg
    path = tmp_path / "c.cfg"
    path.write_text("# comment\nnum_envs = 8\nnormalize_adv = no\n")
    loaded = TrainConfig.from_file(path)
    assert loaded.num_envs == 8 and loaded.normalize_adv is False
    with pytest.raises(ConfigError, match="bogus_key"):
        TrainConfig.from_text("bogus_key = 1")
    for bad in ("clip_eps = 0", "gamma = 1.5", "num_envs = 0", "algorithm = a2c",
                "binning = nope", "num_envs = many"):
        with pytest.raises(ConfigError):
            TrainConfig.from_text(bad)
