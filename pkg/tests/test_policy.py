import math

import numpy as np
import pytest

from gpg_rl.checkpoint import check_compatible, load_checkpoint, save_checkpoint
from gpg_rl.envs import CartPole, CliffWalking, PointMass
from gpg_rl.errors import CheckpointError, InvalidInputError
from gpg_rl.policy import (MLP, CategoricalMLPPolicy, GaussianMLPPolicy, TabularSoftmaxPolicy,
                           ValueNet, make_policy)
from gpg_rl.trainer import Adam

from .gradcheck import directional_fd_error, random_models


def test_tabular_uniform_log_prob():
    pol = TabularSoftmaxPolicy(3, 4)
    assert pol.log_prob(1, 2) == pytest.approx(math.log(0.25), abs=1e-15)


def test_gaussian_log_prob_at_mode():
    pol = GaussianMLPPolicy("box", 3, 2, hidden=(5,), seed=0)
    obs = np.array([0.1, -0.2, 0.3])
    mean = pol.mean(obs)
    assert pol.log_prob(obs, mean) == pytest.approx(2 * -0.5 * math.log(2 * math.pi), abs=1e-12)


def test_categorical_log_prob_by_hand():
    pol = TabularSoftmaxPolicy(1, 2, [0.0, math.log(3.0)])
    np.testing.assert_allclose(pol.probabilities(0), [0.25, 0.75], atol=1e-15)
    assert pol.log_prob(0, 1) == pytest.approx(math.log(0.75), abs=1e-15)


def test_tabular_gradient_identity():
    rng = np.random.default_rng(0)
    pol = TabularSoftmaxPolicy(3, 4, rng.normal(size=12))
    g = pol.grad_log_prob(1, 2).reshape(3, 4)
    expected = -pol.probabilities(1)
    expected[2] += 1.0
    np.testing.assert_allclose(g[1], expected, atol=1e-15)
    assert np.all(g[0] == 0) and np.all(g[2] == 0)
    uniform = TabularSoftmaxPolicy(2, 3)
    assert abs(uniform.grad_log_prob(0, 1).sum()) < 1e-15


def test_grad_buffer_accumulates_and_checks_alignment():
    pol = TabularSoftmaxPolicy(2, 2, [0.3, -0.1, 0.2, 0.0])
    buf = np.zeros(4)
    pol.grad_log_prob(0, 1, out=buf)
    pol.grad_log_prob(0, 1, out=buf)
    np.testing.assert_allclose(buf, 2 * pol.grad_log_prob(0, 1))
    with pytest.raises(InvalidInputError):
        pol.grad_log_prob(0, 1, out=np.zeros(3))


@pytest.mark.parametrize("kind", ["categorical", "gaussian", "tabular", "categorical-discrete"])
def test_log_prob_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(42)
    for model, obs, act in random_models(kind, rng, n=25):
        assert directional_fd_error(model, obs, act, rng) < 1e-5


@pytest.mark.parametrize("kind", ["categorical", "gaussian", "tabular"])
def test_entropy_gradient_matches_finite_differences(kind):
    rng = np.random.default_rng(3)
    for model, obs, act in random_models(kind, rng, n=10):
        _, _, back = model.evaluate(obs, act)
        w = rng.normal(size=np.size(act) if kind == "tabular" else len(obs))
        w = np.atleast_1d(w)[:len(np.atleast_1d(model.entropy(obs)))]
        g = back(np.zeros_like(w), w)
        v = rng.normal(size=model.theta.size)
        h = 1e-6
        theta = model.theta.copy()
        model.theta = theta + h * v
        up = np.sum(w * np.atleast_1d(model.entropy(obs)))
        model.theta = theta - h * v
        down = np.sum(w * np.atleast_1d(model.entropy(obs)))
        model.theta = theta
        fd = (up - down) / (2 * h)
        assert abs(fd - g @ v) <= 1e-5 * max(1.0, abs(fd))


def test_value_net_examples_and_gradient():
    vn = ValueNet("box", 3, hidden=(4,), seed=0)
    vn.theta[:] = 0.0
    assert np.all(vn.value(np.random.default_rng(0).normal(size=(5, 3))) == 0.0)

    lin = ValueNet("box", 3, hidden=(), theta=np.array([1.0, -2.0, 0.5, 0.0]))
    assert lin.value(np.array([2.0, 1.0, 4.0])) == pytest.approx(2.0)

    rng = np.random.default_rng(1)
    for _ in range(20):
        vn = ValueNet("box", 4, hidden=(8, 8), seed=int(rng.integers(1 << 30)))
        vn.theta += rng.normal(scale=0.3, size=vn.theta.size)
        x = rng.normal(size=(6, 4))
        w = rng.normal(size=6)
        _, back = vn.value_and_backward(x)
        g = back(w)
        v = rng.normal(size=vn.theta.size)
        h = 1e-6
        theta = vn.theta.copy()
        vn.theta = theta + h * v
        up = w @ vn.value(x)
        vn.theta = theta - h * v
        down = w @ vn.value(x)
        vn.theta = theta
        fd = (up - down) / (2 * h)
        assert abs(fd - g @ v) <= 1e-5 * max(1.0, abs(fd))


def test_sample_log_prob_self_consistent():
    rng = np.random.default_rng(0)
    for model, obs, _ in random_models("categorical", rng, n=3) + random_models("gaussian", rng, n=3):
        a, lp = model.sample(obs, rng)
        np.testing.assert_array_equal(lp, model.log_prob(obs, a))


def test_categorical_sampling_frequency():
    pol = TabularSoftmaxPolicy(1, 2, [0.0, math.log(3.0)])
    a, _ = pol.sample(np.zeros(100_000, dtype=int), np.random.default_rng(0))
    assert abs(a.mean() - 0.75) < 0.01


def test_gaussian_vanishing_variance():
    pol = GaussianMLPPolicy("box", 2, 3, hidden=(4,), seed=1)
    pol.theta[-3:] = -10.0
    obs = np.array([0.5, -0.5])
    a, _ = pol.sample(obs, np.random.default_rng(0))
    assert np.max(np.abs(a - pol.mean(obs))) < 1e-3


def test_probability_simplex_and_entropy_bounds():
    rng = np.random.default_rng(5)
    for _ in range(20):
        pol = CategoricalMLPPolicy("box", 4, 3, hidden=(8,), seed=int(rng.integers(1 << 30)))
        pol.theta *= 20.0
        x = rng.normal(size=(50, 4))
        p = pol.probabilities(x)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(p > 0)
        h = pol.entropy(x)
        assert np.all(h >= 0) and np.all(h <= math.log(3) + 1e-12)


def test_make_policy_picks_head():
    assert isinstance(make_policy(CartPole.spec), CategoricalMLPPolicy)
    assert isinstance(make_policy(PointMass.spec), GaussianMLPPolicy)
    pol = make_policy(CliffWalking.spec)
    assert pol.probabilities(36).shape == (4,)


def test_init_is_deterministic_and_orthogonal():
    a = make_policy(CartPole.spec, seed=3)
    b = make_policy(CartPole.spec, seed=3)
    np.testing.assert_array_equal(a.theta, b.theta)
    net = MLP((4, 64, 64, 2))
    w, shape, _ = net.layers[1]
    W = a.theta[w].reshape(shape)
    np.testing.assert_allclose(W @ W.T, 2.0 * np.eye(64), atol=1e-10)


def test_checkpoint_round_trip(tmp_path):
    pol = make_policy(PointMass.spec, seed=2)
    vn = ValueNet("box", 4, seed=3)
    opt = Adam(pol.n_params + vn.n_params)
    opt.step(np.zeros(opt.m.size), np.ones(opt.m.size))
    path = tmp_path / "ck.bin"
    save_checkpoint(path, pol, vn, opt, env_id="pointmass", iteration=7, config={"seed": 1})
    data = load_checkpoint(path)
    np.testing.assert_array_equal(data["policy"].theta, pol.theta)
    np.testing.assert_array_equal(data["value"].theta, vn.theta)
    np.testing.assert_array_equal(data["arrays"]["adam_m"], opt.m)
    assert data["header"]["iteration"] == 7 and data["header"]["adam_step"] == 1
    assert path.read_bytes()[:8] == b"GPGRLCKP"
    check_compatible(data["policy"], PointMass.spec)
    with pytest.raises(CheckpointError):
        check_compatible(data["policy"], CliffWalking.spec)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOTACKPT" + b"\0" * 16)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.bin")
