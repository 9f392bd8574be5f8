"""Policies and value networks over flat float64 parameter vectors.

Three policy heads share one interface:

* :class:`CategoricalMLPPolicy`: tanh MLP producing logits over discrete actions.
* :class:`GaussianMLPPolicy`: tanh MLP producing the mean of a diagonal Gaussian,
  with state-independent log-std parameters appended to ``theta``.
* :class:`TabularSoftmaxPolicy`: one row of logits per discrete state.

Every method is batched.  A single observation is accepted too, in which case
scalars come back.  Gradients are computed by hand-written reverse mode;
``evaluate`` returns a closure mapping per-sample cotangents of the
log-probability and entropy to a gradient with respect to ``theta``.
"""

from __future__ import annotations

import math

import numpy as np

from .envs.base import EnvSpec, make_rng
from .errors import InvalidInputError

LOG_2PI = math.log(2.0 * math.pi)


def orthogonal(shape, gain, rng):
    """Orthogonal matrix of ``shape`` scaled by ``gain`` (QR of a Gaussian draw)."""
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class MLP:
    """Fully connected tanh network; parameters live in a caller-owned flat vector.

    Layout per layer is ``W`` (out x in, row-major) followed by ``b``.
    """

    def __init__(self, sizes):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise InvalidInputError("an MLP needs at least input and output sizes")
        self.layers = []
        off = 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            w = slice(off, off + fan_out * fan_in)
            off += fan_out * fan_in
            b = slice(off, off + fan_out)
            off += fan_out
            self.layers.append((w, (fan_out, fan_in), b))
        self.n_params = off

    def init_params(self, rng, hidden_gain=math.sqrt(2.0), output_gain=1.0):
        theta = np.zeros(self.n_params)
        last = len(self.layers) - 1
        for i, (w, shape, _) in enumerate(self.layers):
            gain = output_gain if i == last else hidden_gain
            theta[w] = orthogonal(shape, gain, rng).ravel()
        return theta

    def forward(self, theta, x):
        acts = [x]
        h = x
        last = len(self.layers) - 1
        for i, (w, shape, b) in enumerate(self.layers):
            h = h @ theta[w].reshape(shape).T + theta[b]
            if i < last:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def backward(self, theta, acts, dout, grad=None):
        if grad is None:
            grad = np.zeros(self.n_params)
        g = dout
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            w, shape, b = self.layers[i]
            if i < last:
                g = g * (1.0 - acts[i + 1] ** 2)
            grad[w] += (g.T @ acts[i]).ravel()
            grad[b] += g.sum(axis=0)
            if i > 0:
                g = g @ theta[w].reshape(shape)
        return grad


def encode_observations(obs, kind, size):
    """Map a batch of observations to network inputs; returns ``(x, was_single)``."""
    obs = np.asarray(obs)
    if kind == "discrete":
        single = obs.ndim == 0
        idx = np.atleast_1d(obs).astype(np.int64)
        if np.any(idx < 0) or np.any(idx >= size):
            raise InvalidInputError(f"state index outside 0..{size - 1}")
        x = np.zeros((idx.size, size))
        x[np.arange(idx.size), idx] = 1.0
        return x, single
    single = obs.ndim == 1
    x = np.atleast_2d(obs).astype(np.float64)
    if x.shape[1] != size:
        raise InvalidInputError(f"observation has {x.shape[1]} dims, expected {size}")
    return x, single


def _unbatch(arr, single):
    return arr[0] if single else arr


class Policy:
    head = ""

    def __init__(self, theta):
        self.theta = np.asarray(theta, dtype=np.float64)

    @property
    def n_params(self):
        return self.theta.size

    def log_prob(self, obs, actions):
        logp, _, _ = self.evaluate(obs, actions, need_grad=False)
        return logp

    def entropy(self, obs):
        raise NotImplementedError

    def sample(self, obs, rng):
        raise NotImplementedError

    def evaluate(self, obs, actions, need_grad=True):
        """Return ``(log_prob, entropy, backward)``.

        ``backward(dlogp, dentropy=None)`` returns the gradient of
        ``sum(dlogp * log_prob + dentropy * entropy)`` with respect to ``theta``.
        """
        raise NotImplementedError

    def grad_log_prob(self, obs, actions, out=None, weights=None):
        """Accumulate ``sum_i weights_i * grad log pi(a_i | s_i)`` into ``out``."""
        logp, _, backward = self.evaluate(obs, actions)
        w = np.ones(np.size(logp)) if weights is None else np.asarray(weights, np.float64)
        g = backward(np.atleast_1d(w))
        if out is None:
            return g
        if out.shape != self.theta.shape:
            raise InvalidInputError("gradient buffer not aligned with parameters")
        out += g
        return out

    def copy(self):
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.theta = self.theta.copy()
        return clone

    def metadata(self) -> dict:
        raise NotImplementedError


class _CategoricalMixin:
    """Shared softmax algebra for logit-producing heads."""

    n_actions: int

    @staticmethod
    def _log_softmax(logits):
        z = logits - logits.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    def _check_actions(self, actions, batch):
        a = np.atleast_1d(np.asarray(actions)).astype(np.int64)
        if a.shape != (batch,):
            raise InvalidInputError(f"expected {batch} actions, got shape {a.shape}")
        if np.any(a < 0) or np.any(a >= self.n_actions):
            raise InvalidInputError(f"action outside 0..{self.n_actions - 1}")
        return a

    def _categorical_terms(self, logits, actions):
        logp_all = self._log_softmax(logits)
        probs = np.exp(logp_all)
        rows = np.arange(len(actions))
        logp = logp_all[rows, actions]
        ent = -(probs * logp_all).sum(axis=1)

        def dlogits(dlogp, dent=None):
            g = -probs * dlogp[:, None]
            g[rows, actions] += dlogp
            if dent is not None:
                g -= dent[:, None] * probs * (logp_all + ent[:, None])
            return g

        return logp, ent, dlogits

    @staticmethod
    def _sample_categorical(logp_all, rng):
        cdf = np.cumsum(np.exp(logp_all), axis=1)
        u = rng.random(len(cdf))
        a = (cdf <= u[:, None]).sum(axis=1)
        return np.minimum(a, logp_all.shape[1] - 1)


class CategoricalMLPPolicy(_CategoricalMixin, Policy):
    head = "categorical"

    def __init__(self, obs_kind, obs_size, n_actions, hidden=(64, 64), seed=0, theta=None):
        self.obs_kind, self.obs_size, self.n_actions = obs_kind, int(obs_size), int(n_actions)
        self.hidden = tuple(int(h) for h in hidden)
        self.net = MLP((self.obs_size, *self.hidden, self.n_actions))
        if theta is None:
            theta = self.net.init_params(make_rng(seed), output_gain=0.01)
        super().__init__(theta)
        if self.theta.size != self.net.n_params:
            raise InvalidInputError("parameter vector does not match architecture")

    def logits(self, obs):
        x, single = encode_observations(obs, self.obs_kind, self.obs_size)
        out, _ = self.net.forward(self.theta, x)
        return _unbatch(out, single)

    def probabilities(self, obs):
        x, single = encode_observations(obs, self.obs_kind, self.obs_size)
        out, _ = self.net.forward(self.theta, x)
        return _unbatch(np.exp(self._log_softmax(out)), single)

    def entropy(self, obs):
        x, single = encode_observations(obs, self.obs_kind, self.obs_size)
        out, _ = self.net.forward(self.theta, x)
        lp = self._log_softmax(out)
        return _unbatch(-(np.exp(lp) * lp).sum(axis=1), single)

    def sample(self, obs, rng):
        x, single = encode_observations(obs, self.obs_kind, self.obs_size)
        out, _ = self.net.forward(self.theta, x)
        logp_all = self._log_softmax(out)
        a = self._sample_categorical(logp_all, rng)
        logp = logp_all[np.arange(len(a)), a]
        return _unbatch(a, single), _unbatch(logp, single)

    def evaluate(self, obs, actions, need_grad=True):
        x, single = encode_observations(obs, self.obs_kind, self.obs_size)
        out, acts = self.net.forward(self.theta, x)
        a = self._check_actions(actions, len(x))
        logp, ent, dlogits = self._categorical_terms(out, a)

        def backward(dlogp, dent=None):
            return self.net.backward(self.theta, acts, dlogits(np.asarray(dlogp, np.float64),
                                                               None if dent is None
                                                               else np.asarray(dent, np.float64)))

        return _unbatch(logp, single), _unbatch(ent, single), backward

    def metadata(self):
        return {"head": self.head, "obs_kind": self.obs_kind, "obs_size": self.obs_size,
                "action_size": self.n_actions, "hidden": list(self.hidden)}


class GaussianMLPPolicy(Policy):
    head = "gaussian"

    def __init__(self, obs_kind, obs_size, action_dim, hidden=(64, 64), seed=0, theta=None):
        self.obs_kind, self.obs_size, self.action_dim = obs_kind, int(obs_size), int(action_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.net = MLP((self.obs_size, *self.hidden, self.action_dim))
        if theta is None:
            theta = np.concatenate([self.net.init_params(make_rng(seed), output_gain=0.01),
                                    np.zeros(self.action_dim)])
        super().__init__(theta)
        if self.theta.size != self.net.n_params + self.action_dim:
            raise InvalidInputError("parameter vector does not match architecture")

    @property
    def log_std(self):
        return self.theta[self.net.n_params:]

    def mean(self, obs):
        x, single = encode_observations(obs, self.obs_kind, self.obs_size)
        out, _ = self.net.forward(self.theta, x)
        return _unbatch(out, single)

    def entropy(self, obs):
        x, single = encode_observations(obs, self.obs_kind, self.obs_size)
        h = float(np.sum(self.log_std) + 0.5 * self.action_dim * (LOG_2PI + 1.0))
        return _unbatch(np.full(len(x), h), single)

    def _logp(self, mean, actions):
        z = (actions - mean) * np.exp(-self.log_std)
        logp = (-0.5 * z * z - self.log_std - 0.5 * LOG_2PI).sum(axis=1)
        return logp, z

    def sample(self, obs, rng):
        x, single = encode_observations(obs, self.obs_kind, self.obs_size)
        mean, _ = self.net.forward(self.theta, x)
        a = mean + np.exp(self.log_std) * rng.standard_normal(mean.shape)
        logp, _ = self._logp(mean, a)
        return _unbatch(a, single), _unbatch(logp, single)

    def evaluate(self, obs, actions, need_grad=True):
        x, single = encode_observations(obs, self.obs_kind, self.obs_size)
        mean, acts = self.net.forward(self.theta, x)
        a = np.asarray(actions, dtype=np.float64).reshape(len(x), self.action_dim)
        logp, z = self._logp(mean, a)
        ent = np.full(len(x), np.sum(self.log_std) + 0.5 * self.action_dim * (LOG_2PI + 1.0))
        inv_std = np.exp(-self.log_std)

        def backward(dlogp, dent=None):
            dlogp = np.asarray(dlogp, np.float64)
            grad = np.zeros(self.theta.size)
            dmean = dlogp[:, None] * z * inv_std
            self.net.backward(self.theta, acts, dmean, grad[:self.net.n_params])
            dls = (dlogp[:, None] * (z * z - 1.0)).sum(axis=0)
            if dent is not None:
                dls = dls + np.sum(dent)
            grad[self.net.n_params:] = dls
            return grad

        return _unbatch(logp, single), _unbatch(ent, single), backward

    def metadata(self):
        return {"head": self.head, "obs_kind": self.obs_kind, "obs_size": self.obs_size,
                "action_size": self.action_dim, "hidden": list(self.hidden)}


class TabularSoftmaxPolicy(_CategoricalMixin, Policy):
    head = "tabular"

    def __init__(self, n_states, n_actions, logits=None):
        self.n_states, self.n_actions = int(n_states), int(n_actions)
        if logits is None:
            logits = np.zeros(self.n_states * self.n_actions)
        super().__init__(np.asarray(logits, dtype=np.float64).ravel())
        if self.theta.size != self.n_states * self.n_actions:
            raise InvalidInputError("logit table does not match (S, A)")

    @property
    def table(self):
        return self.theta.reshape(self.n_states, self.n_actions)

    def _states(self, obs):
        obs = np.asarray(obs)
        s = np.atleast_1d(obs).astype(np.int64)
        if np.any(s < 0) or np.any(s >= self.n_states):
            raise InvalidInputError(f"state index outside 0..{self.n_states - 1}")
        return s, obs.ndim == 0

    def probabilities(self, obs=None):
        """Action probabilities for ``obs``, or the full (S, A) table when omitted."""
        if obs is None:
            return np.exp(self._log_softmax(self.table))
        s, single = self._states(obs)
        return _unbatch(np.exp(self._log_softmax(self.table[s])), single)

    def entropy(self, obs):
        s, single = self._states(obs)
        lp = self._log_softmax(self.table[s])
        return _unbatch(-(np.exp(lp) * lp).sum(axis=1), single)

    def sample(self, obs, rng):
        s, single = self._states(obs)
        logp_all = self._log_softmax(self.table[s])
        a = self._sample_categorical(logp_all, rng)
        return _unbatch(a, single), _unbatch(logp_all[np.arange(len(a)), a], single)

    def evaluate(self, obs, actions, need_grad=True):
        s, single = self._states(obs)
        a = self._check_actions(actions, len(s))
        logp, ent, dlogits = self._categorical_terms(self.table[s], a)

        def backward(dlogp, dent=None):
            g = dlogits(np.asarray(dlogp, np.float64),
                        None if dent is None else np.asarray(dent, np.float64))
            grad = np.zeros((self.n_states, self.n_actions))
            np.add.at(grad, s, g)
            return grad.ravel()

        return _unbatch(logp, single), _unbatch(ent, single), backward

    def metadata(self):
        return {"head": self.head, "obs_kind": "discrete", "obs_size": self.n_states,
                "action_size": self.n_actions, "hidden": []}


class ValueNet:
    """Scalar-output tanh MLP used as the PPO critic."""

    def __init__(self, obs_kind, obs_size, hidden=(64, 64), seed=0, theta=None):
        self.obs_kind, self.obs_size = obs_kind, int(obs_size)
        self.hidden = tuple(int(h) for h in hidden)
        self.net = MLP((self.obs_size, *self.hidden, 1))
        if theta is None:
            theta = self.net.init_params(make_rng(seed), output_gain=1.0)
        self.theta = np.asarray(theta, dtype=np.float64)
        if self.theta.size != self.net.n_params:
            raise InvalidInputError("parameter vector does not match architecture")

    @property
    def n_params(self):
        return self.theta.size

    def value(self, obs):
        x, single = encode_observations(obs, self.obs_kind, self.obs_size)
        out, _ = self.net.forward(self.theta, x)
        return _unbatch(out[:, 0], single)

    def value_and_backward(self, obs):
        """Return ``(values, backward)`` where ``backward(dv)`` is the parameter gradient."""
        x, single = encode_observations(obs, self.obs_kind, self.obs_size)
        out, acts = self.net.forward(self.theta, x)

        def backward(dv):
            dv = np.atleast_1d(np.asarray(dv, np.float64)).reshape(-1, 1)
            return self.net.backward(self.theta, acts, dv)

        return _unbatch(out[:, 0], single), backward

    def copy(self):
        return ValueNet(self.obs_kind, self.obs_size, self.hidden, theta=self.theta.copy())

    def metadata(self):
        return {"obs_kind": self.obs_kind, "obs_size": self.obs_size, "hidden": list(self.hidden)}


def make_policy(spec: EnvSpec, hidden=(64, 64), seed=0) -> Policy:
    if spec.action_kind == "discrete":
        return CategoricalMLPPolicy(spec.observation_kind, spec.observation_size,
                                    spec.action_size, hidden, seed)
    return GaussianMLPPolicy(spec.observation_kind, spec.observation_size,
                             spec.action_size, hidden, seed)


def policy_from_metadata(meta: dict, theta) -> Policy:
    head = meta["head"]
    if head == "categorical":
        return CategoricalMLPPolicy(meta["obs_kind"], meta["obs_size"], meta["action_size"],
                                    meta["hidden"], theta=theta)
    if head == "gaussian":
        return GaussianMLPPolicy(meta["obs_kind"], meta["obs_size"], meta["action_size"],
                                 meta["hidden"], theta=theta)
    if head == "tabular":
        return TabularSoftmaxPolicy(meta["obs_size"], meta["action_size"], theta)
    raise InvalidInputError(f"unknown policy head {head!r}")
