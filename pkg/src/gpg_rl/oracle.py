"""Exact policy gradients on small tabular MDPs and Monte Carlo consistency checks.

The objective is the undiscounted total reward over a fixed horizon.  Exact
values come from enumerating every positive-probability trajectory; the
sampled estimators (group bin baselines, GRPO outcome normalization, plain
REINFORCE) are compared against them for growing group sizes.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .advantage import bin_baseline_arrays, grpo_outcome_advantages, parse_binning
from .envs import enumerate_trajectories, make_rng
from .envs.tabular import TabularMDP
from .errors import ConfigError, InvalidInputError
from .policy import TabularSoftmaxPolicy

DEFAULT_N_LIST = (100, 1000, 10_000)


def relative_l2_error(estimate, exact) -> float:
    return float(np.linalg.norm(np.asarray(estimate) - exact) / max(np.linalg.norm(exact), 1e-12))


def _trajectory_probs(mdp, policy, enum):
    probs = policy.probabilities()
    T = enum.actions.shape[1]
    pi = probs[enum.states[:, :T], enum.actions].prod(axis=1) if T else np.ones(len(enum))
    return enum.dynamics_prob * pi


def _check_policy(mdp: TabularMDP, policy: TabularSoftmaxPolicy):
    if (policy.n_states, policy.n_actions) != (mdp.num_states, mdp.num_actions):
        raise InvalidInputError("policy table does not match the MDP's (S, A)")


def exact_objective_and_gradient(mdp: TabularMDP, policy: TabularSoftmaxPolicy, horizon=None):
    """Return ``(eta, grad_eta)`` with ``eta = sum_tau p(tau) R(tau)`` over all trajectories."""
    _check_policy(mdp, policy)
    enum = enumerate_trajectories(mdp, horizon)
    p = _trajectory_probs(mdp, policy, enum)
    total = enum.rewards.sum(axis=1)
    eta = float(p @ total)
    T = enum.actions.shape[1]
    weights = np.repeat(p * total, T)
    grad = policy.grad_log_prob(enum.states[:, :T].ravel(), enum.actions.ravel(), weights=weights)
    return eta, grad


def exact_gradient_with_baseline(mdp, policy, baseline, horizon=None):
    """``E[sum_t (R_t - b(t, s_t)) grad log pi(a_t|s_t)]`` by enumeration.

    ``baseline`` is a (T, S) array of fixed values; the result equals the
    exact policy gradient for every choice of it.
    """
    _check_policy(mdp, policy)
    enum = enumerate_trajectories(mdp, horizon)
    p = _trajectory_probs(mdp, policy, enum)
    T = enum.actions.shape[1]
    to_go = np.cumsum(enum.rewards[:, ::-1], axis=1)[:, ::-1]
    s = enum.states[:, :T]
    adv = to_go - np.asarray(baseline)[np.arange(T)[None, :], s]
    return policy.grad_log_prob(s.ravel(), enum.actions.ravel(), weights=(p[:, None] * adv).ravel())


def exact_return_std(mdp, policy, horizon=None) -> float:
    """Population standard deviation of the total return under the policy."""
    _check_policy(mdp, policy)
    enum = enumerate_trajectories(mdp, horizon)
    p = _trajectory_probs(mdp, policy, enum)
    total = enum.rewards.sum(axis=1)
    mean = p @ total
    return float(np.sqrt(max(p @ (total - mean) ** 2, 0.0)))


def state_visit_probabilities(mdp, policy, horizon=None) -> np.ndarray:
    """Probability that each state is occupied at some step ``t < T``."""
    enum = enumerate_trajectories(mdp, horizon)
    p = _trajectory_probs(mdp, policy, enum)
    T = enum.actions.shape[1]
    visited = np.zeros((len(enum), mdp.num_states), dtype=bool)
    visited[np.arange(len(enum))[:, None], enum.states[:, :T]] = True
    return p @ visited


def sample_trajectories(mdp: TabularMDP, policy: TabularSoftmaxPolicy, n: int, rng):
    """Draw ``n`` fixed-horizon trajectories; returns ``(states, actions, rewards)``."""
    T, S = mdp.horizon, mdp.num_states
    probs = policy.probabilities()
    pcdf = np.cumsum(probs, axis=1)
    tcdf = np.cumsum(mdp.transitions, axis=2)
    states = np.empty((n, T + 1), dtype=np.int64)
    actions = np.empty((n, T), dtype=np.int64)
    rewards = np.empty((n, T))
    states[:, 0] = np.minimum((np.cumsum(mdp.initial) <= rng.random(n)[:, None]).sum(1), S - 1)
    for t in range(T):
        s = states[:, t]
        a = np.minimum((pcdf[s] <= rng.random(n)[:, None]).sum(1), mdp.num_actions - 1)
        nxt = np.minimum((tcdf[s, a] <= rng.random(n)[:, None]).sum(1), S - 1)
        actions[:, t], states[:, t + 1] = a, nxt
        rewards[:, t] = mdp.rewards[s, a, nxt]
    return states, actions, rewards


def _bin_ids(states, T, binning):
    n = len(states)
    if binning.kind == "universal":
        return np.zeros((n, T), dtype=np.int64)
    if binning.kind == "time":
        return np.broadcast_to(np.arange(T), (n, T))
    return states[:, :T]


def asymptotic_covariance(mdp, policy, estimator):
    """Exact per-trajectory mean and covariance of a group estimator in the large-N limit.

    For bin baselines the limit replaces each bin mean with its population
    value (the expected first-visit return given the bin is visited); the
    error of the estimated means does not contribute to first order because
    the score has zero conditional mean.  ``N * Cov(g_N)`` tends to the
    returned matrix.  Supports ``"reinforce"`` and binning estimators.
    """
    est = parse_estimator(estimator)
    if callable(est) or est == "grpo":
        raise ConfigError("asymptotic covariance is defined for reinforce and bin baselines")
    _check_policy(mdp, policy)
    enum = enumerate_trajectories(mdp)
    p = _trajectory_probs(mdp, policy, enum)
    T = enum.actions.shape[1]
    M = len(p)
    to_go = np.cumsum(enum.rewards[:, ::-1], axis=1)[:, ::-1]
    if est == "reinforce":
        adv = to_go
    else:
        ids = _bin_ids(enum.states, T, est[1])
        n_bins = int(ids.max()) + 1
        first = np.zeros((M, n_bins), dtype=bool)
        first_ret = np.zeros((M, n_bins))
        for t in range(T - 1, -1, -1):       # backwards so the earliest visit wins
            first[np.arange(M), ids[:, t]] = True
            first_ret[np.arange(M), ids[:, t]] = to_go[:, t]
        mass = p @ first
        baseline = np.divide(p @ (first_ret * first), mass, out=np.zeros(n_bins), where=mass > 0)
        adv = to_go - baseline[ids]
    probs = policy.probabilities()
    G = np.zeros((M, mdp.num_states, mdp.num_actions))
    rows = np.arange(M)
    for t in range(T):
        s, a = enum.states[:, t], enum.actions[:, t]
        G[rows, s] -= probs[s] * adv[:, t, None]
        G[rows, s, a] += adv[:, t]
    G = G.reshape(M, -1)
    mean = p @ G
    dev = G - mean
    return mean, (dev * p[:, None]).T @ dev


def parse_estimator(estimator):
    """Normalize an estimator spec to ``"reinforce"``, ``"grpo"`` or ``("gpg", Binning)``."""
    if callable(estimator) or isinstance(estimator, tuple):
        return estimator
    name = str(estimator)
    if name in ("reinforce", "grpo"):
        return name
    if name.startswith("gpg:"):
        name = name[4:]
    binning = parse_binning(name)
    if binning.kind not in ("universal", "time", "state"):
        raise ConfigError(f"{binning} binning is not defined on tabular MDPs")
    return ("gpg", binning)


def sample_group_advantages(mdp, policy, estimator, n, rng):
    """Sample a group and compute its advantages; returns ``(states, actions, adv)`` as (n, T)."""
    est = parse_estimator(estimator)
    states, actions, rewards = sample_trajectories(mdp, policy, n, rng)
    T = mdp.horizon
    to_go = np.cumsum(rewards[:, ::-1], axis=1)[:, ::-1]
    if est == "reinforce":
        adv = to_go
    elif est == "grpo":
        adv = np.repeat(grpo_outcome_advantages(to_go[:, 0])[:, None], T, axis=1)
    else:
        ids = _bin_ids(states, T, est[1])
        traj = np.broadcast_to(np.arange(n)[:, None], (n, T))
        adv = bin_baseline_arrays(traj.ravel(), ids.ravel(), to_go.ravel()).reshape(n, T)
    return states[:, :T], actions, adv


def estimate_gradient(mdp, policy, estimator, n: int, rng) -> np.ndarray:
    """``(1/N) sum_n sum_t A_t grad log pi(a_t | s_t)`` on a freshly sampled group."""
    est = parse_estimator(estimator)
    if callable(est):
        return np.asarray(est(mdp, policy, n, rng), dtype=np.float64)
    if n < (2 if est == "grpo" else 1):
        raise InvalidInputError(f"group size {n} too small for {estimator}")
    states, actions, adv = sample_group_advantages(mdp, policy, est, n, make_rng(rng))
    return policy.grad_log_prob(states.ravel(), actions.ravel(), weights=adv.ravel()) / n


@dataclass
class ExactGradientReport:
    estimator: str
    exact_gradient: np.ndarray
    samples: list = field(default_factory=list)   # (N, repetition, estimate, rel_error)
    warnings: list = field(default_factory=list)
    label: str = ""

    @property
    def n_values(self):
        return sorted({s[0] for s in self.samples})

    def median_errors(self) -> dict:
        return {n: float(np.median([s[3] for s in self.samples if s[0] == n]))
                for n in self.n_values}

    def monotone_non_increasing(self) -> bool:
        med = [self.median_errors()[n] for n in self.n_values]
        return all(b <= a for a, b in zip(med, med[1:]))

    def csv_rows(self):
        return [(self.label or self.estimator, n, rep, err)
                for n, rep, _, err in sorted(self.samples, key=lambda s: (s[0], s[1]))]

    def to_csv(self, header=True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(["estimator", "N", "repetition", "rel_error"])
        for row in self.csv_rows():
            w.writerow([row[0], row[1], row[2], repr(row[3])])
        return buf.getvalue()


def _precondition_warnings(mdp, policy, estimator):
    est = parse_estimator(estimator)
    out = []
    if mdp.reward_bound <= 0 or not np.isfinite(mdp.reward_bound):
        out.append("rewards are not bounded")
    if isinstance(est, tuple) and est[1].kind == "state":
        visit = state_visit_probabilities(mdp, policy)
        dead = np.flatnonzero(visit <= 0).tolist()
        if dead:
            out.append(f"state bins never visited under the policy: {dead}")
    return out


def consistency_experiment(mdp, policy, estimator, n_list=DEFAULT_N_LIST, repetitions=20,
                           seed=0, target=None, label="") -> ExactGradientReport:
    """Relative L2 error of ``estimator`` against the exact gradient for each group size.

    Repetition ``r`` at group size ``N`` uses the generator seeded by
    ``(seed, N, r)``, so reports are reproducible and order independent.
    """
    exact = exact_objective_and_gradient(mdp, policy)[1] if target is None else np.asarray(target)
    name = estimator if isinstance(estimator, str) else getattr(estimator, "__name__", "custom")
    report = ExactGradientReport(name, exact, label=label)
    if not callable(estimator):
        report.warnings = _precondition_warnings(mdp, policy, estimator)
    for n in n_list:
        for rep in range(repetitions):
            rng = make_rng(np.random.SeedSequence([seed, n, rep]))
            g = estimate_gradient(mdp, policy, estimator, n, rng)
            report.samples.append((n, rep, g, relative_l2_error(g, exact)))
    return report


def grpo_corollary_check(mdp, policy, n_list=DEFAULT_N_LIST, repetitions=20, seed=0):
    """Compare GRPO gradient estimates with ``grad eta / std(R)``, both from enumeration."""
    sigma = exact_return_std(mdp, policy)
    if sigma <= 1e-12:
        raise InvalidInputError("return has zero variance under the policy; "
                                "the normalized gradient is undefined")
    _, grad = exact_objective_and_gradient(mdp, policy)
    return consistency_experiment(mdp, policy, "grpo", n_list, repetitions, seed,
                                  target=grad / sigma, label="grpo-normalized")
