"""Advantage estimators: group bin baselines, GRPO outcome normalization and GAE.

Group baseline procedure for a group of trajectories and a binning function
``f(s, t)``:

1. compute discounted returns ``R_t`` of every trajectory;
2. scan each trajectory forward and insert ``R_t`` into bin ``f(s_t, t)`` only if
   no earlier step of the same trajectory fell in that bin (first visit);
3. every step, first visit or not, gets ``A_t = R_t - mean(bin f(s_t, t))``.

Binning config grammar: ``universal`` | ``time`` | ``spatial:<eps>`` |
``spatialtime:<eps>`` | ``state``.  Spatial bins quantize ``s_i / eps`` with
round-half-to-even.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidInputError
from .mdp import RolloutGroup

EPS_NUM = 1e-8


@dataclass(frozen=True, slots=True)
class Universal:
    pass


@dataclass(frozen=True, slots=True)
class Time:
    t: int


@dataclass(frozen=True, slots=True)
class Spatial:
    lattice: tuple
    eps: float


@dataclass(frozen=True, slots=True)
class SpatialTime:
    lattice: tuple
    eps: float
    t: int


@dataclass(frozen=True, slots=True)
class DiscreteState:
    state: int


BinKey = Universal | Time | Spatial | SpatialTime | DiscreteState
_UNIVERSAL = Universal()


@dataclass(frozen=True)
class Binning:
    kind: str
    eps: float | None = None

    KINDS = ("universal", "time", "spatial", "spatialtime", "state")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown binning {self.kind!r}")
        if self.kind.startswith("spatial"):
            if self.eps is None or not np.isfinite(self.eps) or self.eps <= 0:
                raise ConfigError(f"{self.kind} binning needs a positive eps")

    def __str__(self):
        return f"{self.kind}:{self.eps:g}" if self.kind.startswith("spatial") else self.kind


def parse_binning(text) -> Binning:
    if isinstance(text, Binning):
        return text
    name, _, arg = str(text).strip().partition(":")
    if name not in Binning.KINDS:
        raise ConfigError(f"unknown binning {text!r}; expected universal, time, "
                          f"spatial:<eps>, spatialtime:<eps> or state")
    if name.startswith("spatial"):
        try:
            return Binning(name, float(arg))
        except ValueError:
            raise ConfigError(f"binning {text!r} needs a numeric eps") from None
    if arg:
        raise ConfigError(f"binning {name!r} takes no argument")
    return Binning(name)


def _is_discrete(obs):
    return np.ndim(obs) == 0 and np.issubdtype(np.asarray(obs).dtype, np.integer)


def _lattice(obs, eps):
    return tuple(int(v) for v in np.rint(np.asarray(obs, dtype=np.float64).reshape(-1) / eps))


def bin_key(observation, episode_timestep: int, binning) -> BinKey:
    binning = parse_binning(binning)
    kind = binning.kind
    if kind == "universal":
        return _UNIVERSAL
    if kind == "time":
        return Time(int(episode_timestep))
    if kind == "state":
        if not _is_discrete(observation):
            raise ConfigError("state binning needs discrete observations")
        return DiscreteState(int(observation))
    if _is_discrete(observation):
        raise ConfigError(f"{kind} binning needs real-vector observations")
    if kind == "spatial":
        return Spatial(_lattice(observation, binning.eps), binning.eps)
    return SpatialTime(_lattice(observation, binning.eps), binning.eps, int(episode_timestep))


def segment_keys(segment, binning) -> list:
    """Bin key of every step of ``segment`` (vectorized over the segment)."""
    binning = parse_binning(binning)
    n = len(segment)
    kind = binning.kind
    if kind == "universal":
        return [_UNIVERSAL] * n
    ts = segment.timesteps
    if kind == "time":
        return [Time(int(t)) for t in ts]
    obs = np.asarray(segment.observations)
    discrete = obs.ndim == 1 and np.issubdtype(obs.dtype, np.integer)
    if kind == "state":
        if not discrete:
            raise ConfigError("state binning needs discrete observations")
        return [DiscreteState(int(s)) for s in obs]
    if discrete:
        raise ConfigError(f"{kind} binning needs real-vector observations")
    lat = np.rint(obs.reshape(n, -1) / binning.eps).astype(np.int64)
    if kind == "spatial":
        return [Spatial(tuple(row), binning.eps) for row in lat.tolist()]
    return [SpatialTime(tuple(row), binning.eps, int(t)) for row, t in zip(lat.tolist(), ts)]


@dataclass
class BinTable:
    """Per-bin running sum and count of first-visit returns."""

    sums: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def insert(self, key, value):
        self.sums[key] = self.sums.get(key, 0.0) + value
        self.counts[key] = self.counts.get(key, 0) + 1

    def mean(self, key):
        try:
            return self.sums[key] / self.counts[key]
        except KeyError:
            raise AssertionError(f"bin {key!r} queried but never populated") from None

    def __contains__(self, key):
        return key in self.counts

    def __len__(self):
        return len(self.counts)

    def items(self):
        return ((k, (self.sums[k], self.counts[k])) for k in self.counts)


def build_bin_table(group, returns, binning, keys=None) -> BinTable:
    """Insert first-visit returns of every segment into their bins."""
    segments = group.segments if isinstance(group, RolloutGroup) else group
    if len(returns) != len(segments):
        raise InvalidInputError("one returns row per segment required")
    table = BinTable()
    for i, (seg, ret) in enumerate(zip(segments, returns)):
        seg_keys = keys[i] if keys is not None else segment_keys(seg, binning)
        seen = set()
        for key, r in zip(seg_keys, ret):
            if key not in seen:
                seen.add(key)
                table.insert(key, float(r))
    return table


def gpg_advantages(group, returns, table: BinTable, binning, loo_baseline=False,
                   keys=None) -> list[np.ndarray]:
    """``A_t = R_t - bin mean`` for every step of every segment.

    With ``loo_baseline`` the segment's own first-visit return is removed from
    the bin mean; a bin with no other contributor gives advantage 0.
    """
    segments = group.segments if isinstance(group, RolloutGroup) else group
    out = []
    for i, (seg, ret) in enumerate(zip(segments, returns)):
        seg_keys = keys[i] if keys is not None else segment_keys(seg, binning)
        ret = np.asarray(ret, dtype=np.float64)
        adv = np.empty_like(ret)
        own = {}
        for t, (key, r) in enumerate(zip(seg_keys, ret)):
            if key not in own:
                own[key] = r
            if not loo_baseline:
                adv[t] = r - table.mean(key)
                continue
            total, count = table.sums[key], table.counts[key]
            adv[t] = 0.0 if count < 2 else r - (total - own[key]) / (count - 1)
        out.append(adv)
    return out


def group_advantages(group, returns, binning, loo_baseline=False):
    """Build the table and the advantages in one pass; returns ``(advantages, table)``."""
    segments = group.segments if isinstance(group, RolloutGroup) else group
    keys = [segment_keys(seg, binning) for seg in segments]
    table = build_bin_table(segments, returns, binning, keys=keys)
    return gpg_advantages(segments, returns, table, binning, loo_baseline, keys=keys), table


def first_visit_mask(traj_ids, bin_ids) -> np.ndarray:
    """True where a step is its trajectory's first entry into its bin.

    Arrays are flat and ordered by trajectory, then time.
    """
    traj_ids = np.asarray(traj_ids, dtype=np.int64)
    bin_ids = np.asarray(bin_ids, dtype=np.int64)
    pair = traj_ids * (int(bin_ids.max(initial=0)) + 1) + bin_ids
    _, first = np.unique(pair, return_index=True)
    mask = np.zeros(pair.size, dtype=bool)
    mask[first] = True
    return mask


def bin_baseline_arrays(traj_ids, bin_ids, returns, loo_baseline=False):
    """Array form of the group baseline over integer bin ids; returns advantages.

    Same rule as :func:`build_bin_table` + :func:`gpg_advantages`, used where
    groups are large and keys are already integers.
    """
    traj_ids = np.asarray(traj_ids, dtype=np.int64)
    bin_ids = np.asarray(bin_ids, dtype=np.int64)
    returns = np.asarray(returns, dtype=np.float64)
    first = first_visit_mask(traj_ids, bin_ids)
    n_bins = int(bin_ids.max(initial=0)) + 1
    sums = np.bincount(bin_ids[first], weights=returns[first], minlength=n_bins)
    counts = np.bincount(bin_ids[first], minlength=n_bins)
    if not loo_baseline:
        return returns - sums[bin_ids] / counts[bin_ids]
    # own first-visit return for each (trajectory, bin) pair
    width = n_bins
    pair = traj_ids * width + bin_ids
    own_lookup = dict(zip(pair[first].tolist(), returns[first].tolist()))
    own = np.array([own_lookup[p] for p in pair.tolist()])
    c = counts[bin_ids]
    safe = np.maximum(c - 1, 1)
    return np.where(c >= 2, returns - (sums[bin_ids] - own) / safe, 0.0)


def grpo_outcome_advantages(terminal_rewards, eps_num: float = EPS_NUM) -> np.ndarray:
    """Group-normalized outcome rewards ``(r - mean) / max(std, eps_num)``, population std."""
    r = np.asarray(terminal_rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise InvalidInputError("GRPO normalization needs a group of at least 2 rewards")
    return (r - r.mean()) / max(r.std(), eps_num)


def normalize_advantages(batch, eps_num: float = EPS_NUM) -> np.ndarray:
    a = np.asarray(batch, dtype=np.float64)
    if a.size == 0:
        raise InvalidInputError("cannot normalize an empty batch")
    return (a - a.mean()) / max(a.std(), eps_num)


def gae_advantages(rewards, values, bootstrap_value, gamma, lam) -> np.ndarray:
    """Truncated GAE by the backward recurrence ``A_t = delta_t + gamma*lam*A_{t+1}``.

    ``values`` holds V(s_0..s_{T-1}); ``bootstrap_value`` is V(s_T), which the
    caller sets to 0 on termination.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if r.shape != v.shape or r.ndim != 1:
        raise InvalidInputError(f"rewards {r.shape} and values {v.shape} must be matching 1-D")
    next_v = np.append(v[1:], float(bootstrap_value))
    delta = r + gamma * next_v - v
    adv = np.empty_like(delta)
    acc = 0.0
    for t in range(len(delta) - 1, -1, -1):
        acc = delta[t] + gamma * lam * acc
        adv[t] = acc
    return adv
