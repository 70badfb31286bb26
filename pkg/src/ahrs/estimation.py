"""Per-branch GAE, advantage normalisation and branch return statistics."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyWindow, NonFiniteInput, NonMonotonicEpoch, ShapeMismatch

HISTORY_LEN = 5


@dataclass
class RolloutBatch:
    """One contiguous trajectory segment, every per-step array time-major.

    ``values`` carries one extra row: the bootstrap value of the observation
    that follows the last transition.
    """

    obs: np.ndarray  # (T, obs_dim)
    actions: np.ndarray  # (T, act_dim)
    logprobs_old: np.ndarray  # (T,)
    rewards: np.ndarray  # (T, B)
    values: np.ndarray  # (T + 1, B)
    dones: np.ndarray  # (T,) bool
    advantages: np.ndarray | None = None  # (T, B)
    returns_target: np.ndarray | None = None  # (T, B)
    episode_returns: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))  # (E, B)

    @property
    def T(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_branches(self) -> int:
        return self.rewards.shape[1]


def gae(rewards, values, dones, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Backward GAE recursion, run independently on every column.

    rewards: (T, B); values: (T + 1, B); dones: (T,).
    Returns (advantages, returns_target), both (T, B).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones)
    if rewards.ndim == 1:
        adv, ret = gae(rewards[:, None], np.asarray(values)[:, None], dones, gamma, lam)
        return adv[:, 0], ret[:, 0]
    T, B = rewards.shape
    if values.shape != (T + 1, B) or dones.shape != (T,):
        raise ShapeMismatch(f"rewards {rewards.shape}, values {values.shape}, dones {dones.shape}")
    if not (0.0 <= gamma <= 1.0 and 0.0 <= lam <= 1.0):
        raise ValueError(f"gamma and lambda must lie in [0, 1], got {gamma}, {lam}")
    if not (np.all(np.isfinite(rewards)) and np.all(np.isfinite(values))):
        raise NonFiniteInput("rewards or values contain NaN/inf")
    notdone = 1.0 - dones.astype(np.float64)
    adv = np.zeros((T, B))
    last = np.zeros(B)
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * notdone[t] * values[t + 1] - values[t]
        last = delta + gamma * lam * notdone[t] * last
        adv[t] = last
    return adv, adv + values[:T]


def compute_gae_per_branch(batch: RolloutBatch, gamma: float, lam: float) -> RolloutBatch:
    batch.advantages, batch.returns_target = gae(batch.rewards, batch.values, batch.dones, gamma, lam)
    return batch


def normalize_advantages(adv) -> np.ndarray:
    """Standardise each column (population std); near-constant columns become 0."""
    adv = np.asarray(adv, dtype=np.float64)
    mean = adv.mean(axis=0)
    std = adv.std(axis=0)
    out = np.zeros_like(adv)
    ok = std >= 1e-8
    out[:, ok] = (adv[:, ok] - mean[ok]) / std[ok]
    return out


@dataclass(frozen=True)
class BranchStats:
    means: np.ndarray
    vars: np.ndarray
    epoch: int

    def __post_init__(self):
        if self.means.shape != self.vars.shape:
            raise ShapeMismatch("means and vars differ in length")


def summarize_branches(episode_returns, epoch: int) -> BranchStats:
    """Column means and population variances of per-episode branch returns."""
    er = np.asarray(episode_returns, dtype=np.float64)
    if er.ndim != 2 or er.shape[0] == 0:
        raise EmptyWindow("no completed episodes in the evaluation window")
    return BranchStats(er.mean(axis=0), er.var(axis=0), int(epoch))


class StatsHistory:
    """FIFO of the most recent BranchStats, oldest first."""

    def __init__(self, maxlen: int = HISTORY_LEN, entries=()):
        self.maxlen = maxlen
        self.queue: deque[BranchStats] = deque(maxlen=maxlen)
        for e in entries:
            push_history(self, e)

    def __len__(self) -> int:
        return len(self.queue)

    def __iter__(self):
        return iter(self.queue)

    def __getitem__(self, i) -> BranchStats:
        return self.queue[i]

    @property
    def newest(self) -> BranchStats | None:
        return self.queue[-1] if self.queue else None

    def snapshot(self) -> "StatsHistory":
        return StatsHistory(self.maxlen, list(self.queue))


def push_history(history: StatsHistory, stats: BranchStats) -> StatsHistory:
    if history.newest is not None and stats.epoch <= history.newest.epoch:
        raise NonMonotonicEpoch(f"epoch {stats.epoch} is not after {history.newest.epoch}")
    history.queue.append(stats)
    return history


def concat_batches(batches: list[RolloutBatch]) -> dict[str, np.ndarray]:
    """Flatten GAE-processed segments into one training set (drops bootstrap rows)."""
    return {
        "obs": np.concatenate([b.obs for b in batches]),
        "actions": np.concatenate([b.actions for b in batches]),
        "logprobs_old": np.concatenate([b.logprobs_old for b in batches]),
        "advantages": np.concatenate([b.advantages for b in batches]),
        "returns_target": np.concatenate([b.returns_target for b in batches]),
    }
