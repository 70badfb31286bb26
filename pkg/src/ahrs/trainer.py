"""Hybrid-reward PPO training loop with periodic rule scheduling."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import nets, rules
from .envs import Env, make_env
from .errors import EmptyWindow, MissingLlmHandle, NonFiniteLoss, ShapeMismatch
from .estimation import (
    BranchStats,
    RolloutBatch,
    StatsHistory,
    compute_gae_per_branch,
    concat_batches,
    normalize_advantages,
    push_history,
    summarize_branches,
)
from .reward_dsl import AuxReward
from .rules import RuleParams, WeightVector
from .scheduler import Scheduler, SelectionContext, SelectorKind

log = logging.getLogger(__name__)

ALGOS = ("ppo", "hd-ppo", "ahrs", "ahrs-r", "ahrs-d", "ppo-a", "hd-ppo-a")
SELECTORS = ("llm", "replay", "scripted", "random", "fixed")
ADVANTAGE_NORMS = ("combined", "branch", "none")


@dataclass(frozen=True)
class TrainConfig:
    env: str = "point-mass-nav"
    total_epochs: int = 500
    steps_per_epoch: int = 2048
    num_envs: int = 8
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    lr_policy: float = 3e-4
    lr_value: float = 1e-3
    update_epochs: int = 4
    minibatch_size: int = 256
    entropy_coef: float = 0.0
    value_coef: float = 1.0
    max_grad_norm: float = 0.5
    advantage_norm: str = "combined"
    hidden_sizes: tuple[int, ...] = (64, 64)
    w_base: float = 0.5
    w_range: float = 0.5
    schedule_period: int = 100
    history_len: int = 5
    checkpoint_period: int = 100
    algo: str = "ahrs"
    selector: str = "llm"
    rule: int = 8
    script: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8)
    transcript: str = ""
    aux_enabled: bool = True
    aux_expr: str = ""
    llm_temperature: float = 0.0
    llm_max_tokens: int = 1024
    llm_timeout: float = 60.0
    seed: int = 1

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ValueError(f"algo must be one of {ALGOS}")
        if self.selector not in SELECTORS:
            raise ValueError(f"selector must be one of {SELECTORS}")
        if self.advantage_norm not in ADVANTAGE_NORMS:
            raise ValueError(f"advantage_norm must be one of {ADVANTAGE_NORMS}")
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise ValueError("gamma and lambda must lie in [0, 1]")
        if self.clip_eps <= 0 or self.schedule_period < 1 or self.history_len < 1:
            raise ValueError("clip_eps > 0, schedule_period >= 1 and history_len >= 1 required")
        if self.total_epochs < 1 or self.num_envs < 1 or self.steps_per_epoch < self.num_envs:
            raise ValueError("need total_epochs >= 1 and steps_per_epoch >= num_envs >= 1")
        if self.minibatch_size < 1 or self.update_epochs < 1:
            raise ValueError("minibatch_size and update_epochs must be >= 1")

    # algorithm variants -----------------------------------------------------
    @property
    def hybrid(self) -> bool:
        return self.algo not in ("ppo", "ppo-a")

    @property
    def use_aux(self) -> bool:
        if self.algo in ("ppo", "hd-ppo"):
            return False
        if self.algo in ("ppo-a", "hd-ppo-a"):
            return True
        return self.aux_enabled

    def selector_kind(self) -> SelectorKind | None:
        if self.algo in ("ppo", "ppo-a"):
            return None
        if self.algo in ("hd-ppo", "hd-ppo-a"):
            return SelectorKind("fixed", rule=self.rule)
        if self.algo == "ahrs-r":
            return SelectorKind("random")
        if self.algo == "ahrs-d":
            if self.selector not in ("llm", "replay"):
                raise ValueError("ahrs-d takes its weights from selector 'llm' or 'replay'")
            return SelectorKind("direct", source=self.selector)
        if self.selector == "scripted":
            return SelectorKind("scripted", script=tuple(self.script))
        if self.selector == "fixed":
            return SelectorKind("fixed", rule=self.rule)
        return SelectorKind(self.selector)


@dataclass
class EpochMetrics:
    epoch: int
    total_return_mean: float
    total_return_std: float
    branch_means: np.ndarray
    branch_vars: np.ndarray
    rule_id: int | None
    weights: np.ndarray
    policy_loss: float
    value_loss: float
    entropy: float
    episodes: int = 0


def weighted_advantages(adv, weights, mode: str = "combined") -> np.ndarray:
    """Per-sample advantage for the surrogate under one of ``ADVANTAGE_NORMS``.

    ``branch`` standardises every branch column before weighting, ``combined``
    standardises the weighted sum, ``none`` uses the raw weighted sum.
    """
    if mode == "branch":
        return combine_advantages(normalize_advantages(adv), weights)
    combined = combine_advantages(adv, weights)
    if mode == "combined":
        return normalize_advantages(combined[:, None])[:, 0]
    if mode == "none":
        return combined
    raise ValueError(f"unknown advantage normalisation {mode!r}")


def combine_advantages(adv, weights) -> np.ndarray:
    adv = np.asarray(adv, dtype=np.float64)
    w = np.asarray(getattr(weights, "weights", weights), dtype=np.float64)
    if adv.ndim != 2 or adv.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"advantages {adv.shape} vs weights {w.shape}")
    return adv @ w


# -- losses and gradients -------------------------------------------------------


def ppo_loss_and_grads(policy: nets.Policy, values: nets.ValueNet, mb: dict, combined_adv,
                       clip_eps: float, value_coef: float = 1.0, entropy_coef: float = 0.0):
    """Clipped surrogate + summed branch regression; returns (losses, policy grad, value grad).

    ``combined_adv`` is the already weighted per-sample advantage.
    """
    obs, actions, logp_old = mb["obs"], mb["actions"], mb["logprobs_old"]
    targets = mb["returns_target"]
    A = np.asarray(combined_adv, dtype=np.float64)
    n = obs.shape[0]

    mu, cache = nets.mlp_forward(policy.trunk, obs)
    logp = nets.gaussian_logprob(mu, policy.log_std, actions)
    ratio = np.exp(logp - logp_old)
    surr1 = ratio * A
    surr2 = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * A
    policy_loss = -float(np.mean(np.minimum(surr1, surr2)))
    entropy = nets.gaussian_entropy(policy.log_std)

    g_logp = np.where(surr1 <= surr2, -ratio * A / n, 0.0)
    dmu_el, dls_el = nets.gaussian_logprob_grads(mu, policy.log_std, actions)
    trunk_grad, _ = nets.mlp_backward(policy.trunk, cache, g_logp[:, None] * dmu_el)
    ls_grad = (g_logp[:, None] * dls_el).sum(axis=0) - entropy_coef * np.ones_like(policy.log_std)
    pgrad = nets.Policy(trunk_grad, ls_grad)

    value_loss = 0.0
    vgrads = []
    for k, br in enumerate(values.branches):
        v, vc = nets.mlp_forward(br, obs)
        err = v[:, 0] - targets[:, k]
        value_loss += float(np.mean(err * err))
        g, _ = nets.mlp_backward(br, vc, (value_coef * 2.0 / n) * err[:, None])
        vgrads.append(g)
    losses = {
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": entropy,
        "total": policy_loss + value_coef * value_loss - entropy_coef * entropy,
    }
    return losses, pgrad, nets.ValueNet(vgrads)


@dataclass
class Optimizers:
    policy: nets.AdamState
    value: nets.AdamState

    @classmethod
    def create(cls, policy: nets.Policy, values: nets.ValueNet) -> "Optimizers":
        return cls(nets.AdamState.for_params(policy.arrays()), nets.AdamState.for_params(values.arrays()))


def ppo_update(policy: nets.Policy, values: nets.ValueNet, data: dict, weights, config: TrainConfig,
               opt: Optimizers, rng: np.random.Generator) -> dict:
    """Several epochs of shuffled minibatch Adam steps on one rollout.

    ``data["advantages"]`` holds the raw per-branch advantages; they are
    weighted and normalised according to ``config.advantage_norm``.
    """
    combined = weighted_advantages(data["advantages"], weights, config.advantage_norm)
    n = combined.shape[0]
    sums = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0}
    count = 0
    for _ in range(config.update_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            idx = perm[start:start + config.minibatch_size]
            mb = {k: data[k][idx] for k in ("obs", "actions", "logprobs_old", "returns_target")}
            losses, pgrad, vgrad = ppo_loss_and_grads(
                policy, values, mb, combined[idx], config.clip_eps, config.value_coef, config.entropy_coef)
            if not math.isfinite(losses["total"]):
                raise NonFiniteLoss(f"non-finite loss {losses}")
            pg, vg = pgrad.arrays(), vgrad.arrays()
            nets.clip_by_global_norm(pg, config.max_grad_norm)
            nets.clip_by_global_norm(vg, config.max_grad_norm)
            nets.adam_step(policy.arrays(), pg, opt.policy, config.lr_policy)
            nets.adam_step(values.arrays(), vg, opt.value, config.lr_value)
            policy.clamp_log_std()
            for k in sums:
                sums[k] += losses[k]
            count += 1
    return {k: v / count for k, v in sums.items()}


# -- rollout -----------------------------------------------------------------------


@dataclass
class Rollout:
    segments: list[RolloutBatch]
    branch_episode_returns: np.ndarray  # (E, B)
    task_episode_returns: np.ndarray  # (E,) summed env components, auxiliary excluded


class Collector:
    """Steps ``num_envs`` handles with a shared policy; episodes span epochs."""

    def __init__(self, config: TrainConfig, env_seeds, noise_rng: np.random.Generator,
                 aux: AuxReward | None):
        self.config = config
        self.envs: list[Env] = [make_env(config.env, s) for s in env_seeds]
        self.spec = self.envs[0].spec
        self.noise_rng = noise_rng
        self.aux = aux
        self.hybrid = config.hybrid
        self.n_branches = (self.spec.K + (1 if aux is not None else 0)) if self.hybrid else 1
        self.episode_counter = [0] * len(self.envs)
        self.obs = [env.reset(0) for env in self.envs]
        self.running = [np.zeros(self.n_branches) for _ in self.envs]
        self.running_task = [0.0 for _ in self.envs]

    def reward_vector(self, env: Env, obs_next, action, step: int, r_env: np.ndarray) -> tuple[np.ndarray, float]:
        task = float(r_env.sum())
        aux_val = None
        if self.aux is not None:
            aux_val = self.aux(env.bindings(obs_next, action, step))
        if self.hybrid:
            r = r_env if aux_val is None else np.append(r_env, aux_val)
        else:
            r = np.array([task + (aux_val or 0.0)])
        return r, task

    def collect(self, policy: nets.Policy, values: nets.ValueNet) -> Rollout:
        cfg = self.config
        n_envs = len(self.envs)
        base, extra = divmod(cfg.steps_per_epoch, n_envs)
        lengths = [base + (1 if i < extra else 0) for i in range(n_envs)]
        buf = [{"obs": [], "act": [], "logp": [], "rew": [], "val": [], "done": []} for _ in range(n_envs)]
        ep_branch, ep_task = [], []
        std = np.exp(policy.log_std)
        value_fn = nets.StackedValues(values)
        for t in range(max(lengths)):
            active = [i for i in range(n_envs) if t < lengths[i]]
            obs = np.stack([self.obs[i] for i in active])
            mu, _ = nets.mlp_forward(policy.trunk, obs)
            v = value_fn(obs)
            act = mu + std * self.noise_rng.standard_normal(mu.shape)
            logp = nets.gaussian_logprob(mu, policy.log_std, act)
            for j, i in enumerate(active):
                env = self.envs[i]
                step_index = env.t
                nxt, r_env, done = env.step(act[j])
                r, task = self.reward_vector(env, nxt, act[j], step_index, r_env)
                b = buf[i]
                b["obs"].append(obs[j])
                b["act"].append(act[j])
                b["logp"].append(logp[j])
                b["rew"].append(r)
                b["val"].append(v[j])
                b["done"].append(done)
                self.running[i] = self.running[i] + r
                self.running_task[i] += task
                if done:
                    ep_branch.append(self.running[i])
                    ep_task.append(self.running_task[i])
                    self.running[i] = np.zeros(self.n_branches)
                    self.running_task[i] = 0.0
                    self.episode_counter[i] += 1
                    nxt = env.reset(self.episode_counter[i])
                self.obs[i] = nxt
        boot = value_fn(np.stack(self.obs))
        segments = []
        for i, b in enumerate(buf):
            segments.append(RolloutBatch(
                obs=np.array(b["obs"]),
                actions=np.array(b["act"]),
                logprobs_old=np.array(b["logp"]),
                rewards=np.array(b["rew"]),
                values=np.vstack([np.array(b["val"]), boot[i][None, :]]),
                dones=np.array(b["done"], dtype=bool),
            ))
        B = self.n_branches
        return Rollout(
            segments,
            np.array(ep_branch).reshape(-1, B),
            np.array(ep_task, dtype=np.float64),
        )


def collect_rollout(collector: Collector, policy: nets.Policy, values: nets.ValueNet) -> Rollout:
    return collector.collect(policy, values)


# -- main loop ---------------------------------------------------------------------


def _describe_rewards(env: Env, aux: AuxReward | None) -> str:
    lines = [f"{i + 1}.{d}" for i, d in enumerate(env.text.rewards)]
    if aux is not None:
        lines.append(f"{len(lines) + 1}.aux: auxiliary reward defined by the expression {aux.text}")
    return "\n".join(lines)


class Trainer:
    def __init__(self, config: TrainConfig, llm=None, sink=None, out_dir=None):
        self.config = config
        self.sink = sink
        self.out_dir = Path(out_dir) if out_dir is not None else None
        ss = np.random.SeedSequence(config.seed)
        init_ss, noise_ss, shuffle_ss, select_ss, env_ss = ss.spawn(5)
        env_seeds = [int(s) for s in env_ss.generate_state(config.num_envs)]
        probe = make_env(config.env)
        self.spec = probe.spec
        self.aux = None
        if config.use_aux:
            text = config.aux_expr or probe.text.default_aux_expr
            self.aux = AuxReward(text, probe.spec.obs_names + ("action_norm", "step"))
        self.collector = Collector(config, env_seeds, np.random.default_rng(noise_ss), self.aux)
        self.n_branches = self.collector.n_branches
        init_rng = np.random.default_rng(init_ss)
        self.policy = nets.init_policy(self.spec.obs_dim, self.spec.act_dim, config.hidden_sizes, init_rng)
        self.values = nets.init_value_net(self.spec.obs_dim, self.n_branches, config.hidden_sizes, init_rng)
        self.opt = Optimizers.create(self.policy, self.values)
        self.shuffle_rng = np.random.default_rng(shuffle_ss)
        kind = config.selector_kind()
        self.scheduler = None
        if kind is not None:
            self.scheduler = Scheduler(
                kind, llm=llm, seed=int(select_ss.generate_state(1)[0]),
                model=getattr(llm, "model", None), temperature=config.llm_temperature,
                max_tokens=config.llm_max_tokens, timeout=config.llm_timeout,
                w_base=config.w_base, w_range=config.w_range)
            if kind.needs_llm and llm is None:
                raise MissingLlmHandle(f"selector {kind.variant!r} needs an LLM client or a transcript")
        self.history = StatsHistory(config.history_len)
        self.weights = WeightVector(np.ones(self.n_branches), None, 0)
        self.rule_id: int | None = None
        self.window: list[np.ndarray] = []
        self.transcript: list[dict] = []
        self.reward_desc = _describe_rewards(probe, self.aux)
        self.task_desc = probe.text.task
        self.env_desc = probe.text.environment
        self.branch_names = tuple(self.spec.reward_names) + (("aux",) if self.aux is not None else ()) \
            if config.hybrid else ("total",)
        self._last_branch = (np.zeros(self.n_branches), np.zeros(self.n_branches))
        self._last_total = (0.0, 0.0)

    def is_tick(self, epoch: int) -> bool:
        return (epoch - 1) % self.config.schedule_period == 0

    def tick(self, epoch: int) -> None:
        cfg = self.config
        window = np.vstack(self.window) if self.window else np.zeros((0, self.n_branches))
        self.window = []
        try:
            stats = summarize_branches(window, epoch)
        except EmptyWindow:
            log.warning("epoch %d: no completed episodes since the last tick; using zero statistics", epoch)
            stats = BranchStats(np.zeros(self.n_branches), np.zeros(self.n_branches), epoch)
        before = self.history.snapshot()
        ctx = SelectionContext(
            task_desc=self.task_desc, env_desc=self.env_desc, reward_desc=self.reward_desc,
            stats=stats, history=before, prev_rule=self.scheduler.prev_rule,
            prev_weights=self.weights if self.scheduler.ticks else None,
            period=cfg.schedule_period, branch_names=self.branch_names)
        sel, entry = self.scheduler.select(ctx)
        self.transcript.append(entry)
        push_history(self.history, stats)
        if sel.weights is not None:
            self.weights = WeightVector(sel.weights.weights, None, epoch)
            self.rule_id = None
        else:
            self.weights = rules.compute_weights(sel.rule_id, stats, before, RuleParams(),
                                                 cfg.w_base, cfg.w_range)
            self.rule_id = sel.rule_id

    def run_epoch(self, epoch: int) -> EpochMetrics:
        cfg = self.config
        rollout = self.collector.collect(self.policy, self.values)
        for seg in rollout.segments:
            compute_gae_per_branch(seg, cfg.gamma, cfg.lam)
        if len(rollout.branch_episode_returns):
            self.window.append(rollout.branch_episode_returns)
        if self.scheduler is not None and self.is_tick(epoch):
            self.tick(epoch)
        data = concat_batches(rollout.segments)
        losses = ppo_update(self.policy, self.values, data, self.weights, cfg, self.opt, self.shuffle_rng)

        if len(rollout.task_episode_returns):
            er = rollout.branch_episode_returns
            self._last_branch = (er.mean(axis=0), er.var(axis=0))
            self._last_total = (float(rollout.task_episode_returns.mean()), float(rollout.task_episode_returns.std()))
        return EpochMetrics(
            epoch=epoch,
            total_return_mean=self._last_total[0],
            total_return_std=self._last_total[1],
            branch_means=self._last_branch[0],
            branch_vars=self._last_branch[1],
            rule_id=self.rule_id,
            weights=np.array(self.weights.weights, dtype=np.float64),
            policy_loss=losses["policy_loss"],
            value_loss=losses["value_loss"],
            entropy=losses["entropy"],
            episodes=len(rollout.task_episode_returns),
        )

    def checkpoint(self, epoch: int) -> None:
        if self.out_dir is None:
            return
        nets.save_checkpoint(self.out_dir / "checkpoint.npz", self.policy, self.values,
                             {"epoch": epoch, "algo": self.config.algo, "env": self.config.env})

    def train(self) -> list[EpochMetrics]:
        history = []
        for epoch in range(1, self.config.total_epochs + 1):
            m = self.run_epoch(epoch)
            history.append(m)
            if self.sink is not None:
                self.sink(m)
            if epoch % self.config.checkpoint_period == 0:
                self.checkpoint(epoch)
        self.checkpoint(self.config.total_epochs)
        return history


def train(config: TrainConfig, llm=None, sink=None, out_dir=None) -> list[EpochMetrics]:
    return Trainer(config, llm=llm, sink=sink, out_dir=out_dir).train()


def config_fields() -> list[str]:
    return [f.name for f in fields(TrainConfig)]


__all__ = [
    "ALGOS", "TrainConfig", "EpochMetrics", "Trainer", "train", "combine_advantages",
    "weighted_advantages", "ppo_loss_and_grads", "ppo_update", "collect_rollout", "Collector", "Optimizers",
]
