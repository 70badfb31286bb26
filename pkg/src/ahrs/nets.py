"""Small numpy networks with hand-written reverse-mode gradients.

Everything is float64. Inputs may be a single vector ``(in,)`` or a batch
``(N, in)``; backward passes sum parameter gradients over the batch.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CacheMismatch, DimensionMismatch, ShapeMismatch

LOG_STD_MIN = -10.0
LOG_STD_MAX = 2.0
LOG_2PI = math.log(2.0 * math.pi)
CHECKPOINT_VERSION = 1


@dataclass
class Mlp:
    """Affine layers with tanh between them and an identity output."""

    weights: list[np.ndarray]  # each (out, in)
    biases: list[np.ndarray]  # each (out,)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeMismatch("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeMismatch(f"layer {i}: weight {w.shape} / bias {b.shape} do not match")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeMismatch(f"layer {i} input {w.shape[1]} != previous output {self.weights[i - 1].shape[0]}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "Mlp":
        return Mlp([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])


def init_mlp(sizes, rng: np.random.Generator) -> Mlp:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases)


@dataclass
class MlpCache:
    shapes: tuple
    single: bool
    inputs: list[np.ndarray]  # input of every layer, (N, in_i)
    hidden: list[np.ndarray]  # tanh outputs of hidden layers


def mlp_forward(params: Mlp, x) -> tuple[np.ndarray, MlpCache]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.ndim != 2 or h.shape[1] != params.in_dim:
        raise DimensionMismatch(f"input has shape {x.shape}, network expects {params.in_dim} features")
    inputs, hidden = [], []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        h = h @ w.T + b
        if i < last:
            h = np.tanh(h)
            hidden.append(h)
    shapes = tuple(w.shape for w in params.weights)
    return (h[0] if single else h), MlpCache(shapes, single, inputs, hidden)


def mlp_backward(params: Mlp, cache: MlpCache, upstream) -> tuple[Mlp, np.ndarray]:
    """Gradients of ``sum(upstream * output)`` w.r.t. parameters and input."""
    if cache.shapes != tuple(w.shape for w in params.weights):
        raise CacheMismatch("cache was produced by a network with different layer shapes")
    g = np.asarray(upstream, dtype=np.float64)
    if cache.single:
        g = g[None, :]
    if g.shape != (cache.inputs[0].shape[0], params.out_dim):
        raise CacheMismatch(f"upstream shape {np.shape(upstream)} does not match the cached forward pass")
    n = len(params.weights)
    dws: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    dbs: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for i in range(n - 1, -1, -1):
        if i < n - 1:
            a = cache.hidden[i]
            g = g * (1.0 - a * a)
        dws[i] = g.T @ cache.inputs[i]
        dbs[i] = g.sum(axis=0)
        g = g @ params.weights[i]
    return Mlp(dws, dbs), (g[0] if cache.single else g)


# -- policy -------------------------------------------------------------------


@dataclass
class Policy:
    """Diagonal Gaussian with an MLP mean and a state-independent log std."""

    trunk: Mlp
    log_std: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return self.trunk.arrays() + [self.log_std]

    def copy(self) -> "Policy":
        return Policy(self.trunk.copy(), self.log_std.copy())

    def zeros_like(self) -> "Policy":
        return Policy(self.trunk.zeros_like(), np.zeros_like(self.log_std))

    def clamp_log_std(self) -> None:
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)


def init_policy(obs_dim: int, act_dim: int, hidden, rng: np.random.Generator) -> Policy:
    return Policy(init_mlp([obs_dim, *hidden, act_dim], rng), np.zeros(act_dim))


def gaussian_logprob(mu, log_std, action):
    """log N(action; mu, diag(exp(log_std))^2), summed over the last axis."""
    mu = np.asarray(mu, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    if mu.shape[-1:] != log_std.shape[-1:] or mu.shape != action.shape or mu.shape[-1] < 1:
        raise DimensionMismatch(f"mu {mu.shape}, log_std {log_std.shape}, action {action.shape}")
    z = (action - mu) * np.exp(-log_std)
    d = mu.shape[-1]
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std, axis=-1) - 0.5 * d * LOG_2PI


def gaussian_logprob_grads(mu, log_std, action) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of the log-density w.r.t. mu and log_std (elementwise)."""
    inv_var = np.exp(-2.0 * np.asarray(log_std, dtype=np.float64))
    diff = np.asarray(action, dtype=np.float64) - mu
    return diff * inv_var, diff * diff * inv_var - 1.0


def gaussian_entropy(log_std) -> float:
    log_std = np.asarray(log_std, dtype=np.float64)
    return float(np.sum(log_std) + 0.5 * log_std.shape[-1] * (1.0 + LOG_2PI))


# -- value branches -----------------------------------------------------------


@dataclass
class ValueNet:
    """One fully independent MLP per reward branch."""

    branches: list[Mlp] = field(default_factory=list)

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    def arrays(self) -> list[np.ndarray]:
        return [a for br in self.branches for a in br.arrays()]

    def copy(self) -> "ValueNet":
        return ValueNet([br.copy() for br in self.branches])

    def zeros_like(self) -> "ValueNet":
        return ValueNet([br.zeros_like() for br in self.branches])


def init_value_net(obs_dim: int, n_branches: int, hidden, rng: np.random.Generator) -> ValueNet:
    return ValueNet([init_mlp([obs_dim, *hidden, 1], rng) for _ in range(n_branches)])


def value_forward(params: ValueNet, obs) -> np.ndarray:
    """Branch outputs V_k(s): shape (B,) for one observation, (N, B) for a batch."""
    outs = [mlp_forward(br, obs)[0] for br in params.branches]
    return np.concatenate(outs, axis=-1)


def value_forward_cached(params: ValueNet, obs) -> tuple[np.ndarray, list[MlpCache]]:
    results = [mlp_forward(br, obs) for br in params.branches]
    return np.concatenate([r[0] for r in results], axis=-1), [r[1] for r in results]


class StackedValues:
    """Read-only stacked copy of a ValueNet for fast batched evaluation.

    Only valid while the source parameters are unchanged (e.g. one rollout).
    Requires every branch to share the same layer shapes.
    """

    def __init__(self, params: ValueNet):
        n_layers = len(params.branches[0].weights)
        self.weights = [np.stack([br.weights[i].T for br in params.branches]) for i in range(n_layers)]
        self.biases = [np.stack([br.biases[i] for br in params.branches])[:, None, :] for i in range(n_layers)]

    def __call__(self, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        single = obs.ndim == 1
        h = obs[None, None, :] if single else obs[None, :, :]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = np.matmul(h, w) + b
            if i < last:
                h = np.tanh(h)
        out = h[:, :, 0].T  # (N, B)
        return out[0] if single else out


# -- optimisation -------------------------------------------------------------


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[np.ndarray], **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, lr: float) -> list[np.ndarray]:
    """In-place Adam update with bias correction; returns ``params``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch(f"{len(params)} params, {len(grads)} grads, {len(state.m)} optimizer slots")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"param {p.shape}, grad {g.shape}, state {m.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def global_norm(grads: list[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


def clip_by_global_norm(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads:
            g *= scale
    return norm


# -- checkpoints --------------------------------------------------------------


def _mlp_to_dict(prefix: str, mlp: Mlp, out: dict) -> None:
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        out[f"{prefix}/{i}/W"] = w
        out[f"{prefix}/{i}/b"] = b


def _mlp_from_dict(prefix: str, data) -> Mlp:
    weights, biases = [], []
    i = 0
    while f"{prefix}/{i}/W" in data:
        weights.append(np.array(data[f"{prefix}/{i}/W"], dtype=np.float64))
        biases.append(np.array(data[f"{prefix}/{i}/b"], dtype=np.float64))
        i += 1
    return Mlp(weights, biases)


def save_checkpoint(path, policy: Policy, values: ValueNet, meta: dict | None = None) -> Path:
    """Write an ``.npz`` archive; layout is documented in the README."""
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    _mlp_to_dict("policy/trunk", policy.trunk, arrays)
    arrays["policy/log_std"] = policy.log_std
    for k, br in enumerate(values.branches):
        _mlp_to_dict(f"value/{k}", br, arrays)
    header = {"format": "ahrs-checkpoint", "version": CHECKPOINT_VERSION,
              "n_branches": values.n_branches, "meta": meta or {}}
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> tuple[Policy, ValueNet, dict]:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("format") != "ahrs-checkpoint" or header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint header {header}")
        policy = Policy(_mlp_from_dict("policy/trunk", data), np.array(data["policy/log_std"]))
        values = ValueNet([_mlp_from_dict(f"value/{k}", data) for k in range(header["n_branches"])])
    return policy, values, header["meta"]
