"""Toy continuous-control environments that emit decomposed reward vectors.

Both environments run fixed-length episodes (no early termination) and clip
actions internally, so every reward component is bounded and can be checked
by hand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, SteppedAfterDone, UnknownEnv

DT = 0.05


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    act_dim: int
    K: int
    reward_names: tuple[str, ...]
    obs_names: tuple[str, ...]
    horizon: int
    action_low: float
    action_high: float

    def __post_init__(self):
        if len(self.reward_names) != self.K or len(set(self.reward_names)) != self.K:
            raise ValueError("reward_names must hold K unique entries")
        if len(self.obs_names) != self.obs_dim or len(set(self.obs_names)) != self.obs_dim:
            raise ValueError("obs_names must hold obs_dim unique entries")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


@dataclass(frozen=True)
class EnvText:
    """Natural-language descriptions fed into the scheduler prompts."""

    task: str
    environment: str
    rewards: tuple[str, ...]
    default_aux_expr: str


class Env:
    spec: EnvSpec
    text: EnvText

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.t = 0
        self.done = True
        self._ready = False

    # subclasses fill these in
    def _reset_state(self, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def _advance(self, action: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def observe(self) -> np.ndarray:
        raise NotImplementedError

    def reset(self, episode_seed: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, int(episode_seed)])
        self._reset_state(rng)
        self.t = 0
        self.done = False
        self._ready = True
        return self.observe()

    def step(self, action) -> tuple[np.ndarray, np.ndarray, bool]:
        if not self._ready or self.done:
            raise SteppedAfterDone(f"{self.spec.name}: step() called on a finished episode")
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.shape[0] != self.spec.act_dim:
            raise DimensionMismatch(f"expected action of length {self.spec.act_dim}, got {a.shape[0]}")
        lo, hi = self.spec.action_low, self.spec.action_high
        clipped = [min(max(float(x), lo), hi) for x in a]
        rewards = self._advance(clipped)
        self.t += 1
        self.done = self.t >= self.spec.horizon
        return self.observe(), rewards, self.done

    def bindings(self, obs: np.ndarray, action: np.ndarray, step: int) -> dict[str, float]:
        """Variable namespace for auxiliary reward expressions."""
        names = self.spec.obs_names
        out = {n: float(v) for n, v in zip(names, obs)}
        lo, hi = self.spec.action_low, self.spec.action_high
        out["action_norm"] = math.sqrt(sum(min(max(float(x), lo), hi) ** 2 for x in np.ravel(action)))
        out["step"] = float(step)
        return out


class PointMassNav(Env):
    spec = EnvSpec(
        name="point-mass-nav",
        obs_dim=6,
        act_dim=2,
        K=4,
        reward_names=("pos", "progress", "vel_penalty", "energy"),
        obs_names=("pos_x", "pos_y", "vel_x", "vel_y", "goal_x", "goal_y"),
        horizon=200,
        action_low=-1.0,
        action_high=1.0,
    )
    text = EnvText(
        task=(
            "The task involves steering a point mass on a plane to a randomly placed goal "
            "and settling there, using a 2-D force command, while avoiding high speed and "
            "wasted control effort. Episodes last 200 steps."
        ),
        environment=(
            "State: position (pos_x, pos_y), velocity (vel_x, vel_y), goal (goal_x, goal_y). "
            "Start and goal are drawn uniformly from [-1, 1]^2 at least 0.5 apart. "
            "Action: force in [-1, 1]^2. Dynamics with dt = 0.05: "
            "vel += dt*(force - 0.1*vel); pos += dt*vel."
        ),
        rewards=(
            "pos: exp(-2*d) where d is the distance to the goal; rewards being close.",
            "progress: 10*(d_prev - d); rewards reducing the distance during the step.",
            "vel_penalty: -0.05*|vel|^2; penalizes moving fast.",
            "energy: -0.01*|force|^2; penalizes control effort.",
        ),
        default_aux_expr="-0.5*tanh(2*sqrt((pos_x-goal_x)^2 + (pos_y-goal_y)^2))",
    )

    def _reset_state(self, rng):
        while True:
            start = rng.uniform(-1.0, 1.0, size=2)
            goal = rng.uniform(-1.0, 1.0, size=2)
            if np.linalg.norm(start - goal) >= 0.5:
                break
        self.px, self.py = float(start[0]), float(start[1])
        self.vx, self.vy = 0.0, 0.0
        self.gx, self.gy = float(goal[0]), float(goal[1])

    def distance(self) -> float:
        return math.hypot(self.px - self.gx, self.py - self.gy)

    def _advance(self, force):
        fx, fy = force
        d_prev = self.distance()
        self.vx += DT * (fx - 0.1 * self.vx)
        self.vy += DT * (fy - 0.1 * self.vy)
        self.px += DT * self.vx
        self.py += DT * self.vy
        d = self.distance()
        return np.array([
            math.exp(-2.0 * d),
            10.0 * (d_prev - d),
            -0.05 * (self.vx * self.vx + self.vy * self.vy),
            -0.01 * (fx * fx + fy * fy),
        ])

    def observe(self):
        return np.array([self.px, self.py, self.vx, self.vy, self.gx, self.gy])


class PendulumDecomposed(Env):
    """Swing-up pendulum; theta = 0 is upright."""

    GRAVITY = 10.0
    MASS = 1.0
    LENGTH = 1.0

    spec = EnvSpec(
        name="pendulum-decomposed",
        obs_dim=3,
        act_dim=1,
        K=3,
        reward_names=("angle", "angvel_penalty", "energy"),
        obs_names=("cos_theta", "sin_theta", "theta_dot"),
        horizon=200,
        action_low=-2.0,
        action_high=2.0,
    )
    text = EnvText(
        task=(
            "The task involves swinging a torque-limited pendulum up to the upright position "
            "and balancing it there with little angular velocity and torque. Episodes last 200 steps."
        ),
        environment=(
            "State: angle theta (0 is upright, wrapped to [-pi, pi]) observed as "
            "(cos_theta, sin_theta), and angular velocity theta_dot. Action: torque in [-2, 2]. "
            "Dynamics with g = 10, m = l = 1, dt = 0.05: "
            "theta_dot += dt*(g/l*sin(theta) + torque/(m*l^2)); theta += dt*theta_dot."
        ),
        rewards=(
            "angle: -theta^2; penalizes distance from upright.",
            "angvel_penalty: -0.1*theta_dot^2; penalizes spinning.",
            "energy: -0.001*torque^2; penalizes control effort.",
        ),
        default_aux_expr="0.5*(cos_theta - 1) - 0.05*abs(theta_dot)",
    )

    def _reset_state(self, rng):
        self.theta = float(rng.uniform(-math.pi, math.pi))
        self.theta_dot = float(rng.uniform(-1.0, 1.0))

    def _advance(self, torque):
        u = torque[0]
        g, m, l = self.GRAVITY, self.MASS, self.LENGTH
        self.theta_dot = self.theta_dot + DT * (g / l * math.sin(self.theta) + u / (m * l * l))
        self.theta = wrap_angle(self.theta + DT * self.theta_dot)
        return np.array([
            -self.theta ** 2,
            -0.1 * self.theta_dot ** 2,
            -0.001 * u * u,
        ])

    def observe(self):
        return np.array([math.cos(self.theta), math.sin(self.theta), self.theta_dot])


def wrap_angle(theta: float) -> float:
    return (theta + math.pi) % (2.0 * math.pi) - math.pi


ENVIRONMENTS: dict[str, type[Env]] = {
    PointMassNav.spec.name: PointMassNav,
    PendulumDecomposed.spec.name: PendulumDecomposed,
}


def make_env(name: str, seed: int = 0) -> Env:
    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise UnknownEnv(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
    return cls(seed)


def env_spec(name: str) -> EnvSpec:
    return make_env(name).spec


def variable_namespace(name: str) -> tuple[str, ...]:
    """Identifiers an auxiliary reward expression may reference for this env."""
    return make_env(name).spec.obs_names + ("action_norm", "step")
