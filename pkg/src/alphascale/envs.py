"""Deterministic toy continuous-control environments and behavior policies.

Two environments stand in for full-scale benchmark suites:

* ``pointmass1d`` -- a 1-D point mass with dense quadratic reward. State is
  (position, velocity), the action accelerates the mass.
* ``mazelite2d`` -- a 2-D point mass in a walled box with a sparse -1/0
  reward. Motion into an axis-aligned wall is blocked on that axis.

Both use the same kinematics: ``v' = clamp(v + 0.1 * a, -1, 1)`` and
``pos' = pos + 0.05 * v'`` with actions clamped to ``[-max_action, max_action]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NonFiniteError

ACCEL_GAIN = 0.1
POS_STEP = 0.05
VEL_LIMIT = 1.0


@dataclass(frozen=True)
class Wall:
    """Axis-aligned segment: coordinate ``axis`` is fixed at ``value`` over
    ``[lo, hi]`` along the other axis."""

    axis: int
    value: float
    lo: float
    hi: float


@dataclass(frozen=True)
class EnvSpec:
    env_id: str
    state_dim: int
    action_dim: int
    max_action: float
    horizon: int
    gamma: float
    goal: tuple[float, ...]
    action_penalty: float
    goal_radius: float = 0.0
    walls: tuple[Wall, ...] = ()
    bounds: tuple[float, float] = (-1.0, 1.0)
    start_low: tuple[float, ...] = ()
    start_high: tuple[float, ...] = ()
    controller_kp: float = 0.0
    controller_kd: float = 0.0


def make_env(env_id: str) -> EnvSpec:
    if env_id == "pointmass1d":
        return EnvSpec(
            env_id="pointmass1d",
            state_dim=2,
            action_dim=1,
            max_action=1.0,
            horizon=100,
            gamma=0.99,
            goal=(0.0,),
            action_penalty=0.01,
            start_low=(-1.0,),
            start_high=(1.0,),
            controller_kp=8.0,
            controller_kd=6.0,
        )
    if env_id == "mazelite2d":
        return EnvSpec(
            env_id="mazelite2d",
            state_dim=4,
            action_dim=2,
            max_action=1.0,
            horizon=150,
            gamma=0.99,
            goal=(-0.6, 0.8),
            action_penalty=0.0,
            goal_radius=0.1,
            walls=(Wall(axis=1, value=0.0, lo=-1.0, hi=0.4),),
            start_low=(-0.9, -0.9),
            start_high=(-0.4, -0.4),
            controller_kp=8.0,
            controller_kd=6.0,
        )
    raise ValueError(f"unknown environment {env_id!r}")


def env_reset(env: EnvSpec, rng: np.random.Generator) -> np.ndarray:
    """Sample a start state: position uniform in the start box, zero velocity."""
    pos_dim = len(env.start_low)
    pos = rng.uniform(env.start_low, env.start_high, pos_dim)
    return np.concatenate([pos, np.zeros(pos_dim)])


def _blocked(env: EnvSpec, pos: np.ndarray, axis: int, new_coord: float) -> bool:
    """Would moving ``pos[axis]`` to ``new_coord`` cross a wall?"""
    old = pos[axis]
    if new_coord == old:
        return False
    lo, hi = (old, new_coord) if old < new_coord else (new_coord, old)
    other = 1 - axis
    for wall in env.walls:
        if wall.axis != axis:
            continue
        if lo - 1e-12 <= wall.value <= hi + 1e-12 and wall.lo <= pos[other] <= wall.hi:
            return True
    return False


def env_step(env: EnvSpec, s: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, float, bool]:
    """Advance one step. Deterministic; actions are clamped before use."""
    s = np.asarray(s, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a))):
        raise NonFiniteError("non-finite state or action passed to env_step")
    a = np.clip(a, -env.max_action, env.max_action)
    pos_dim = len(env.goal)
    pos, vel = s[:pos_dim], s[pos_dim:]
    new_vel = np.clip(vel + ACCEL_GAIN * a, -VEL_LIMIT, VEL_LIMIT)

    if env.env_id == "pointmass1d":
        new_pos = pos + POS_STEP * new_vel
        dist_sq = float(np.sum((new_pos - env.goal) ** 2))
        r = -dist_sq - env.action_penalty * float(np.sum(a * a))
        return np.concatenate([new_pos, new_vel]), r, False

    # mazelite2d: resolve each axis separately; a blocked axis keeps its
    # pre-collision coordinate.
    new_pos = pos.copy()
    for axis in range(pos_dim):
        target = pos[axis] + POS_STEP * new_vel[axis]
        if not _blocked(env, new_pos, axis, target):
            new_pos[axis] = target
    new_pos = np.clip(new_pos, env.bounds[0], env.bounds[1])
    s2 = np.concatenate([new_pos, new_vel])
    if float(np.linalg.norm(new_pos - env.goal)) <= env.goal_radius:
        return s2, 0.0, True
    return s2, -1.0, False


@dataclass(frozen=True)
class BehaviorPolicySpec:
    """Data-collection policy: random, a tuned controller, a noisy controller,
    or a weighted mixture of other specs."""

    kind: str  # uniform_random | proportional_controller | noisy_controller | mixture
    sigma: float = 0.0
    components: tuple[tuple["BehaviorPolicySpec", float], ...] = ()
    kp: float | None = None
    kd: float | None = None

    def __post_init__(self):
        if self.kind not in ("uniform_random", "proportional_controller",
                             "noisy_controller", "mixture"):
            raise ValueError(f"unknown behavior policy kind {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.kind == "mixture":
            weights = [w for _, w in self.components]
            if not weights or any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-12:
                raise ValueError("mixture weights must be positive and sum to 1")


def _maze_target(env: EnvSpec, pos: np.ndarray) -> np.ndarray:
    """Waypoint routing around the single horizontal wall (stateless in pos)."""
    wall = env.walls[0]
    gap_x = 0.5 * (wall.hi + env.bounds[1])  # center of the opening
    if pos[1] <= wall.value:
        if pos[0] < wall.hi + 0.1:
            return np.array([gap_x, wall.value - 0.15])
        return np.array([gap_x, wall.value + 0.3])
    return np.asarray(env.goal, dtype=np.float64)


def controller_action(env: EnvSpec, s: np.ndarray, kp: float | None = None,
                      kd: float | None = None) -> np.ndarray:
    """PD control toward the goal (pointmass1d) or the next waypoint (mazelite2d)."""
    kp = env.controller_kp if kp is None else kp
    kd = env.controller_kd if kd is None else kd
    pos_dim = len(env.goal)
    pos, vel = s[:pos_dim], s[pos_dim:]
    target = np.asarray(env.goal) if env.env_id == "pointmass1d" else _maze_target(env, pos)
    a = kp * (target - pos) - kd * vel
    return np.clip(a, -env.max_action, env.max_action)


def behavior_action(policy: BehaviorPolicySpec, env: EnvSpec, s: np.ndarray,
                    rng: np.random.Generator) -> np.ndarray:
    """Draw one action; reproducible given the generator state."""
    if policy.kind == "uniform_random":
        return rng.uniform(-env.max_action, env.max_action, env.action_dim)
    if policy.kind == "proportional_controller":
        return controller_action(env, s, policy.kp, policy.kd)
    if policy.kind == "noisy_controller":
        a = controller_action(env, s, policy.kp, policy.kd)
        a = a + rng.normal(0.0, policy.sigma, env.action_dim)
        return np.clip(a, -env.max_action, env.max_action)
    # mixture
    weights = np.array([w for _, w in policy.components])
    idx = rng.choice(len(policy.components), p=weights)
    return behavior_action(policy.components[idx][0], env, s, rng)


def rollout_return(env: EnvSpec, policy: Callable[[np.ndarray], np.ndarray],
                   rng: np.random.Generator) -> float:
    """Undiscounted return of one episode under a deterministic policy map."""
    s = env_reset(env, rng)
    total = 0.0
    for _ in range(env.horizon):
        s, r, done = env_step(env, s, policy(s))
        total += r
        if done:
            break
    return total


@dataclass(frozen=True)
class ScoreScale:
    """Reference returns anchoring the 0-100 normalized score."""

    random_return: float
    expert_return: float

    def normalize(self, mean_return: float) -> float:
        return 100.0 * (mean_return - self.random_return) / (
            self.expert_return - self.random_return)


def compute_score_scale(env: EnvSpec, seed: int, episodes: int = 100) -> ScoreScale:
    """Mean return of the uniform-random policy (score 0) and the tuned
    controller (score 100) over ``episodes`` episodes each."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 900)))
    random_policy = BehaviorPolicySpec("uniform_random")
    rand_returns = [
        rollout_return(env, lambda s: behavior_action(random_policy, env, s, rng), rng)
        for _ in range(episodes)
    ]
    expert_returns = [
        rollout_return(env, lambda s: controller_action(env, s), rng)
        for _ in range(episodes)
    ]
    scale = ScoreScale(float(np.mean(rand_returns)), float(np.mean(expert_returns)))
    if scale.expert_return <= scale.random_return:
        raise ValueError(
            f"degenerate score scale: expert {scale.expert_return:.3f} <= "
            f"random {scale.random_return:.3f}")
    return scale
