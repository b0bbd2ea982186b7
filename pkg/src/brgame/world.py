"""Single-integrator dynamics, sphere obstacle fields and per-step rewards.

Positions and velocity commands are plain ``(3,)`` float arrays; a joint
state is ``(N, 3)`` and an action sequence ``(H, 3)``. Everything here is a
pure function of its inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

LEVELS = ("Env0", "Env1", "Env2", "Env3")
# fraction of the workspace volume covered by obstacles
LEVEL_OCCUPANCY = {"Env0": 0.0, "Env1": 0.05, "Env2": 0.12, "Env3": 0.22}

A_MAX = 1.0
DT = 0.1


class InvalidInputError(ValueError):
    """Raised for non-finite or malformed world inputs."""


class EnvironmentGenerationError(RuntimeError):
    """Raised when obstacle placement runs out of retries."""


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float


@dataclass(frozen=True, eq=False)
class Environment:
    """Axis-aligned workspace holding non-overlapping sphere obstacles.

    ``obstacles`` is an ``(M, 4)`` array of ``[cx, cy, cz, radius]`` rows.
    ``density`` is the target occupancy the layout was generated for; the
    achieved value is :func:`occupancy`.
    """

    level: str
    obstacles: np.ndarray
    lo: np.ndarray = field(default_factory=lambda: np.zeros(3))
    hi: np.ndarray = field(default_factory=lambda: np.full(3, 10.0))
    density: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        obs = np.asarray(self.obstacles, dtype=float).reshape(-1, 4)
        lo = np.asarray(self.lo, dtype=float).reshape(3)
        hi = np.asarray(self.hi, dtype=float).reshape(3)
        if not (np.all(np.isfinite(obs)) and np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise InvalidInputError("environment contains non-finite values")
        if np.any(hi <= lo):
            raise InvalidInputError("bounds must satisfy lo < hi on every axis")
        if np.any(obs[:, 3] <= 0):
            raise InvalidInputError("obstacle radii must be positive")
        for arr in (obs, lo, hi):
            arr.setflags(write=False)
        object.__setattr__(self, "obstacles", obs)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def spheres(self) -> list[Sphere]:
        return [Sphere(tuple(map(float, row[:3])), float(row[3])) for row in self.obstacles]

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def __eq__(self, other):
        if not isinstance(other, Environment):
            return NotImplemented
        return (
            self.level == other.level
            and self.density == other.density
            and np.array_equal(self.obstacles, other.obstacles)
            and np.array_equal(self.lo, other.lo)
            and np.array_equal(self.hi, other.hi)
        )

    __hash__ = None


@dataclass(frozen=True)
class RewardSpec:
    w_goal: float = 1.0
    w_col: float = 100.0
    r_agent: float = 0.15
    r_safe: float = 0.4

    def __post_init__(self):
        vals = (self.w_goal, self.w_col, self.r_agent, self.r_safe)
        if not all(np.isfinite(v) and v >= 0 for v in vals):
            raise InvalidInputError("reward weights and radii must be finite and non-negative")
        if self.r_safe < 2 * self.r_agent:
            raise InvalidInputError("r_safe must be at least 2 * r_agent")


def _vec(x, name: str = "vector") -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(v)):
        raise InvalidInputError(f"{name} must be finite")
    return v


def clamp_speed(velocity, a_max: float = A_MAX, a_min: float = 0.0) -> np.ndarray:
    """Rescale a velocity (or a stack of them) so its norm lies in [a_min, a_max].

    Direction is preserved. A zero vector stays zero even when ``a_min > 0``.
    """
    v = _vec(velocity, "action")
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    scale = np.ones_like(norm)
    over = norm > a_max
    scale[over] = a_max / norm[over]
    if a_min > 0:
        under = (norm < a_min) & (norm > 0)
        scale[under] = a_min / norm[under]
    return v * scale


def step(position, action, dt: float = DT, *, a_max: float = A_MAX, a_min: float = 0.0,
         env: Environment | None = None) -> np.ndarray:
    """Advance one single-integrator step, clamping speed and then bounds."""
    if not dt > 0:
        raise InvalidInputError("dt must be positive")
    p = _vec(position, "state")
    nxt = p + clamp_speed(action, a_max, a_min) * dt
    if env is not None:
        nxt = np.clip(nxt, env.lo, env.hi)
    return nxt


def rollout(initial, actions, dt: float = DT, *, a_max: float = A_MAX, a_min: float = 0.0,
            env: Environment | None = None) -> np.ndarray:
    """Roll an open-loop action sequence forward; returns ``(H + 1, 3)`` states."""
    actions = np.asarray(actions, dtype=float).reshape(-1, 3)
    traj = np.empty((len(actions) + 1, 3))
    traj[0] = _vec(initial, "state")
    for k, a in enumerate(actions):
        traj[k + 1] = step(traj[k], a, dt, a_max=a_max, a_min=a_min, env=env)
    return traj


def in_collision(joint, env: Environment, spec: RewardSpec, agent: int) -> bool:
    joint = np.asarray(joint, dtype=float).reshape(-1, 3)
    p = joint[agent]
    if len(env.obstacles):
        surface = np.linalg.norm(env.obstacles[:, :3] - p, axis=1) - env.obstacles[:, 3]
        if np.any(surface < spec.r_agent):
            return True
    others = np.delete(joint, agent, axis=0)
    if len(others):
        if np.any(np.linalg.norm(others - p, axis=1) < spec.r_safe):
            return True
    return False


def reward(joint, joint_action, goals, env: Environment, spec: RewardSpec, agent: int) -> float:
    """Per-step reward of one agent: goal-distance penalty plus collision penalty.

    ``joint_action`` is accepted for signature fidelity with R(s, a); the
    reward itself depends only on positions.
    """
    joint = _vec(joint, "joint state").reshape(-1, 3)
    goals = _vec(goals, "goals").reshape(-1, 3)
    if not 0 <= agent < len(joint):
        raise InvalidInputError(f"agent index {agent} out of range")
    r = -spec.w_goal * float(np.linalg.norm(joint[agent] - goals[agent]))
    if in_collision(joint, env, spec, agent):
        r -= spec.w_col
    return r


def joint_rollout(joint_initial, joint_actions, dt: float = DT, *, a_max: float = A_MAX,
                  a_min: float = 0.0, env: Environment | None = None) -> np.ndarray:
    """Roll every agent forward; returns ``(H + 1, N, 3)``."""
    joint_initial = np.asarray(joint_initial, dtype=float).reshape(-1, 3)
    joint_actions = np.asarray(joint_actions, dtype=float)
    trajs = [rollout(joint_initial[i], joint_actions[i], dt, a_max=a_max, a_min=a_min, env=env)
             for i in range(len(joint_initial))]
    return np.stack(trajs, axis=1)


def utility(joint_initial, joint_actions, goals, env: Environment, spec: RewardSpec,
            dt: float, agent: int, *, a_max: float = A_MAX, a_min: float = 0.0) -> float:
    """Sum of ``agent``'s rewards over the H + 1 jointly rolled states."""
    lengths = {len(seq) for seq in joint_actions}
    if len(lengths) != 1:
        raise InvalidInputError("all action sequences must share the horizon H")
    traj = joint_rollout(joint_initial, joint_actions, dt, a_max=a_max, a_min=a_min, env=env)
    zero = np.zeros_like(traj[0])
    return float(sum(reward(s, zero, goals, env, spec, agent) for s in traj))


def empty_env(lo=(0.0, 0.0, 0.0), hi=(10.0, 10.0, 10.0)) -> Environment:
    return Environment("Env0", np.zeros((0, 4)), np.asarray(lo, float), np.asarray(hi, float))


def make_env(level: str, seed: int, *, keep_out: Iterable[Sequence[float]] = (),
             clearance: float = 0.6, lo=(0.0, 0.0, 0.0), hi=(10.0, 10.0, 10.0),
             radius_range: tuple[float, float] = (0.6, 1.2), min_gap: float = 0.1,
             max_attempts: int = 50_000) -> Environment:
    """Place non-overlapping spheres until the level's occupancy is reached.

    Candidates closer than ``min_gap`` to another sphere's surface, or whose
    surface comes within ``clearance`` of a ``keep_out`` point (starts and
    goals), are rejected and resampled.
    """
    if level not in LEVELS:
        raise InvalidInputError(f"unknown level {level!r}; expected one of {LEVELS}")
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    target = LEVEL_OCCUPANCY[level]
    if target == 0.0:
        return Environment(level, np.zeros((0, 4)), lo, hi, 0.0, seed)

    rng = np.random.default_rng([int(seed), LEVELS.index(level)])
    keep = np.asarray(list(keep_out), dtype=float).reshape(-1, 3)
    goal_volume = target * float(np.prod(hi - lo))
    placed: list[np.ndarray] = []
    volume = 0.0
    attempts = 0
    while volume < goal_volume:
        attempts += 1
        if attempts > max_attempts:
            raise EnvironmentGenerationError(
                f"could not reach occupancy {target} for {level} (seed {seed}) "
                f"after {max_attempts} attempts"
            )
        r = rng.uniform(*radius_range)
        c = rng.uniform(lo + r, hi - r)
        if len(keep) and np.any(np.linalg.norm(keep - c, axis=1) < r + clearance):
            continue
        if placed:
            arr = np.asarray(placed)
            gaps = np.linalg.norm(arr[:, :3] - c, axis=1) - arr[:, 3] - r
            if np.any(gaps < min_gap):
                continue
        placed.append(np.array([*c, r]))
        volume += 4.0 / 3.0 * np.pi * r**3
    return Environment(level, np.asarray(placed), lo, hi, target, seed)


def occupancy(env: Environment) -> float:
    """Exact covered fraction; spheres never overlap and stay inside bounds."""
    return float(np.sum(4.0 / 3.0 * np.pi * env.obstacles[:, 3] ** 3) / env.volume)


def estimate_occupancy(env: Environment, n: int = 100_000, seed: int = 0) -> float:
    """Monte-Carlo volume fraction covered by obstacles."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(env.lo, env.hi, size=(n, 3))
    inside = np.zeros(n, dtype=bool)
    for cx, cy, cz, r in env.obstacles:
        inside |= np.sum((pts - (cx, cy, cz)) ** 2, axis=1) < r * r
    return float(inside.mean())
