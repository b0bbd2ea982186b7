"""Default (prior) policies that seed the planner's sampling.

Two priors are provided: :class:`UniformPrior`, which draws uniformly from
the ball of feasible velocities, and :class:`InformedPrior`, a proportional
goal-seeking policy plus Gaussian exploration noise. Both turn raw random
numbers into an action through a deterministic transform, so the compiled
planner kernel can be checked against them draw for draw.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .world import A_MAX, DT, Environment, RewardSpec, clamp_speed

logger = logging.getLogger(__name__)

UNIFORM = "uniform"
INFORMED = "informed"
PRIOR_KINDS = (UNIFORM, INFORMED)


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.5

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ValueError("noise sigma must be finite and >= 0")


@dataclass(frozen=True)
class InformedPolicyParams:
    """Proportional pull toward the goal.

    ``feature_weights`` holds optional refined weights on the state features;
    currently one feature, the unit vector toward the goal, so the pull is
    ``gain * (g - p) + w * (g - p) / |g - p|``.
    """

    gain: float = 1.0
    feature_weights: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if not (math.isfinite(self.gain) and self.gain > 0):
            raise ValueError("gain must be finite and positive")
        if self.feature_weights is not None:
            fw = tuple(float(w) for w in self.feature_weights)
            if len(fw) != 1 or not all(math.isfinite(w) for w in fw):
                raise ValueError("feature_weights must be a single finite weight")
            object.__setattr__(self, "feature_weights", fw)

    @property
    def unit_weight(self) -> float:
        return self.feature_weights[0] if self.feature_weights else 0.0


def ball_from_normal(z, u, a_max: float = A_MAX) -> np.ndarray:
    """Map a standard-normal direction and a U(0,1) radius draw into the a_max ball."""
    z = np.asarray(z, dtype=float)
    norm = np.linalg.norm(z, axis=-1, keepdims=True)
    rad = np.where(norm > 0, a_max * np.asarray(u, dtype=float)[..., None] ** (1.0 / 3.0)
                   / np.where(norm > 0, norm, 1.0), 0.0)
    return z * rad


def goal_pull(position, goal, params: InformedPolicyParams, a_max: float = A_MAX) -> np.ndarray:
    delta = np.asarray(goal, dtype=float) - np.asarray(position, dtype=float)
    pull = params.gain * delta
    w = params.unit_weight
    if w != 0.0:
        dist = np.linalg.norm(delta, axis=-1, keepdims=True)
        pull = pull + np.where(dist > 0, w * delta / np.where(dist > 0, dist, 1.0), 0.0)
    return clamp_speed(pull, a_max)


def uniform_sample(rng: np.random.Generator, a_max: float = A_MAX) -> np.ndarray:
    """One velocity drawn uniformly from the ball of radius ``a_max``."""
    z = rng.standard_normal(3)
    u = rng.random()
    return ball_from_normal(z, u, a_max)


def informed_sample(position, goal, params: InformedPolicyParams, noise: NoiseSpec,
                    rng: np.random.Generator, a_max: float = A_MAX) -> np.ndarray:
    """Clamped proportional pull toward ``goal`` plus N(0, sigma^2 I) noise.

    The noise is added after the pull is clamped, so the result itself may
    exceed ``a_max``; the dynamics clamp it when it is applied.
    """
    goal = np.asarray(goal, dtype=float)
    if not np.all(np.isfinite(goal)):
        raise ValueError("goal must be finite")
    z = rng.standard_normal(3)
    return goal_pull(position, goal, params, a_max) + noise.sigma * z


@dataclass(frozen=True)
class UniformPrior:
    a_max: float = A_MAX
    kind: str = field(default=UNIFORM, init=False)

    def sample_delta(self, position, goal, rng: np.random.Generator) -> np.ndarray:
        return uniform_sample(rng, self.a_max)

    def delta_from_raw(self, position, goal, z, u) -> np.ndarray:
        return ball_from_normal(z, u, self.a_max)


@dataclass(frozen=True)
class InformedPrior:
    params: InformedPolicyParams = field(default_factory=InformedPolicyParams)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    a_max: float = A_MAX
    kind: str = field(default=INFORMED, init=False)

    def sample_delta(self, position, goal, rng: np.random.Generator) -> np.ndarray:
        return informed_sample(position, goal, self.params, self.noise, rng, self.a_max)

    def delta_from_raw(self, position, goal, z, u=None) -> np.ndarray:
        return goal_pull(position, goal, self.params, self.a_max) + self.noise.sigma * np.asarray(z)


# --- refinement trainer -----------------------------------------------------

@dataclass(frozen=True)
class RefineConfig:
    iterations: int = 15
    population: int = 24
    elite_frac: float = 0.25
    train_pairs: int = 24
    held_out_pairs: int = 50
    steps: int = 80
    dt: float = DT
    a_max: float = A_MAX
    seed: int = 0
    init: InformedPolicyParams = field(default_factory=InformedPolicyParams)
    init_std: tuple[float, float] = (2.0, 0.5)
    gain_bounds: tuple[float, float] = (0.05, 20.0)
    unit_bounds: tuple[float, float] = (-1.0, 1.0)


@dataclass
class RefineResult:
    params: InformedPolicyParams
    improved: bool
    held_out_utility: float
    baseline_utility: float
    log: list[tuple[int, float, float]]

    @property
    def warning(self) -> bool:
        return not self.improved

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "mean_utility", "best_utility"])
            for row in self.log:
                writer.writerow([row[0], f"{row[1]:.6f}", f"{row[2]:.6f}"])


def _pairs(env: Environment, n: int, rng: np.random.Generator, margin: float = 1.0):
    lo = env.lo + margin
    hi = env.hi - margin
    starts = rng.uniform(lo, hi, size=(n, 3))
    goals = rng.uniform(lo, hi, size=(n, 3))
    return starts, goals


def policy_utility(params: InformedPolicyParams, starts, goals, *, steps: int, dt: float,
                   a_max: float, env: Environment, spec: RewardSpec = RewardSpec()) -> float:
    """Mean utility of noise-free closed-loop rollouts in an obstacle-free world."""
    pos = np.array(starts, dtype=float)
    goals = np.asarray(goals, dtype=float)
    total = np.zeros(len(pos))
    for _ in range(steps):
        total -= spec.w_goal * np.linalg.norm(pos - goals, axis=1)
        pos = np.clip(pos + clamp_speed(goal_pull(pos, goals, params, a_max), a_max) * dt,
                      env.lo, env.hi)
    total -= spec.w_goal * np.linalg.norm(pos - goals, axis=1)
    return float(total.mean())


def refine_informed_policy(env: Environment, config: RefineConfig = RefineConfig()) -> RefineResult:
    """Cross-entropy search over (gain, unit weight) of the informed prior.

    Trains on random start/goal pairs in an obstacle-free world and keeps the
    result only if it matches or beats ``config.init`` on held-out pairs.
    """
    if len(env.obstacles):
        raise ValueError("refinement runs in an obstacle-free environment (Env0)")
    rng = np.random.default_rng(config.seed)
    train = _pairs(env, config.train_pairs, rng)
    held = _pairs(env, config.held_out_pairs, rng)
    kw = dict(steps=config.steps, dt=config.dt, a_max=config.a_max, env=env)

    init = config.init
    baseline = policy_utility(init, *held, **kw)
    if config.iterations <= 0:
        return RefineResult(init, False, baseline, baseline, [])

    mu = np.array([init.gain, init.unit_weight])
    std = np.asarray(config.init_std, dtype=float)
    lo = np.array([config.gain_bounds[0], config.unit_bounds[0]])
    hi = np.array([config.gain_bounds[1], config.unit_bounds[1]])
    n_elite = max(1, int(round(config.elite_frac * config.population)))
    best_x, best_u = mu.copy(), policy_utility(init, *train, **kw)
    log = []
    for it in range(config.iterations):
        cand = np.clip(mu + std * rng.standard_normal((config.population, 2)), lo, hi)
        scores = np.array([
            policy_utility(InformedPolicyParams(c[0], (c[1],)), *train, **kw) for c in cand
        ])
        order = np.argsort(-scores, kind="stable")
        elite = cand[order[:n_elite]]
        mu = elite.mean(axis=0)
        std = elite.std(axis=0) + 1e-3
        if scores[order[0]] > best_u:
            best_u, best_x = float(scores[order[0]]), cand[order[0]].copy()
        log.append((it, float(scores.mean()), float(scores[order[0]])))

    refined = InformedPolicyParams(float(best_x[0]), (float(best_x[1]),))
    held_u = policy_utility(refined, *held, **kw)
    if held_u < baseline:
        logger.warning("refinement did not beat the initial params on held-out pairs")
        return RefineResult(init, False, baseline, baseline, log)
    return RefineResult(refined, True, held_u, baseline, log)


def make_prior(kind: str, params: InformedPolicyParams | None = None,
               noise: NoiseSpec | None = None, a_max: float = A_MAX):
    if kind == UNIFORM:
        return UniformPrior(a_max)
    if kind == INFORMED:
        return InformedPrior(params or InformedPolicyParams(), noise or NoiseSpec(), a_max)
    raise ValueError(f"unknown prior kind {kind!r}")


__all__ = [
    "NoiseSpec", "InformedPolicyParams", "UniformPrior", "InformedPrior", "RefineConfig",
    "RefineResult", "uniform_sample", "informed_sample", "ball_from_normal", "goal_pull",
    "refine_informed_policy", "policy_utility", "make_prior", "UNIFORM", "INFORMED",
    "PRIOR_KINDS",
]
