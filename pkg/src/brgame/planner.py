"""Bounded-rational iterative best response over sampled action sequences.

Each agent's plan is the mean of a softmax-over-utility distribution around
its current mean. The mean is estimated by weighting prior-perturbed rollouts
with ``exp(beta * U)``. Agents take turns re-estimating their mean against
the others' frozen plans.

Randomness is keyed, never shared: every best-response step draws its whole
``(D, H, 3)`` block of raw numbers from a generator seeded by
``(master_seed, timestep, iteration, agent, update)`` before any rollout runs.
Row ``d`` of that block is sample ``d``'s stream. The batch can therefore be
split across any number of workers without changing a single bit.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .policy import INFORMED, UNIFORM, NoiseSpec
from .world import clamp_speed, reward

GAUSS_SEIDEL = "gauss-seidel"
JACOBI = "jacobi"


@dataclass(frozen=True)
class PlannerConfig:
    samples: int = 10
    n_ibr: int = 5
    n_up: int = 3
    horizon: int = 20
    dt: float = 0.1
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    update_order: str = GAUSS_SEIDEL
    early_stop_tol: Optional[float] = None
    ne_probes: int = 64

    def __post_init__(self):
        for name in ("samples", "n_ibr", "n_up", "horizon", "ne_probes"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                raise ValueError(f"{name} must be an integer >= 1, got {value!r}")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValueError("dt must be positive")
        if self.update_order not in (GAUSS_SEIDEL, JACOBI):
            raise ValueError(f"update_order must be {GAUSS_SEIDEL!r} or {JACOBI!r}")
        if self.early_stop_tol is not None and not self.early_stop_tol > 0:
            raise ValueError("early_stop_tol must be positive when set")


@dataclass
class BestResponse:
    mean: np.ndarray
    samples: np.ndarray
    utilities: np.ndarray
    weights: np.ndarray
    ess: float
    degenerate: bool


@dataclass
class PlanResult:
    means: np.ndarray            # (N, H, 3)
    trajectories: np.ndarray     # (N, H + 1, 3)
    utilities: np.ndarray        # (N,)
    ne_gap: float
    iterations: int
    ess: list[float]
    degenerate: bool = False


@dataclass
class Execution:
    positions: np.ndarray        # (T + 1, N, 3)
    actions: np.ndarray          # (T + 1, N, 3); last row is zero
    rewards: np.ndarray          # (T + 1, N)
    degenerate: bool = False
    ne_gaps: list[float] = field(default_factory=list)

    @property
    def utilities(self) -> np.ndarray:
        return self.rewards.sum(axis=0)

    def min_separation(self) -> float:
        pos = self.positions
        n = pos.shape[1]
        if n < 2:
            return math.inf
        diff = pos[:, :, None, :] - pos[:, None, :, :]
        dist = np.linalg.norm(diff, axis=-1)
        iu = np.triu_indices(n, 1)
        return float(dist[:, iu[0], iu[1]].min())


# --- weights and mean update --------------------------------------------------

def sample_weight(utility, beta: float, log_shift: float):
    """``exp(beta * U - log_shift)``; with the batch max as shift this lies in (0, 1]."""
    return np.exp(beta * np.asarray(utility, dtype=float) - log_shift)


def batch_weights(utilities, beta: float) -> np.ndarray:
    """Shift-stabilized weights for a batch of utilities.

    The shift is applied to the utilities before scaling, so adding an exactly
    representable constant to every utility leaves the weights bit-identical.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    u = np.asarray(utilities, dtype=float)
    return np.exp(beta * (u - u.max()))


def update_mean(samples, weights) -> tuple[np.ndarray, bool]:
    """Weighted average of action sequences.

    Returns ``(mean, degenerate)``. If every weight underflowed to zero the
    plain average is returned and ``degenerate`` is True.
    """
    samples = np.asarray(samples, dtype=float)
    w = np.asarray(weights, dtype=float)
    if samples.ndim < 1 or len(samples) == 0 or len(w) != len(samples):
        raise ValueError("need one weight per sample and at least one sample")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    total = w.sum()
    if total <= 0:
        return samples.mean(axis=0), True
    p = w / total
    return np.tensordot(p, samples, axes=(0, 0)), False


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    s2 = float(np.sum(w * w))
    return float(w.sum() ** 2 / s2) if s2 > 0 else 0.0


# --- rollouts ---------------------------------------------------------------

def mean_trajectories(joint_state, means, env, dt: float, a_max: float, a_min: float = 0.0):
    """Open-loop trajectories of every agent's mean plan, ``(H + 1, N, 3)``."""
    joint_state = np.asarray(joint_state, dtype=float)
    means = np.asarray(means, dtype=float)
    n, h, _ = means.shape
    out = np.empty((h + 1, n, 3))
    out[0] = joint_state
    norm = np.linalg.norm(means, axis=-1, keepdims=True)
    scale = np.ones_like(norm)
    over = norm > a_max
    scale[over] = a_max / norm[over]
    if a_min > 0:
        under = (norm < a_min) & (norm > 0)
        scale[under] = a_min / norm[under]
    vel = means * scale
    for k in range(h):
        out[k + 1] = np.clip(out[k] + vel[:, k] * dt, env.lo, env.hi)
    return out


def _nearby_obstacles(env, start, horizon: int, dt: float, a_max: float, r_agent: float):
    obs = env.obstacles
    if len(obs) == 0:
        return np.zeros((0, 4))
    reach = horizon * a_max * dt + r_agent + 1e-9
    gap = np.linalg.norm(obs[:, :3] - start, axis=1) - obs[:, 3]
    return np.ascontiguousarray(obs[gap < reach])


@lru_cache(maxsize=8)
def _executor(workers: int) -> ThreadPoolExecutor:
    return ThreadPoolExecutor(max_workers=workers)


def _chunks(n: int, workers: int):
    bounds = np.linspace(0, n, min(workers, n) + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _agent_prior(agent):
    if agent.prior == INFORMED:
        return _kernels.INFORMED, agent.prior_params.gain, agent.prior_params.unit_weight
    return _kernels.UNIFORM, 1.0, 0.0


def _draw(key: Sequence[int], count: int, horizon: int, need_uniform: bool):
    rng = np.random.default_rng([int(k) for k in key])
    z = rng.standard_normal((count, horizon, 3))
    u = rng.random((count, horizon)) if need_uniform else np.zeros((1, 1))
    return z, u


def _sample(agent_index, mean, joint_state, others, scenario, config, key, count, workers):
    agent = scenario.agents[agent_index]
    spec = scenario.reward
    start = np.ascontiguousarray(joint_state[agent_index], dtype=float)
    goal = np.asarray(agent.goal, dtype=float)
    h = config.horizon
    kind, gain, unit_w = _agent_prior(agent)
    sigma = config.noise.sigma if kind == _kernels.INFORMED else 0.0
    obstacles = _nearby_obstacles(scenario.env, start, h, config.dt, scenario.a_max, spec.r_agent)
    z, u = _draw(key, count, h, kind == _kernels.UNIFORM)
    samples = np.empty((count, h, 3))
    utilities = np.empty(count)
    mean = np.ascontiguousarray(mean, dtype=float)
    args = (start, mean, goal, others, obstacles, scenario.env.lo, scenario.env.hi,
            kind, gain, unit_w, sigma, scenario.a_min, scenario.a_max, config.dt,
            spec.w_goal, spec.w_col, spec.r_agent, spec.r_safe, z, u)
    chunks = _chunks(count, max(1, int(workers)))
    if len(chunks) == 1:
        _kernels.sample_rollouts(*args, 0, count, samples, utilities)
    else:
        futures = [_executor(int(workers)).submit(_kernels.sample_rollouts, *args, a, b,
                                                  samples, utilities) for a, b in chunks]
        for f in futures:
            f.result()
    return samples, utilities


def _others(agent_index, traj):
    return np.ascontiguousarray(np.delete(traj, agent_index, axis=1))


def best_response_step(agent_index: int, means, scenario, config: PlannerConfig, key: Sequence[int],
                       *, joint_state=None, workers: int = 1) -> BestResponse:
    """One importance-sampled update of ``agent_index``'s mean plan.

    Other agents are rolled out once from their current means and held fixed
    while D perturbed sequences of this agent are simulated closed-loop.
    """
    means = np.asarray(means, dtype=float)
    if means.shape[0] != len(scenario.agents):
        raise ValueError("need one mean sequence per agent")
    if joint_state is None:
        joint_state = scenario.starts
    joint_state = np.asarray(joint_state, dtype=float)
    traj = mean_trajectories(joint_state, means, scenario.env, config.dt, scenario.a_max,
                             scenario.a_min)
    others = _others(agent_index, traj)
    samples, utilities = _sample(agent_index, means[agent_index], joint_state, others,
                                 scenario, config, key, config.samples, workers)
    weights = batch_weights(utilities, scenario.agents[agent_index].beta)
    mean, degenerate = update_mean(samples, weights)
    # the weighted mean of raw samples can leave the speed ball; project it back
    mean = clamp_speed(mean, scenario.a_max)
    return BestResponse(mean, samples, utilities, weights, effective_sample_size(weights),
                        degenerate)


def agent_utilities(joint_state, means, scenario, config: PlannerConfig) -> np.ndarray:
    traj = mean_trajectories(joint_state, means, scenario.env, config.dt, scenario.a_max,
                             scenario.a_min)
    goals = scenario.goals
    zero = np.zeros_like(joint_state)
    return np.array([
        sum(reward(s, zero, goals, scenario.env, scenario.reward, i) for s in traj)
        for i in range(len(scenario.agents))
    ])


def _sequence_utilities(agent_index, seqs, joint_state, others, scenario, config):
    spec = scenario.reward
    agent = scenario.agents[agent_index]
    start = np.ascontiguousarray(joint_state[agent_index], dtype=float)
    obstacles = _nearby_obstacles(scenario.env, start, config.horizon, config.dt,
                                  scenario.a_max, spec.r_agent)
    out = np.empty(len(seqs))
    _kernels.sequence_utilities(start, np.ascontiguousarray(seqs, dtype=float),
                                np.asarray(agent.goal, dtype=float), others, obstacles,
                                scenario.env.lo, scenario.env.hi, scenario.a_min, scenario.a_max,
                                config.dt, spec.w_goal, spec.w_col, spec.r_agent, spec.r_safe, out)
    return out


def unilateral_gap(agent_index: int, means, probes, scenario, config: PlannerConfig,
                   joint_state=None) -> float:
    """Best utility gain of ``agent_index`` over explicit probe sequences, others fixed."""
    means = np.asarray(means, dtype=float)
    joint_state = scenario.starts if joint_state is None else np.asarray(joint_state, dtype=float)
    traj = mean_trajectories(joint_state, means, scenario.env, config.dt, scenario.a_max,
                             scenario.a_min)
    others = _others(agent_index, traj)
    base = _sequence_utilities(agent_index, means[agent_index][None], joint_state, others,
                               scenario, config)[0]
    probe_u = _sequence_utilities(agent_index, np.asarray(probes, dtype=float), joint_state,
                                  others, scenario, config)
    return max(0.0, float(probe_u.max() - base))


def ne_gap(means, scenario, config: PlannerConfig, probe_budget: int, key: Sequence[int],
           joint_state=None, workers: int = 1) -> float:
    """Largest sampled unilateral improvement over all agents (0 if none found)."""
    if probe_budget < 1:
        raise ValueError("probe_budget must be >= 1")
    means = np.asarray(means, dtype=float)
    joint_state = scenario.starts if joint_state is None else np.asarray(joint_state, dtype=float)
    traj = mean_trajectories(joint_state, means, scenario.env, config.dt, scenario.a_max,
                             scenario.a_min)
    gap = 0.0
    for i in range(len(scenario.agents)):
        others = _others(i, traj)
        _, probe_u = _sample(i, means[i], joint_state, others, scenario, config,
                             (*key, i), probe_budget, workers)
        base = _sequence_utilities(i, means[i][None], joint_state, others, scenario, config)[0]
        gap = max(gap, float(probe_u.max() - base))
    return gap


def plan(scenario, config: PlannerConfig | None = None, master_seed: int = 0, *,
         joint_state=None, init_means=None, timestep: int = 0, workers: int = 1,
         compute_gap: bool = True) -> PlanResult:
    """Iterated best response: N_IBR rounds, each agent doing N_UP updates per round.

    Means start at zero unless ``init_means`` is given (warm start).
    """
    config = config or scenario.planner
    n = len(scenario.agents)
    h = config.horizon
    joint_state = scenario.starts if joint_state is None else np.asarray(joint_state, dtype=float)
    if init_means is None:
        means = np.zeros((n, h, 3))
    else:
        means = np.array(init_means, dtype=float)
        if means.shape != (n, h, 3):
            raise ValueError(f"init_means must have shape {(n, h, 3)}")

    ess: list[float] = []
    degenerate = False
    iterations = 0
    for it in range(1, config.n_ibr + 1):
        before = means.copy()
        for i in range(n):
            for up in range(config.n_up):
                view = before.copy() if config.update_order == JACOBI else means
                if config.update_order == JACOBI:
                    view[i] = means[i]
                br = best_response_step(i, view, scenario, config,
                                        (master_seed, timestep, it, i, up),
                                        joint_state=joint_state, workers=workers)
                means[i] = br.mean
                ess.append(br.ess)
                degenerate |= br.degenerate
        iterations = it
        if config.early_stop_tol is not None:
            if np.max(np.abs(means - before)) < config.early_stop_tol:
                break

    traj = mean_trajectories(joint_state, means, scenario.env, config.dt, scenario.a_max,
                             scenario.a_min)
    utilities = agent_utilities(joint_state, means, scenario, config)
    gap = 0.0
    if compute_gap:
        gap = ne_gap(means, scenario, config, config.ne_probes,
                     (master_seed, timestep, config.n_ibr + 1), joint_state, workers)
    return PlanResult(means, np.swapaxes(traj, 0, 1).copy(), utilities, gap, iterations, ess,
                      degenerate)


def shift_means(means) -> np.ndarray:
    """Drop the executed first action and repeat the last one."""
    means = np.asarray(means, dtype=float)
    out = np.empty_like(means)
    out[:, :-1] = means[:, 1:]
    out[:, -1] = means[:, -1]
    return out


def receding_horizon_execute(scenario, config: PlannerConfig | None = None, steps: int | None = None,
                             master_seed: int = 0, *, workers: int = 1,
                             track_gap: bool = False) -> Execution:
    """Plan, apply each agent's first mean action, shift the plan, repeat."""
    config = config or scenario.planner
    steps = scenario.steps if steps is None else steps
    if steps < 1:
        raise ValueError("steps must be >= 1")
    n = len(scenario.agents)
    env = scenario.env
    goals = scenario.goals
    positions = np.empty((steps + 1, n, 3))
    actions = np.zeros((steps + 1, n, 3))
    rewards = np.empty((steps + 1, n))
    positions[0] = scenario.starts
    means = None
    degenerate = False
    gaps = []
    for t in range(steps):
        result = plan(scenario, config, master_seed, joint_state=positions[t], init_means=means,
                      timestep=t, workers=workers, compute_gap=track_gap)
        degenerate |= result.degenerate
        if track_gap:
            gaps.append(result.ne_gap)
        first = result.means[:, 0]
        actions[t] = first
        nxt = mean_trajectories(positions[t], first[:, None], env, config.dt, scenario.a_max,
                                scenario.a_min)[1]
        positions[t + 1] = nxt
        for i in range(n):
            rewards[t, i] = reward(positions[t], actions[t], goals, env, scenario.reward, i)
        means = shift_means(result.means)
    for i in range(n):
        rewards[steps, i] = reward(positions[steps], actions[steps], goals, env, scenario.reward, i)
    return Execution(positions, actions, rewards, degenerate, gaps)


# --- output -------------------------------------------------------------------

TRAJECTORY_COLUMNS = ("t", "agent", "x", "y", "z", "ax", "ay", "az", "reward")


def write_trajectory_csv(path, execution: Execution) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAJECTORY_COLUMNS)
        steps, n = execution.rewards.shape
        for t in range(steps):
            for i in range(n):
                p = execution.positions[t, i]
                a = execution.actions[t, i]
                writer.writerow([t, i, *(repr(float(v)) for v in p), *(repr(float(v)) for v in a),
                                 repr(float(execution.rewards[t, i]))])


def write_summary(path, execution: Execution, extra: dict | None = None) -> None:
    summary = {
        "utilities": [float(u) for u in execution.utilities],
        "ne_gap_final": float(execution.ne_gaps[-1]) if execution.ne_gaps else None,
        "ne_gap_max": float(max(execution.ne_gaps)) if execution.ne_gaps else None,
        "min_separation": (None if math.isinf(execution.min_separation())
                           else execution.min_separation()),
        "degenerate": bool(execution.degenerate),
    }
    if extra:
        summary.update(extra)
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


__all__ = [
    "PlannerConfig", "PlanResult", "BestResponse", "Execution", "sample_weight",
    "batch_weights", "update_mean", "effective_sample_size", "best_response_step", "plan",
    "ne_gap", "unilateral_gap", "receding_horizon_execute", "shift_means",
    "mean_trajectories", "agent_utilities", "write_trajectory_csv", "write_summary",
    "UNIFORM", "INFORMED",
]
