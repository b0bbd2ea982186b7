"""Exact checks of the weighted-mean update against closed-form answers.

The main oracle is a 1D toy with three actions {-1, 0, 1} and horizon 3, small
enough that the softmax over all 27 action sequences can be enumerated. The
importance-sampled mean from uniformly drawn sequences must match it.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .planner import PlannerConfig, batch_weights, ne_gap, update_mean
from .scenario import AgentSpec, Scenario
from .world import empty_env

DEFAULT_TOLERANCE = 2e-2
TOY_ACTIONS = (-1.0, 0.0, 1.0)
TOY_BETAS = (0.1, 1.0, 10.0)
# default toy is sharply peaked at beta >= 1; this one keeps every beta soft
SOFT_TOY_KW = dict(goal=3.0, weight=0.5)


@dataclass(frozen=True)
class ToyProblem:
    """Integrator ``x' = x + a * dt`` with reward ``-weight * (x - goal)^2`` on every state."""

    horizon: int = 3
    x0: float = 0.0
    dt: float = 1.0
    goal: float = 5.0
    weight: float = 5.0
    actions: tuple[float, ...] = TOY_ACTIONS

    def sequences(self) -> np.ndarray:
        return np.array(list(itertools.product(self.actions, repeat=self.horizon)))

    def utility(self, seqs) -> np.ndarray:
        """Sum of rewards over the H + 1 visited states, for ``(S, H)`` sequences."""
        seqs = np.asarray(seqs, dtype=float)
        x = self.x0 + np.concatenate([np.zeros((len(seqs), 1)),
                                      np.cumsum(seqs * self.dt, axis=1)], axis=1)
        return -self.weight * np.sum((x - self.goal) ** 2, axis=1)


def exact_softmax_mean(toy: ToyProblem, beta: float) -> np.ndarray:
    """Expected action sequence under ``p(seq) ∝ exp(beta * U(seq))`` by enumeration."""
    seqs = toy.sequences()
    u = toy.utility(seqs)
    w = np.exp(beta * (u - u.max()))
    return (w[:, None] * seqs).sum(axis=0) / w.sum()


def sampled_softmax_mean(toy: ToyProblem, beta: float, samples: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Importance-sampled estimate from ``samples`` uniformly drawn sequences."""
    idx = rng.integers(len(toy.actions), size=(samples, toy.horizon))
    seqs = np.asarray(toy.actions)[idx]
    mean, _ = update_mean(seqs, batch_weights(toy.utility(seqs), beta))
    return mean


def max_relative_error(estimate, exact) -> float:
    estimate = np.asarray(estimate, dtype=float)
    exact = np.asarray(exact, dtype=float)
    return float(np.max(np.abs(estimate - exact) / np.abs(exact)))


@dataclass
class OracleCheck:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""


@dataclass
class OracleReport:
    tolerance: float
    checks: list[OracleCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list[str]:
        out = [f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.value:.3e} "
               f"(threshold {c.threshold:.3e}) {c.detail}".rstrip() for c in self.checks]
        out.append(f"tolerance {self.tolerance:g}: {'all passed' if self.passed else 'FAILED'}")
        return out

    def to_json(self) -> str:
        return json.dumps({"tolerance": self.tolerance, "passed": self.passed,
                           "checks": [asdict(c) for c in self.checks]}, indent=2)


def check_enumeration(tolerance: float, samples: int = 10_000, seed: int = 0,
                      toy: ToyProblem = ToyProblem(), betas=TOY_BETAS,
                      label: str = "softmax_equivalence") -> list[OracleCheck]:
    checks = []
    for i, beta in enumerate(betas):
        exact = exact_softmax_mean(toy, beta)
        est = sampled_softmax_mean(toy, beta, samples, np.random.default_rng([seed, i]))
        err = max_relative_error(est, exact)
        checks.append(OracleCheck(f"{label} beta={beta:g}", err, tolerance,
                                  err <= tolerance, f"D={samples}"))
    return checks


def check_beta_limits(seed: int = 0) -> list[OracleCheck]:
    rng = np.random.default_rng(seed)
    samples = rng.normal(size=(200, 5, 3))
    u = rng.normal(scale=10.0, size=200)
    mean, _ = update_mean(samples, batch_weights(u, 1e-12))
    err_low = float(np.max(np.abs(mean - samples.mean(axis=0))))
    # a clear unique maximizer: the runner-up trails by at least 0.5
    u_gap = np.sort(u)[::-1]
    u[np.argmax(u)] = u_gap[1] + max(0.5, u_gap[0] - u_gap[1])
    mean, _ = update_mean(samples, batch_weights(u, 1e3))
    err_high = float(np.max(np.abs(mean - samples[np.argmax(u)])))
    return [OracleCheck("beta_to_zero_gives_sample_mean", err_low, 1e-9, err_low <= 1e-9),
            OracleCheck("beta_to_inf_gives_argmax", err_high, 1e-6, err_high <= 1e-6)]


def check_shift_invariance(seed: int = 0, shift: float = 1e6) -> list[OracleCheck]:
    rng = np.random.default_rng(seed)
    samples = rng.normal(size=(500, 4, 3))
    # multiples of 2**-16 in [-1000, 0]: u + shift is exact in float64
    u = -rng.integers(0, 1000 * 2**16, size=500) / 2.0**16
    base, _ = update_mean(samples, batch_weights(u, 0.1))
    shifted, _ = update_mean(samples, batch_weights(u + shift, 0.1))
    diff = float(np.max(np.abs(base - shifted)))
    return [OracleCheck("shift_invariance", diff, 0.0, diff == 0.0, f"c={shift:g}")]


def check_equilibrium_gap(probes: int = 256, seed: int = 0) -> list[OracleCheck]:
    """An empty world's straight full-speed plan admits no improving deviation."""
    horizon = 20
    cfg = PlannerConfig(samples=10, horizon=horizon, ne_probes=probes)
    scen = Scenario((AgentSpec((2.0, 5.0, 5.0), (8.0, 5.0, 5.0), 0.03, "uniform"),),
                    empty_env(), planner=cfg)
    straight = np.zeros((1, horizon, 3))
    straight[0, :, 0] = 1.0
    gap_opt = ne_gap(straight, scen, cfg, probes, (seed,))
    gap_idle = ne_gap(np.zeros_like(straight), scen, cfg, probes, (seed,))
    return [OracleCheck("ne_gap_at_optimum", gap_opt, 1e-12, gap_opt <= 1e-12),
            OracleCheck("ne_gap_away_from_optimum", gap_idle, 0.0, gap_idle > 0.0,
                        "must be positive")]


def run_oracle_suite(tolerance: float = DEFAULT_TOLERANCE, seed: int = 0) -> OracleReport:
    if not (math.isfinite(tolerance) and tolerance > 0):
        raise ValueError("tolerance must be positive")
    report = OracleReport(tolerance)
    report.checks += check_enumeration(tolerance, seed=seed)
    report.checks += check_enumeration(tolerance, 1_000_000, seed, ToyProblem(**SOFT_TOY_KW),
                                       label="softmax_equivalence_soft")
    report.checks += check_beta_limits(seed)
    report.checks += check_shift_invariance(seed)
    report.checks += check_equilibrium_gap(seed=seed)
    return report


__all__ = [
    "ToyProblem", "exact_softmax_mean", "sampled_softmax_mean", "max_relative_error",
    "OracleCheck", "OracleReport", "run_oracle_suite", "DEFAULT_TOLERANCE",
]
