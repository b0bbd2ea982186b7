"""Benchmark harness: normalized scores, baselines, sweeps and the replacement study.

A run is scored per agent against two references computed on the same
scenario and seed: an expert (informed prior, 5000 samples) and a random
walk (uniform actions each step, averaged over 10 rollouts). The group
score is the plain mean of the agents' scores.
"""
from __future__ import annotations

import csv
import itertools
import logging
import math
import threading
import time
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from .planner import PlannerConfig, receding_horizon_execute
from .policy import INFORMED, PRIOR_KINDS, UNIFORM, uniform_sample
from .scenario import AgentSpec, Scenario
from .world import LEVELS, Environment, RewardSpec, reward

logger = logging.getLogger(__name__)

EXPERT_SAMPLES = 5000
RANDOM_ROLLOUTS = 10
# keeps random-baseline streams apart from planner streams seeded with the same value
_RANDOM_TAG = 7_919


class DegenerateBaselineError(RuntimeError):
    """The expert did not beat the random baseline, so scores are undefined."""


def normalized_score(j_pi: float, j_rand: float, j_star: float) -> float:
    """``(J_pi - J_rand) / (J_star - J_rand)``, unclamped."""
    if not j_star > j_rand:
        raise DegenerateBaselineError(
            f"expert utility {j_star:.6g} does not exceed random utility {j_rand:.6g}; "
            "raise the expert sample budget"
        )
    return (j_pi - j_rand) / (j_star - j_rand)


# --- baselines ---------------------------------------------------------------

def expert_scenario(scenario: Scenario, samples: int = EXPERT_SAMPLES) -> Scenario:
    """The scenario every expert run uses: all agents informed, ``samples`` each."""
    return scenario.with_priors([INFORMED] * len(scenario.agents)).with_samples(samples)


class BaselineCache:
    """Thread-safe memo of baseline utilities keyed by (kind, content hash, seed).

    ``misses`` counts how many values were actually computed.
    """

    def __init__(self):
        self._values: dict[tuple, np.ndarray] = {}
        self._lock = threading.Lock()
        self.misses = 0

    def __len__(self):
        return len(self._values)

    def __contains__(self, key):
        return key in self._values

    def get(self, key, compute: Callable[[], np.ndarray]) -> np.ndarray:
        with self._lock:
            if key in self._values:
                return self._values[key].copy()
        value = np.asarray(compute(), dtype=float)
        value.setflags(write=False)
        with self._lock:
            # insert-if-absent: a concurrent computation of the same key is identical
            if key not in self._values:
                self._values[key] = value
                self.misses += 1
            return self._values[key].copy()

    def items(self):
        with self._lock:
            return list(self._values.items())


_DEFAULT_CACHE = BaselineCache()


def expert_baseline(scenario: Scenario, seed: int, *, samples: int = EXPERT_SAMPLES,
                    workers: int = 1, cache: BaselineCache | None = None) -> np.ndarray:
    """Per-agent realized utilities of the expert executing ``scenario``."""
    cache = _DEFAULT_CACHE if cache is None else cache
    expert = expert_scenario(scenario, samples)
    key = ("expert", expert.content_hash(), int(seed))

    def compute():
        logger.info("expert baseline %s seed %d", key[1], seed)
        return receding_horizon_execute(expert, master_seed=seed, workers=workers).utilities

    return cache.get(key, compute)


def random_rollouts(scenario: Scenario, seed: int, rollouts: int = RANDOM_ROLLOUTS) -> np.ndarray:
    """Realized utilities ``(rollouts, N)`` of all agents acting uniformly at random."""
    env = scenario.env
    goals = scenario.goals
    n = len(scenario.agents)
    out = np.empty((rollouts, n))
    for r in range(rollouts):
        rng = np.random.default_rng([int(seed), _RANDOM_TAG, r])
        pos = scenario.starts.copy()
        total = np.zeros(n)
        for t in range(scenario.steps + 1):
            total += [reward(pos, None, goals, env, scenario.reward, i) for i in range(n)]
            if t < scenario.steps:
                acts = np.array([uniform_sample(rng, scenario.a_max) for _ in range(n)])
                pos = np.clip(pos + acts * scenario.planner.dt, env.lo, env.hi)
        out[r] = total
    return out


def random_baseline(scenario: Scenario, seed: int, *, rollouts: int = RANDOM_ROLLOUTS,
                    cache: BaselineCache | None = None) -> np.ndarray:
    """Per-agent mean utility over ``rollouts`` uniform-random executions."""
    cache = _DEFAULT_CACHE if cache is None else cache
    # the planner plays no part in a random walk, so normalize it out of the key
    base = scenario.with_priors([UNIFORM] * len(scenario.agents)).with_samples(1)
    key = ("random", base.content_hash(), int(seed), int(rollouts))
    return cache.get(key, lambda: random_rollouts(scenario, seed, rollouts).mean(axis=0))


# --- sweeps -----------------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkRecord:
    scenario_id: str
    env_level: str
    samples: int
    priors: tuple[str, ...]
    seed: int
    score: float
    raw_utility: float
    expert_utility: float
    random_utility: float
    wall_time: float
    agent_scores: tuple[float, ...] = ()
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def subgroup_score(self, kind: str) -> Optional[float]:
        """Mean score of the agents using prior ``kind``; None when there are none."""
        vals = [s for s, p in zip(self.agent_scores, self.priors) if p == kind]
        return float(np.mean(vals)) if vals else None


RECORD_COLUMNS = ("scenario_id", "env_level", "samples", "priors", "seed", "score",
                  "raw_utility", "expert_utility", "random_utility", "wall_time",
                  "agent_scores", "error")


@dataclass(frozen=True)
class SweepConfig:
    """Cartesian grid of sample budgets, levels, prior assignments and seeds.

    Each seed drives both the obstacle layout and the planner randomness.
    An empty ``prior_assignments`` entry is not allowed; each one lists a
    prior per agent of ``base``.
    """

    base: Scenario
    samples: tuple[int, ...]
    env_levels: tuple[str, ...]
    prior_assignments: tuple[tuple[str, ...], ...]
    seeds: tuple[int, ...]
    scenario_id: str = "scenario"
    expert_samples: int = EXPERT_SAMPLES

    def __post_init__(self):
        for name in ("samples", "env_levels", "prior_assignments", "seeds"):
            value = tuple(getattr(self, name))
            if not value:
                raise ValueError(f"{name} grid must be non-empty")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "prior_assignments",
                           tuple(tuple(p) for p in self.prior_assignments))
        for d in self.samples:
            if int(d) != d or d < 1:
                raise ValueError(f"sample budgets must be positive integers, got {d!r}")
        for level in self.env_levels:
            if level not in LEVELS and level != self.base.env.level:
                raise ValueError(f"unknown level {level!r}")
        n = len(self.base.agents)
        for assignment in self.prior_assignments:
            if len(assignment) != n or any(p not in PRIOR_KINDS for p in assignment):
                raise ValueError(f"each prior assignment needs {n} entries from {PRIOR_KINDS}")

    def cells(self):
        return itertools.product(self.samples, self.env_levels, self.prior_assignments, self.seeds)


def cell_scenario(base: Scenario, level: str, priors: Sequence[str], samples: int,
                  seed: int) -> Scenario:
    """``base`` with a freshly generated layout for (level, seed), priors and budget.

    Hand-built layouts (level outside the Env0-Env3 family) are kept as is.
    """
    if level in LEVELS:
        base = base.with_env(level, seed)
    elif level != base.env.level:
        raise ValueError(f"level {level!r} does not match the scenario's {base.env.level!r}")
    return base.with_priors(priors).with_samples(samples)


def run_cell(base: Scenario, level: str, priors: Sequence[str], samples: int, seed: int, *,
             scenario_id: str = "scenario", expert_samples: int = EXPERT_SAMPLES,
             workers: int = 1, cache: BaselineCache | None = None) -> BenchmarkRecord:
    """Execute one grid cell and score it; raises on failure."""
    t0 = time.perf_counter()
    scenario = cell_scenario(base, level, priors, samples, seed)
    expert = expert_baseline(scenario, seed, samples=expert_samples, workers=workers, cache=cache)
    rand = random_baseline(scenario, seed, cache=cache)
    run = receding_horizon_execute(scenario, master_seed=seed, workers=workers)
    raw = run.utilities
    scores = tuple(normalized_score(raw[i], rand[i], expert[i]) for i in range(len(raw)))
    return BenchmarkRecord(scenario_id, level, int(samples), tuple(priors), int(seed),
                           float(np.mean(scores)), float(raw.mean()), float(expert.mean()),
                           float(rand.mean()), time.perf_counter() - t0, scores)


def run_sweep(sweep: SweepConfig, *, workers: int = 1,
              cache: BaselineCache | None = None) -> list[BenchmarkRecord]:
    """Run every cell in grid order. A failing cell becomes a record with ``error`` set."""
    records = []
    for samples, level, priors, seed in sweep.cells():
        try:
            rec = run_cell(sweep.base, level, priors, samples, seed,
                           scenario_id=sweep.scenario_id, expert_samples=sweep.expert_samples,
                           workers=workers, cache=cache)
        except Exception as exc:  # recorded, the sweep goes on
            logger.warning("cell D=%s %s %s seed %s failed: %s", samples, level, priors, seed, exc)
            rec = BenchmarkRecord(sweep.scenario_id, level, int(samples), tuple(priors), int(seed),
                                  math.nan, math.nan, math.nan, math.nan, 0.0, (),
                                  f"{type(exc).__name__}: {exc}")
        records.append(rec)
    return records


@dataclass(frozen=True)
class SummaryRow:
    scenario_id: str
    env_level: str
    samples: int
    priors: tuple[str, ...]
    mean: float
    std: float
    count: int
    failed: int


SUMMARY_COLUMNS = ("scenario_id", "env_level", "samples", "priors", "mean", "std", "count",
                   "failed")


def summarize(records: Sequence[BenchmarkRecord]) -> list[SummaryRow]:
    """Mean and population std of the score per grid point, in first-seen order."""
    groups: dict[tuple, list[BenchmarkRecord]] = {}
    for r in records:
        groups.setdefault((r.scenario_id, r.env_level, r.samples, r.priors), []).append(r)
    rows = []
    for key, recs in groups.items():
        ok = [r.score for r in recs if not r.failed]
        mean = float(np.mean(ok)) if ok else math.nan
        std = float(np.std(ok)) if ok else math.nan
        rows.append(SummaryRow(*key, mean, std, len(ok), len(recs) - len(ok)))
    return rows


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ";".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else str(value)


def write_records(path, records: Sequence[BenchmarkRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORD_COLUMNS)
        for r in records:
            writer.writerow([_fmt(getattr(r, c)) for c in RECORD_COLUMNS])


def write_summary_csv(path, rows: Sequence[SummaryRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for r in rows:
            writer.writerow([_fmt(getattr(r, c)) for c in SUMMARY_COLUMNS])


# --- replacement study -----------------------------------------------------------

@dataclass(frozen=True)
class ReplacementRow:
    num_informed: int
    group_score: float
    informed_score: Optional[float]
    uniform_score: Optional[float]
    group_std: float
    seeds: int
    failed: int


REPLACEMENT_COLUMNS = ("num_informed", "group_score", "informed_score", "uniform_score",
                       "group_std", "seeds", "failed")


def replacement_priors(n: int, k: int) -> tuple[str, ...]:
    """Agents ``0..k-1`` informed, the rest uniform."""
    return tuple([INFORMED] * k + [UNIFORM] * (n - k))


def replacement_study(base: Scenario, seeds: Sequence[int], *, level: str | None = None,
                      workers: int = 1, cache: BaselineCache | None = None,
                      expert_samples: int = EXPERT_SAMPLES):
    """Score the group for k = 0..N informed agents.

    Returns ``(rows, records)``; subgroup scores are None when that subgroup
    is empty.
    """
    n = len(base.agents)
    if n != 5:
        raise ValueError(f"the replacement study needs a 5-agent scenario, got {n} agents")
    seeds = tuple(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    level = level or base.env.level
    rows, records = [], []
    for k in range(n + 1):
        priors = replacement_priors(n, k)
        recs = []
        for seed in seeds:
            try:
                recs.append(run_cell(base, level, priors, base.planner.samples, seed,
                                     scenario_id=f"replacement-k{k}",
                                     expert_samples=expert_samples, workers=workers,
                                     cache=cache))
            except Exception as exc:
                logger.warning("replacement k=%d seed %s failed: %s", k, seed, exc)
                recs.append(BenchmarkRecord(f"replacement-k{k}", level, base.planner.samples,
                                            priors, int(seed), math.nan, math.nan, math.nan,
                                            math.nan, 0.0, (), f"{type(exc).__name__}: {exc}"))
        ok = [r for r in recs if not r.failed]
        group = [r.score for r in ok]

        def sub(kind):
            vals = [r.subgroup_score(kind) for r in ok]
            vals = [v for v in vals if v is not None]
            return float(np.mean(vals)) if vals else None

        rows.append(ReplacementRow(k, float(np.mean(group)) if group else math.nan, sub(INFORMED),
                                   sub(UNIFORM), float(np.std(group)) if group else math.nan,
                                   len(ok), len(recs) - len(ok)))
        records.extend(recs)
    return rows, records


def write_replacement_csv(path, rows: Sequence[ReplacementRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPLACEMENT_COLUMNS)
        for r in rows:
            writer.writerow([_fmt(getattr(r, c)) for c in REPLACEMENT_COLUMNS])


def spearman(x, y) -> float:
    """Spearman rank correlation with average ranks for ties."""
    return float(spearmanr(x, y).statistic)


# --- default scenarios -----------------------------------------------------

SINGLE_PLANNER = PlannerConfig(samples=10, n_ibr=1, n_up=3, horizon=20)
MULTI_PLANNER = PlannerConfig(samples=400, n_ibr=2, n_up=2, horizon=20)


def single_agent_scenario(level: str = "Env1", seed: int = 0, *, prior: str = INFORMED,
                          samples: int = 10, beta: float = 0.03) -> Scenario:
    """One agent crossing the 10 m cube along its middle, 6 m from start to goal."""
    agent = AgentSpec((2.0, 5.0, 5.0), (8.0, 5.0, 5.0), beta, prior)
    return Scenario.generated([agent], level, seed,
                              planner=replace(SINGLE_PLANNER, samples=int(samples)),
                              name="single")


def multi_agent_scenario(level: str = "Env1", seed: int = 0, *, priors=None,
                         samples: int = 400, beta: float = 0.1) -> Scenario:
    """Five agents on a ring heading to a tight goal ring on the far side.

    Goal slots sit opposite to the start slots, so paths converge and cross
    near the middle of the ring.
    """
    priors = tuple(priors) if priors is not None else (INFORMED,) * 5
    agents = []
    for i, prior in enumerate(priors):
        ang = 2 * math.pi * i / 5
        start = (2.0, 5.0 + 1.5 * math.cos(ang), 5.0 + 1.5 * math.sin(ang))
        goal = (8.0, 5.0 - 0.6 * math.cos(ang), 5.0 - 0.6 * math.sin(ang))
        agents.append(AgentSpec(start, goal, beta, prior))
    return Scenario.generated(agents, level, seed,
                              planner=replace(MULTI_PLANNER, samples=int(samples)),
                              name="multi")


def swap_scenario(seed: int = 0, *, samples: int = 100, beta: float = 0.1,
                  steps: int = 80) -> Scenario:
    """Two agents trading places through the single opening of a wall.

    The eight wall spheres overlap their neighbours; the opening at the
    middle leaves agent centres a 0.2 m radius, half of the safety distance.
    """
    r = 0.85
    wall = [(3.0, y, z, r) for y in (-1.2, 0.0, 1.2) for z in (-1.2, 0.0, 1.2)
            if (y, z) != (0.0, 0.0)]
    env = Environment("custom", np.array(wall), np.array([0.0, -1.5, -1.5]),
                      np.array([6.0, 1.5, 1.5]))
    agents = [AgentSpec((1.0, 0.0, 0.0), (5.0, 0.0, 0.0), beta, INFORMED),
              AgentSpec((5.0, 0.0, 0.0), (1.0, 0.0, 0.0), beta, INFORMED)]
    return Scenario(tuple(agents), env, RewardSpec(),
                    PlannerConfig(samples=samples, n_ibr=2, n_up=2, horizon=20), steps=steps,
                    name="swap")


# --- charts -------------------------------------------------------------------

def write_charts(out_dir, rows: Sequence[SummaryRow]) -> list[str]:
    """Score-vs-D and score-vs-level SVG line charts; skipped if matplotlib is missing."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        logger.info("matplotlib not available; skipping charts")
        return []
    import os

    written = []
    series: dict[tuple, list[SummaryRow]] = {}
    for r in rows:
        series.setdefault((r.env_level, r.priors), []).append(r)
    if any(len({r.samples for r in s}) > 1 for s in series.values()):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for (level, priors), s in series.items():
            s = sorted(s, key=lambda r: r.samples)
            ax.errorbar([r.samples for r in s], [r.mean for r in s], [r.std for r in s],
                        marker="o", capsize=3, label=f"{level} {'/'.join(sorted(set(priors)))}")
        ax.set_xlabel("sampled trajectories D")
        ax.set_ylabel("normalized score")
        ax.legend(fontsize=7)
        path = os.path.join(out_dir, "score_vs_samples.svg")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    by_prior: dict[tuple, list[SummaryRow]] = {}
    for r in rows:
        by_prior.setdefault((r.samples, r.priors), []).append(r)
    if any(len({r.env_level for r in s}) > 1 for s in by_prior.values()):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for (samples, priors), s in by_prior.items():
            s = sorted(s, key=lambda r: LEVELS.index(r.env_level))
            ax.errorbar([r.env_level for r in s], [r.mean for r in s], [r.std for r in s],
                        marker="o", capsize=3, label=f"D={samples} {'/'.join(sorted(set(priors)))}")
        ax.set_ylabel("normalized score")
        ax.legend(fontsize=7)
        path = os.path.join(out_dir, "score_vs_level.svg")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written


def write_replacement_chart(path, rows: Sequence[ReplacementRow]) -> Optional[str]:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return None
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ks = [r.num_informed for r in rows]
    ax.plot(ks, [r.group_score for r in rows], marker="o", label="group")
    for attr, label in (("informed_score", "informed agents"), ("uniform_score", "uniform agents")):
        pts = [(r.num_informed, getattr(r, attr)) for r in rows if getattr(r, attr) is not None]
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="s", linestyle="--", label=label)
    ax.set_xlabel("informed agents")
    ax.set_ylabel("normalized score")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return str(path)


__all__ = [
    "DegenerateBaselineError", "normalized_score", "expert_baseline", "random_baseline",
    "random_rollouts", "BaselineCache", "BenchmarkRecord", "SweepConfig", "run_sweep",
    "run_cell", "summarize", "replacement_study", "ReplacementRow", "write_records",
    "write_summary_csv", "write_replacement_csv", "single_agent_scenario",
    "multi_agent_scenario", "swap_scenario", "EXPERT_SAMPLES", "RANDOM_ROLLOUTS",
]
