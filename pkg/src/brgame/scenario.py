"""Scenarios and their YAML file format.

A scenario file looks like::

    version: 1
    name: single-env1
    environment: {level: Env1, seed: 3}
    agents:
      - {start: [2, 5, 5], goal: [8, 5, 5], beta: 0.03, prior: informed,
         prior_params: {gain: 1.0}}
    reward: {w_goal: 1.0, w_col: 100.0, r_agent: 0.15, r_safe: 0.4}
    planner: {samples: 10, n_ibr: 1, n_up: 3, horizon: 20, dt: 0.1, noise_sigma: 0.5}
    dynamics: {a_min: 0.0, a_max: 1.0}
    execution_steps: 80

Generated environments are stored by level and seed and rebuilt on load, with
every start and goal kept clear of obstacles. Explicit layouts use
``environment: {level: custom, bounds: [[lo], [hi]], obstacles: [[x, y, z, r], ...]}``.
Unknown keys are errors.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Optional

import numpy as np
import yaml

from .planner import GAUSS_SEIDEL, JACOBI, PlannerConfig
from .policy import INFORMED, PRIOR_KINDS, UNIFORM, InformedPolicyParams, NoiseSpec
from .world import LEVELS, Environment, RewardSpec, make_env

VERSION = 1
CUSTOM = "custom"


class ScenarioError(ValueError):
    """Malformed scenario input; the message names the field and line."""


@dataclass(frozen=True)
class AgentSpec:
    start: tuple[float, float, float]
    goal: tuple[float, float, float]
    beta: float
    prior: str = INFORMED
    prior_params: InformedPolicyParams = field(default_factory=InformedPolicyParams)

    def __post_init__(self):
        object.__setattr__(self, "start", tuple(float(v) for v in self.start))
        object.__setattr__(self, "goal", tuple(float(v) for v in self.goal))
        if len(self.start) != 3 or len(self.goal) != 3:
            raise ValueError("start and goal must have three coordinates")
        if not all(math.isfinite(v) for v in self.start + self.goal):
            raise ValueError("start and goal must be finite")
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise ValueError("beta must be finite and positive")
        if self.prior not in PRIOR_KINDS:
            raise ValueError(f"prior must be one of {PRIOR_KINDS}")


@dataclass(frozen=True)
class Scenario:
    agents: tuple[AgentSpec, ...]
    env: Environment
    reward: RewardSpec = field(default_factory=RewardSpec)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    steps: int = 80
    a_min: float = 0.0
    a_max: float = 1.0
    name: str = "scenario"
    env_seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        if len(self.agents) < 1:
            raise ValueError("a scenario needs at least one agent")
        if self.steps < 1:
            raise ValueError("execution_steps must be >= 1")
        if not (0 <= self.a_min <= self.a_max and math.isfinite(self.a_max) and self.a_max > 0):
            raise ValueError("need 0 <= a_min <= a_max and a_max > 0")
        for a in self.agents:
            for p in (a.start, a.goal):
                if np.any(np.asarray(p) < self.env.lo) or np.any(np.asarray(p) > self.env.hi):
                    raise ValueError(f"point {p} lies outside the world bounds")

    @property
    def starts(self) -> np.ndarray:
        return np.array([a.start for a in self.agents], dtype=float)

    @property
    def goals(self) -> np.ndarray:
        return np.array([a.goal for a in self.agents], dtype=float)

    @property
    def betas(self) -> np.ndarray:
        return np.array([a.beta for a in self.agents], dtype=float)

    @property
    def priors(self) -> tuple[str, ...]:
        return tuple(a.prior for a in self.agents)

    @classmethod
    def generated(cls, agents, level: str, seed: int, **kwargs) -> "Scenario":
        agents = tuple(agents)
        keep = [a.start for a in agents] + [a.goal for a in agents]
        env = make_env(level, seed, keep_out=keep)
        return cls(agents, env, env_seed=seed, **kwargs)

    def with_env(self, level: str, seed: int) -> "Scenario":
        keep = [a.start for a in self.agents] + [a.goal for a in self.agents]
        env = make_env(level, seed, keep_out=keep, lo=self.env.lo, hi=self.env.hi)
        return replace(self, env=env, env_seed=seed)

    def with_priors(self, priors) -> "Scenario":
        priors = tuple(priors)
        if len(priors) != len(self.agents):
            raise ValueError("need one prior per agent")
        return replace(self, agents=tuple(replace(a, prior=p) for a, p in zip(self.agents, priors)))

    def with_samples(self, samples: int) -> "Scenario":
        return replace(self, planner=replace(self.planner, samples=int(samples)))

    def content_hash(self) -> str:
        text = json.dumps(to_dict(self), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


# --- serialization ------------------------------------------------------------

def _env_to_dict(s: Scenario) -> dict:
    if s.env_seed is not None and s.env.level in LEVELS:
        d = {"level": s.env.level, "seed": int(s.env_seed)}
        if not (np.array_equal(s.env.lo, np.zeros(3)) and np.array_equal(s.env.hi, np.full(3, 10.0))):
            d["bounds"] = [s.env.lo.tolist(), s.env.hi.tolist()]
        return d
    return {
        "level": CUSTOM if s.env.level not in LEVELS else s.env.level,
        "bounds": [s.env.lo.tolist(), s.env.hi.tolist()],
        "obstacles": [list(map(float, row)) for row in s.env.obstacles],
    }


def to_dict(s: Scenario) -> dict:
    p = s.planner
    planner = {
        "samples": p.samples, "n_ibr": p.n_ibr, "n_up": p.n_up, "horizon": p.horizon,
        "dt": p.dt, "noise_sigma": p.noise.sigma, "update_order": p.update_order,
        "early_stop_tol": p.early_stop_tol, "ne_probes": p.ne_probes,
    }
    agents = []
    for a in s.agents:
        entry: dict[str, Any] = {"start": list(a.start), "goal": list(a.goal), "beta": a.beta,
                                 "prior": a.prior}
        pp = {"gain": a.prior_params.gain}
        if a.prior_params.feature_weights is not None:
            pp["feature_weights"] = list(a.prior_params.feature_weights)
        entry["prior_params"] = pp
        agents.append(entry)
    return {
        "version": VERSION,
        "name": s.name,
        "environment": _env_to_dict(s),
        "agents": agents,
        "reward": {"w_goal": s.reward.w_goal, "w_col": s.reward.w_col,
                   "r_agent": s.reward.r_agent, "r_safe": s.reward.r_safe},
        "planner": planner,
        "dynamics": {"a_min": s.a_min, "a_max": s.a_max},
        "execution_steps": s.steps,
    }


def dumps(s: Scenario) -> str:
    return yaml.safe_dump(to_dict(s), sort_keys=False, default_flow_style=None)


def dump(s: Scenario, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(s))


class _Lines:
    """Maps dotted field paths to 1-based source lines."""

    def __init__(self, node):
        self.lines: dict[str, int] = {}
        self._walk(node, "")

    def _walk(self, node, path):
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = f"{path}.{k.value}" if path else str(k.value)
                self.lines[key] = k.start_mark.line + 1
                self._walk(v, key)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                self._walk(v, f"{path}[{i}]")

    def at(self, path: str) -> str:
        while path and path not in self.lines:
            path = path.rsplit(".", 1)[0] if "." in path else ""
        line = self.lines.get(path)
        return f" (line {line})" if line else ""


class _Reader:
    def __init__(self, lines: _Lines):
        self.lines = lines

    def fail(self, path: str, msg: str):
        raise ScenarioError(f"{path or '<root>'}: {msg}{self.lines.at(path)}")

    def mapping(self, obj, path, required=(), optional=()):
        if not isinstance(obj, dict):
            self.fail(path, "expected a mapping")
        unknown = set(obj) - set(required) - set(optional)
        if unknown:
            key = sorted(map(str, unknown))[0]
            self.fail(f"{path}.{key}" if path else key, "unknown field")
        for k in required:
            if k not in obj:
                self.fail(path, f"missing required field {k!r}")
        return obj

    def number(self, obj, path, *, lo=None, strict_lo=False, integer=False):
        ok = isinstance(obj, (int, float)) and not isinstance(obj, bool)
        if integer:
            ok = isinstance(obj, int) and not isinstance(obj, bool)
        if not ok or not math.isfinite(obj):
            self.fail(path, f"expected a finite {'integer' if integer else 'number'}, got {obj!r}")
        if lo is not None and (obj <= lo if strict_lo else obj < lo):
            self.fail(path, f"must be {'>' if strict_lo else '>='} {lo}, got {obj}")
        return obj

    def vec3(self, obj, path):
        if not isinstance(obj, list) or len(obj) != 3:
            self.fail(path, "expected a list of three numbers")
        return tuple(float(self.number(v, f"{path}[{i}]")) for i, v in enumerate(obj))


def _parse_env(r: _Reader, d, keep_out):
    r.mapping(d, "environment", required=("level",), optional=("seed", "bounds", "obstacles"))
    level = d["level"]
    lo, hi = np.zeros(3), np.full(3, 10.0)
    if "bounds" in d:
        b = d["bounds"]
        if not isinstance(b, list) or len(b) != 2:
            r.fail("environment.bounds", "expected [[lo_x, lo_y, lo_z], [hi_x, hi_y, hi_z]]")
        lo = np.array(r.vec3(b[0], "environment.bounds[0]"))
        hi = np.array(r.vec3(b[1], "environment.bounds[1]"))
        if np.any(hi <= lo):
            r.fail("environment.bounds", "need lo < hi on every axis")
    if "obstacles" in d:
        if "seed" in d:
            r.fail("environment.seed", "give either a seed or an explicit obstacle list")
        obs = d["obstacles"]
        if not isinstance(obs, list):
            r.fail("environment.obstacles", "expected a list of [x, y, z, r]")
        rows = []
        for i, row in enumerate(obs):
            path = f"environment.obstacles[{i}]"
            if not isinstance(row, list) or len(row) != 4:
                r.fail(path, "expected [x, y, z, radius]")
            vals = [float(r.number(v, f"{path}[{j}]")) for j, v in enumerate(row)]
            if vals[3] <= 0:
                r.fail(path, "radius must be positive")
            rows.append(vals)
        name = level if level in LEVELS else CUSTOM
        if level not in LEVELS and level != CUSTOM:
            r.fail("environment.level", f"expected one of {LEVELS + (CUSTOM,)}")
        return Environment(name, np.array(rows).reshape(-1, 4), lo, hi), None
    if level not in LEVELS:
        r.fail("environment.level", f"expected one of {LEVELS} (or {CUSTOM} with obstacles)")
    if "seed" not in d:
        r.fail("environment", "generated environments need a seed")
    seed = r.number(d["seed"], "environment.seed", lo=0, integer=True)
    try:
        env = make_env(level, seed, keep_out=keep_out, lo=lo, hi=hi)
    except Exception as exc:  # generation failure is an input problem here
        r.fail("environment", str(exc))
    return env, seed


def from_dict(data, lines: _Lines | None = None) -> Scenario:
    r = _Reader(lines or _Lines(yaml.compose(json.dumps(data))))
    r.mapping(data, "", required=("version", "environment", "agents"),
              optional=("name", "reward", "planner", "dynamics", "execution_steps"))
    if data["version"] != VERSION:
        r.fail("version", f"unsupported version {data['version']!r}; expected {VERSION}")

    agents_raw = data["agents"]
    if not isinstance(agents_raw, list) or not agents_raw:
        r.fail("agents", "expected a non-empty list")
    agents = []
    for i, a in enumerate(agents_raw):
        path = f"agents[{i}]"
        r.mapping(a, path, required=("start", "goal", "beta"), optional=("prior", "prior_params"))
        prior = a.get("prior", INFORMED)
        if prior not in PRIOR_KINDS:
            r.fail(f"{path}.prior", f"expected one of {PRIOR_KINDS}")
        pp = a.get("prior_params") or {}
        r.mapping(pp, f"{path}.prior_params", optional=("gain", "feature_weights"))
        gain = r.number(pp.get("gain", 1.0), f"{path}.prior_params.gain", lo=0, strict_lo=True)
        fw = pp.get("feature_weights")
        if fw is not None:
            if not isinstance(fw, list) or len(fw) != 1:
                r.fail(f"{path}.prior_params.feature_weights", "expected a list with one weight")
            fw = tuple(float(r.number(v, f"{path}.prior_params.feature_weights[{j}]"))
                       for j, v in enumerate(fw))
        agents.append(AgentSpec(
            start=r.vec3(a["start"], f"{path}.start"),
            goal=r.vec3(a["goal"], f"{path}.goal"),
            beta=float(r.number(a["beta"], f"{path}.beta", lo=0, strict_lo=True)),
            prior=prior,
            prior_params=InformedPolicyParams(float(gain), fw),
        ))

    rw = r.mapping(data.get("reward") or {}, "reward",
                   optional=("w_goal", "w_col", "r_agent", "r_safe"))
    rkw = {k: float(r.number(v, f"reward.{k}", lo=0)) for k, v in rw.items()}
    try:
        reward = RewardSpec(**rkw)
    except ValueError as exc:
        r.fail("reward", str(exc))

    pl = r.mapping(data.get("planner") or {}, "planner",
                   optional=("samples", "n_ibr", "n_up", "horizon", "dt", "noise_sigma",
                             "update_order", "early_stop_tol", "ne_probes"))
    pkw: dict[str, Any] = {}
    for k in ("samples", "n_ibr", "n_up", "horizon", "ne_probes"):
        if k in pl:
            pkw[k] = r.number(pl[k], f"planner.{k}", lo=1, integer=True)
    if "dt" in pl:
        pkw["dt"] = float(r.number(pl["dt"], "planner.dt", lo=0, strict_lo=True))
    if "noise_sigma" in pl:
        pkw["noise"] = NoiseSpec(float(r.number(pl["noise_sigma"], "planner.noise_sigma", lo=0)))
    if "update_order" in pl:
        if pl["update_order"] not in (GAUSS_SEIDEL, JACOBI):
            r.fail("planner.update_order", f"expected {GAUSS_SEIDEL!r} or {JACOBI!r}")
        pkw["update_order"] = pl["update_order"]
    if pl.get("early_stop_tol") is not None:
        pkw["early_stop_tol"] = float(r.number(pl["early_stop_tol"], "planner.early_stop_tol",
                                               lo=0, strict_lo=True))
    planner = PlannerConfig(**pkw)

    dyn = r.mapping(data.get("dynamics") or {}, "dynamics", optional=("a_min", "a_max"))
    a_min = float(r.number(dyn.get("a_min", 0.0), "dynamics.a_min", lo=0))
    a_max = float(r.number(dyn.get("a_max", 1.0), "dynamics.a_max", lo=0, strict_lo=True))
    if a_min > a_max:
        r.fail("dynamics.a_min", "must not exceed a_max")

    steps = r.number(data.get("execution_steps", 80), "execution_steps", lo=1, integer=True)
    name = data.get("name", "scenario")
    if not isinstance(name, str):
        r.fail("name", "expected a string")

    keep = [a.start for a in agents] + [a.goal for a in agents]
    env, seed = _parse_env(r, data["environment"], keep)
    try:
        return Scenario(tuple(agents), env, reward, planner, int(steps), a_min, a_max, name, seed)
    except ValueError as exc:
        r.fail("", str(exc))


def loads(text: str) -> Scenario:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1})" if mark is not None else ""
        raise ScenarioError(f"<root>: invalid YAML: {getattr(exc, 'problem', exc)}{where}") from None
    if node is None:
        raise ScenarioError("<root>: empty scenario file")
    return from_dict(data, _Lines(node))


def load(path) -> Scenario:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc.strerror}") from None
    return loads(text)
