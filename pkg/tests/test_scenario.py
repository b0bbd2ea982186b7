import numpy as np
import pytest
import yaml

from brgame.bench import multi_agent_scenario, single_agent_scenario, swap_scenario
from brgame.planner import PlannerConfig
from brgame.scenario import AgentSpec, Scenario, ScenarioError, dumps, load, loads, to_dict
from brgame.world import empty_env

GOOD = """\
version: 1
name: demo
environment: {level: Env1, seed: 3}
agents:
  - start: [2, 5, 5]
    goal: [8, 5, 5]
    beta: 0.03
    prior: informed
    prior_params: {gain: 1.5, feature_weights: [0.2]}
planner: {samples: 12, n_ibr: 1, n_up: 2, horizon: 15}
execution_steps: 20
"""


def test_parse_fills_defaults():
    s = loads(GOOD)
    assert s.name == "demo" and s.env.level == "Env1" and s.env_seed == 3
    assert s.planner == PlannerConfig(samples=12, n_ibr=1, n_up=2, horizon=15)
    assert s.agents[0].prior_params.gain == 1.5
    assert s.agents[0].prior_params.unit_weight == 0.2
    assert s.steps == 20 and s.a_max == 1.0 and s.reward.w_col == 100.0


@pytest.mark.parametrize("make", [
    lambda: loads(GOOD),
    lambda: single_agent_scenario("Env3", 4, prior="uniform"),
    lambda: multi_agent_scenario("Env2", 1),
    lambda: swap_scenario(),
])
def test_round_trip_is_identical(make):
    s = make()
    again = loads(dumps(s))
    assert again == s
    assert again.content_hash() == s.content_hash()


def test_generated_layouts_keep_starts_and_goals_clear():
    s = multi_agent_scenario("Env3", 2)
    for p in np.vstack([s.starts, s.goals]):
        gap = np.linalg.norm(s.env.obstacles[:, :3] - p, axis=1) - s.env.obstacles[:, 3]
        assert gap.min() >= 0.6


def test_content_hash_tracks_content():
    s = single_agent_scenario("Env1", 0)
    assert s.content_hash() == single_agent_scenario("Env1", 0).content_hash()
    assert s.content_hash() != s.with_samples(11).content_hash()
    assert s.content_hash() != single_agent_scenario("Env1", 1).content_hash()


def _error(text):
    with pytest.raises(ScenarioError) as info:
        loads(text)
    return str(info.value)


def test_unknown_field_reports_path_and_line():
    msg = _error(GOOD.replace("    beta: 0.03", "    beta: 0.03\n    speed: 2"))
    assert "agents[0].speed" in msg and "unknown field" in msg and "(line 8)" in msg


def test_bad_values_report_field_and_line():
    msg = _error(GOOD.replace("beta: 0.03", "beta: -1"))
    assert msg.startswith("agents[0].beta") and "(line 7)" in msg
    msg = _error(GOOD.replace("samples: 12", "samples: 0"))
    assert msg.startswith("planner.samples") and "(line 10)" in msg
    assert "agents[0].prior" in _error(GOOD.replace("prior: informed", "prior: greedy"))
    assert "agents[0].start" in _error(GOOD.replace("start: [2, 5, 5]", "start: [2, 5]"))


def test_version_and_structure_errors():
    assert _error(GOOD.replace("version: 1", "version: 2")).startswith("version")
    assert "agents" in _error(GOOD.split("agents:")[0] + "agents: []\n")
    assert "invalid YAML" in _error("version: [1\n")
    assert "empty" in _error("")
    assert "environment" in _error(GOOD.replace("{level: Env1, seed: 3}", "{level: Env1}"))
    assert "environment.level" in _error(GOOD.replace("level: Env1", "level: Env7"))


def test_points_outside_bounds_rejected():
    assert "outside" in _error(GOOD.replace("goal: [8, 5, 5]", "goal: [18, 5, 5]"))


def test_custom_environment_file():
    text = """\
version: 1
environment:
  level: custom
  bounds: [[0, 0, 0], [4, 4, 4]]
  obstacles: [[2, 2, 2, 0.5]]
agents: [{start: [0.5, 2, 2], goal: [3.5, 2, 2], beta: 0.1}]
"""
    s = loads(text)
    assert s.env.level == "custom" and s.env_seed is None
    np.testing.assert_array_equal(s.env.hi, [4, 4, 4])
    assert loads(dumps(s)) == s
    bad = text.replace("[[2, 2, 2, 0.5]]", "[[2, 2, 2, -0.5]]")
    assert "environment.obstacles[0]" in _error(bad)


def test_missing_file(tmp_path):
    with pytest.raises(ScenarioError):
        load(tmp_path / "nope.yaml")


def test_dump_is_plain_yaml():
    d = yaml.safe_load(dumps(single_agent_scenario()))
    assert d == to_dict(single_agent_scenario())
    assert d["version"] == 1


def test_scenario_validation():
    agent = AgentSpec((1, 1, 1), (2, 2, 2), 0.1)
    with pytest.raises(ValueError):
        Scenario((), empty_env())
    with pytest.raises(ValueError):
        Scenario((agent,), empty_env(), steps=0)
    with pytest.raises(ValueError):
        Scenario((agent,), empty_env(), a_min=2.0, a_max=1.0)
    with pytest.raises(ValueError):
        AgentSpec((1, 1, 1), (2, 2, 2), 0.0)
    with pytest.raises(ValueError):
        Scenario((agent,), empty_env()).with_priors(["uniform", "uniform"])
