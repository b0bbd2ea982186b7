import csv
import math
from dataclasses import replace

import numpy as np
import pytest

from brgame import bench
from brgame.bench import (BaselineCache, DegenerateBaselineError, SweepConfig, expert_baseline,
                          normalized_score, random_baseline, random_rollouts, replacement_study,
                          run_cell, run_sweep, spearman, summarize)
from brgame.planner import PlannerConfig
from brgame.scenario import AgentSpec, Scenario
from brgame.world import empty_env

TINY = PlannerConfig(samples=8, n_ibr=1, n_up=1, horizon=6)


def tiny_single(prior="informed"):
    agent = AgentSpec((2.0, 5.0, 5.0), (5.0, 5.0, 5.0), 0.03, prior)
    return Scenario.generated([agent], "Env1", 0, planner=TINY, steps=8)


def tiny_five():
    agents = [AgentSpec((2.0, 3.0 + i, 5.0), (6.0, 3.0 + i, 5.0), 0.1, "uniform")
              for i in range(5)]
    return Scenario.generated(agents, "Env1", 0, planner=TINY, steps=6)


def test_normalized_score_examples():
    assert normalized_score(-5, -10, -2) == pytest.approx(0.625)
    assert normalized_score(-2, -10, -2) == 1.0
    assert normalized_score(-10, -10, -2) == 0.0
    # unclamped outside the baselines
    assert normalized_score(-20, -10, -2) == pytest.approx(-1.25)


@pytest.mark.parametrize("j_star", [-10.0, -11.0])
def test_normalized_score_degenerate(j_star):
    with pytest.raises(DegenerateBaselineError):
        normalized_score(-5, -10, j_star)


def test_random_baseline_is_mean_of_rollouts_and_deterministic():
    s = tiny_single()
    rolls = random_rollouts(s, 3)
    assert rolls.shape == (bench.RANDOM_ROLLOUTS, 1)
    cache = BaselineCache()
    np.testing.assert_array_equal(random_baseline(s, 3, cache=cache), rolls.mean(axis=0))
    np.testing.assert_array_equal(random_rollouts(s, 3), rolls)
    assert not np.array_equal(random_rollouts(s, 4), rolls)


def test_random_baseline_drifts_off_goal():
    agent = AgentSpec((5.0, 5.0, 5.0), (5.0, 5.0, 5.0), 0.03)
    s = Scenario((agent,), empty_env(), steps=20)
    assert random_baseline(s, 0, cache=BaselineCache())[0] < 0


def test_random_baseline_ignores_planner_settings():
    cache = BaselineCache()
    s = tiny_single()
    random_baseline(s, 0, cache=cache)
    random_baseline(s.with_samples(99).with_priors(["informed"]), 0, cache=cache)
    assert cache.misses == 1


def test_expert_cache_skips_second_planning(monkeypatch):
    calls = []
    real = bench.receding_horizon_execute

    def counting(*a, **kw):
        calls.append(1)
        return real(*a, **kw)

    monkeypatch.setattr(bench, "receding_horizon_execute", counting)
    cache = BaselineCache()
    s = tiny_single("uniform")
    first = expert_baseline(s, 1, samples=16, cache=cache)
    second = expert_baseline(s.with_samples(3), 1, samples=16, cache=cache)
    assert len(calls) == 1 and cache.misses == 1
    np.testing.assert_array_equal(first, second)
    expert_baseline(s, 2, samples=16, cache=cache)
    assert len(calls) == 2


def _proportional_utility_1d(d0, steps, dt):
    d, total = d0, 0.0
    for _ in range(steps):
        total -= d
        d -= min(d, 1.0) * dt
    return total - d


def test_env0_expert_matches_analytic_proportional_utility():
    agent = AgentSpec((2.0, 5.0, 5.0), (8.0, 5.0, 5.0), 0.03, "informed")
    s = Scenario((agent,), empty_env(), planner=bench.SINGLE_PLANNER, steps=80)
    expert = expert_baseline(s, 0, cache=BaselineCache())[0]
    analytic = _proportional_utility_1d(6.0, 80, 0.1)
    assert expert == pytest.approx(analytic, rel=0.05)


def test_sweep_contract():
    sweep = SweepConfig(tiny_single(), (5,), ("Env1",), (("informed",),), (0, 1, 2),
                        expert_samples=32)
    records = run_sweep(sweep, cache=BaselineCache())
    assert len(records) == 3
    assert all(r.env_level == "Env1" and r.samples == 5 and not r.failed for r in records)
    assert [r.seed for r in records] == [0, 1, 2]
    for r in records:
        assert r.score == pytest.approx(normalized_score(r.raw_utility, r.random_utility,
                                                         r.expert_utility))


def test_sweep_grid_order_and_reproducibility():
    sweep = SweepConfig(tiny_single(), (4, 6), ("Env1", "Env2"),
                        (("informed",), ("uniform",)), (0, 1), expert_samples=32)
    cache = BaselineCache()
    records = run_sweep(sweep, cache=cache)
    keys = [(r.samples, r.env_level, r.priors, r.seed) for r in records]
    assert keys == list(sweep.cells())
    # baselines are shared across budgets and priors: 2 levels x 2 seeds, expert + random
    assert cache.misses == 8
    r = records[5]
    again = run_cell(sweep.base, r.env_level, r.priors, r.samples, r.seed, expert_samples=32,
                     cache=BaselineCache())
    assert again.score == r.score and again.raw_utility == r.raw_utility


def test_sweep_records_failures_and_continues(monkeypatch):
    real = bench.run_cell

    def flaky(base, level, priors, samples, seed, **kw):
        if seed == 1:
            raise DegenerateBaselineError("expert lost")
        return real(base, level, priors, samples, seed, **kw)

    monkeypatch.setattr(bench, "run_cell", flaky)
    sweep = SweepConfig(tiny_single(), (5,), ("Env1",), (("informed",),), (0, 1, 2),
                        expert_samples=32)
    records = run_sweep(sweep, cache=BaselineCache())
    assert [r.failed for r in records] == [False, True, False]
    assert "expert lost" in records[1].error and math.isnan(records[1].score)
    row, = summarize(records)
    assert row.count == 2 and row.failed == 1
    assert row.mean == pytest.approx(np.mean([records[0].score, records[2].score]))


def test_sweep_validation():
    with pytest.raises(ValueError):
        SweepConfig(tiny_single(), (), ("Env1",), (("informed",),), (0,))
    with pytest.raises(ValueError):
        SweepConfig(tiny_single(), (5,), ("Env1",), (("informed", "uniform"),), (0,))
    with pytest.raises(ValueError):
        SweepConfig(tiny_single(), (5,), ("Env8",), (("informed",),), (0,))
    with pytest.raises(ValueError):
        SweepConfig(tiny_single(), (0,), ("Env1",), (("informed",),), (0,))


def test_csv_outputs(tmp_path):
    sweep = SweepConfig(tiny_single(), (5,), ("Env1",), (("informed",),), (0, 1),
                        expert_samples=32)
    records = run_sweep(sweep, cache=BaselineCache())
    bench.write_records(tmp_path / "r.csv", records)
    bench.write_summary_csv(tmp_path / "s.csv", summarize(records))
    rows = list(csv.DictReader((tmp_path / "r.csv").open()))
    assert list(rows[0]) == list(bench.RECORD_COLUMNS) and len(rows) == 2
    assert float(rows[1]["score"]) == records[1].score
    srows = list(csv.DictReader((tmp_path / "s.csv").open()))
    assert list(srows[0]) == list(bench.SUMMARY_COLUMNS) and srows[0]["failed"] == "0"


def test_charts_are_svg(tmp_path):
    pytest.importorskip("matplotlib")
    sweep = SweepConfig(tiny_single(), (4, 6), ("Env1", "Env2"), (("informed",),), (0,),
                        expert_samples=16)
    paths = bench.write_charts(tmp_path, summarize(run_sweep(sweep, cache=BaselineCache())))
    assert len(paths) == 2
    assert all(open(p).read().lstrip().startswith("<?xml") for p in paths)


def test_replacement_study_table():
    base = tiny_five()
    cache = BaselineCache()
    rows, records = replacement_study(base, (0, 1), cache=cache, expert_samples=16)
    assert [r.num_informed for r in rows] == list(range(6))
    assert rows[0].informed_score is None and rows[0].uniform_score is not None
    assert rows[5].uniform_score is None and rows[5].informed_score is not None
    assert all(r.seeds == 2 and r.failed == 0 for r in rows)
    # subgroup accounting per record and on the seed averages
    for r in records:
        k = r.priors.count("informed")
        if 0 < k < 5:
            mixed = (k * r.subgroup_score("informed") + (5 - k) * r.subgroup_score("uniform")) / 5
            assert r.score == pytest.approx(mixed, rel=1e-12)
    for row in rows[1:5]:
        k = row.num_informed
        assert row.group_score == pytest.approx(
            (k * row.informed_score + (5 - k) * row.uniform_score) / 5, rel=1e-12)
    # the k=0 and k=5 rows are the pure sweep cells for the same seeds
    sweep = SweepConfig(base, (base.planner.samples,), ("Env1",),
                        (("uniform",) * 5, ("informed",) * 5), (0, 1), expert_samples=16)
    pure = summarize(run_sweep(sweep, cache=cache))
    assert rows[0].group_score == pure[0].mean and rows[5].group_score == pure[1].mean


def test_replacement_needs_five_agents():
    with pytest.raises(ValueError):
        replacement_study(tiny_single(), (0,))


def test_spearman():
    assert spearman([0, 1, 2, 3], [1.0, 2.0, 2.5, 7.0]) == pytest.approx(1.0)
    assert spearman([0, 1, 2], [3.0, 2.0, 1.0]) == pytest.approx(-1.0)


def test_default_scenarios_are_well_formed():
    s = bench.single_agent_scenario("Env2", 3, prior="uniform", samples=20)
    assert s.priors == ("uniform",) and s.planner.samples == 20 and s.betas[0] == 0.03
    m = bench.multi_agent_scenario("Env1", 0)
    assert len(m.agents) == 5 and m.planner.samples == 400 and np.all(m.betas == 0.1)
    goals = m.goals
    sep = np.linalg.norm(goals[:, None] - goals[None], axis=-1)[np.triu_indices(5, 1)]
    assert sep.min() > m.reward.r_safe
    w = bench.swap_scenario()
    assert w.planner.samples == 100 and len(w.agents) == 2
    # the wall opening leaves less than r_safe / 2 of clearance around the axis
    obs = w.env.obstacles
    off_axis = np.array([3.0, 0.0, 0.25])
    gap = np.linalg.norm(obs[:, :3] - off_axis, axis=1) - obs[:, 3]
    assert gap.min() < w.reward.r_agent
