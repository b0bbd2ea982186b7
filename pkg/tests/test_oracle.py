import json

import numpy as np
import pytest

from brgame.oracle import (ToyProblem, exact_softmax_mean, max_relative_error,
                           run_oracle_suite, sampled_softmax_mean)


def test_toy_enumerates_all_sequences():
    toy = ToyProblem()
    seqs = toy.sequences()
    assert seqs.shape == (27, 3) and len({tuple(s) for s in seqs}) == 27


def test_toy_utility_by_hand():
    toy = ToyProblem()
    # x visits 0, 1, 2, 3 against goal 5 with weight 5
    assert toy.utility(np.array([[1.0, 1.0, 1.0]]))[0] == -5 * (25 + 16 + 9 + 4)
    assert toy.utility(np.array([[-1.0, 0.0, 0.0]]))[0] == -5 * (25 + 36 + 36 + 36)


def test_exact_mean_limits():
    toy = ToyProblem()
    # beta -> 0 is the uniform average over the symmetric action set
    np.testing.assert_allclose(exact_softmax_mean(toy, 1e-12), 0.0, atol=1e-9)
    # large beta concentrates on the unique best sequence (always move right)
    np.testing.assert_allclose(exact_softmax_mean(toy, 50.0), 1.0, atol=1e-12)


@pytest.mark.parametrize("beta", [0.1, 1.0, 10.0])
def test_exact_mean_vanishes_for_a_goal_at_the_start(beta):
    # mirroring a sequence keeps its utility, so the expectation is zero by symmetry
    np.testing.assert_allclose(exact_softmax_mean(ToyProblem(goal=0.0), beta), 0.0, atol=1e-15)


@pytest.mark.parametrize("beta", [0.1, 1.0, 10.0])
def test_sampled_mean_converges(beta):
    toy = ToyProblem()
    exact = exact_softmax_mean(toy, beta)
    est = sampled_softmax_mean(toy, beta, 10_000, np.random.default_rng(3))
    assert max_relative_error(est, exact) <= 2e-2


def test_suite_report_shape():
    report = run_oracle_suite()
    assert report.passed
    names = [c.name for c in report.checks]
    assert sum(n.startswith("softmax_equivalence beta=") for n in names) == 3
    assert "shift_invariance" in names and "ne_gap_at_optimum" in names
    data = json.loads(report.to_json())
    assert data["tolerance"] == 0.02 and len(data["checks"]) == len(names)
    assert all(line.startswith(("PASS", "FAIL")) for line in report.lines()[:-1])


def test_suite_rejects_bad_tolerance():
    with pytest.raises(ValueError):
        run_oracle_suite(tolerance=0.0)
