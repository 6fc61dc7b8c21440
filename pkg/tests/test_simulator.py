import io
import json

import numpy as np
import pytest

from fairsurvey.allocator import DesignInstance, make_allocation, standard_allocation
from fairsurvey.population import GroupSpec, SyntheticSpec, count_matrix, generate_synthetic, group_stats
from fairsurvey.simulator import replicate, run_survey


def _inst(frame, **kw):
    return DesignInstance.build(count_matrix(frame), np.zeros(frame.n_groups), **kw)


def test_census_without_failures_is_exact(small_pop, rng):
    _, truth = small_pop
    inst = _inst(truth)
    a = make_allocation(inst, np.ones(truth.n_groups), np.zeros(truth.n_regions), "census")
    out = run_survey(truth, a, 0.0, 0.0, rng)
    stats = group_stats(truth)
    np.testing.assert_array_equal(out.successes, truth.group_sizes())
    np.testing.assert_allclose(out.estimates, [stats[g].mean for g in truth.group_labels], rtol=1e-12)


def test_empty_allocation_has_undefined_estimates(small_pop, rng):
    _, truth = small_pop
    a = make_allocation(_inst(truth), np.zeros(truth.n_groups), np.zeros(truth.n_regions), "none")
    out = run_survey(truth, a, 0.6, 0.2, rng)
    assert out.successes.sum() == 0 and np.all(np.isnan(out.estimates))
    assert not out.defined.any() and out.realized_cost(1, 500) == 0


def test_mean_successes_match_expectation(small_pop):
    # phase 1 at 5% plus two opened regions
    _, truth = small_pop
    inst = _inst(truth, f1=0.6, f2=0.2, g=0.1)
    z = np.zeros(truth.n_regions)
    z[[0, 7]] = 1
    a = make_allocation(inst, np.full(truth.n_groups, 0.05), z, "mixed")
    rep = replicate(truth, a, 0.6, 0.2, 1000, seed=4, g=0.1)
    mean = rep.successes.mean(axis=0)
    se = rep.successes.std(axis=0, ddof=1) / np.sqrt(rep.trials)
    # overlap between phases removes a few phase-1 respondents; allow 3 SE plus the tiny overlap effect
    overlap = a.contacts * 0.4 * (0.1 * 2 * 500 / truth.size)
    assert np.all(np.abs(mean - a.n) <= 3 * se + overlap)


def test_single_trial_and_determinism(small_pop):
    _, truth = small_pop
    a = standard_allocation(_inst(truth), 0.02)
    one = replicate(truth, a, 0.6, 0.2, 1, seed=9)
    assert one.trials == 1
    r1 = replicate(truth, a, 0.6, 0.2, 20, seed=9)
    r2 = replicate(truth, a, 0.6, 0.2, 20, seed=9)
    np.testing.assert_array_equal(r1.estimates, r2.estimates)
    np.testing.assert_array_equal(r1.successes, r2.successes)
    with pytest.raises(ValueError):
        replicate(truth, a, 0.6, 0.2, 0)


def test_constant_population_has_no_error():
    frame = generate_synthetic(SyntheticSpec((GroupSpec(3000, 9.0, 0.0), GroupSpec(500, 4.0, 0.0)), n_regions=6))
    a = standard_allocation(_inst(frame), 0.1)
    rep = replicate(frame, a, 0.6, 0.2, 30, seed=1)
    ok = rep.successes > 0
    assert np.all(rep.errors()[ok] == 0)


def test_dimension_mismatch(small_pop):
    prior, _ = small_pop
    other = generate_synthetic(SyntheticSpec((GroupSpec(100, 1.0, 1.0),), n_regions=2))
    with pytest.raises(ValueError):
        run_survey(prior, standard_allocation(_inst(other), 0.1), 0.6, 0.2, np.random.default_rng(0))


def test_report_outputs(small_pop):
    _, truth = small_pop
    rep = replicate(truth, standard_allocation(_inst(truth), 0.01), 0.6, 0.2, 5, seed=2)
    buf = io.StringIO()
    rep.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "trial,group_id,successes,estimate,error,relative_error"
    assert len(lines) == 1 + 5 * truth.n_groups
    js = io.StringIO()
    rep.write_json(js)
    assert json.loads(js.getvalue())["trials"] == 5
    assert rep.outcome(0).contacts == rep.contacts[0]
