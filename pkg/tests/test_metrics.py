import io
import json

import numpy as np
import pytest

from fairsurvey.allocator import DesignInstance, standard_allocation
from fairsurvey.metrics import (
    coefficient_of_variation,
    confidence_compliance,
    diversity_index,
    estimator_variances,
    fairness_report,
    fairness_xi,
    rse,
)
from fairsurvey.population import count_matrix, group_stats
from fairsurvey.simulator import replicate


def test_fairness_xi():
    assert fairness_xi([4, 1, 9]) == 8
    assert fairness_xi([2.5, 2.5, 2.5]) == 0
    assert fairness_xi([4 + 7, 1 + 7, 9 + 7]) == 8
    with pytest.raises(ValueError):
        fairness_xi([1.0])


def test_compliance_examples():
    gamma = [1.0]
    assert confidence_compliance([np.zeros(20)], gamma, 0.1) == [(0.0, True)]
    assert confidence_compliance([np.full(20, 5.0)], gamma, 0.1) == [(1.0, False)]
    errors = np.r_[np.full(95, 0.5), np.full(5, 2.0)]
    assert confidence_compliance([errors], gamma, 0.1) == [(0.05, True)]
    rate, ok = confidence_compliance([[np.nan, 0.0]], gamma, 0.1)[0]
    assert rate == 0.5 and not ok


def test_rse():
    assert rse(2, 4, 100) == 0.05
    assert rse(2, 4, 400) == pytest.approx(rse(2, 4, 100) / 2)
    assert rse(0, 4, 10) == 0
    with pytest.raises(ValueError):
        rse(1, 0, 10)


def test_coefficient_of_variation():
    cov = coefficient_of_variation({"White": (10.0, 13.3), "flat": (5.0, 0.0)})
    assert cov["White"] == pytest.approx(1.33) and cov["flat"] == 0
    k = 37.0
    assert coefficient_of_variation({"g": (10.0 * k, 13.3 * k)})["g"] == pytest.approx(1.33, rel=1e-15)


def test_diversity_index():
    assert diversity_index([1000]) == 0
    assert diversity_index([500, 500]) == 0.5
    # Connecticut exact counts (no-privacy row)
    counts = [2039731, 315568, 7571, 143584, 215150, 295844]
    assert diversity_index(counts) == pytest.approx(0.52, abs=0.005)


def test_estimator_variances_skip_nan():
    est = np.array([[1.0, np.nan], [3.0, np.nan], [np.nan, 2.0]])
    v = estimator_variances(est)
    assert v[0] == 1.0 and v[1] == 0.0


def test_fairness_report_round_trip(small_pop):
    prior, truth = small_pop
    inst = DesignInstance.build(count_matrix(prior), np.zeros(prior.n_groups))
    a = standard_allocation(inst, 0.05)
    rep = replicate(truth, a, 0.6, 0.2, 50, seed=3)
    stats = group_stats(prior)
    gamma = [0.1 * stats[g].mean for g in prior.group_labels]
    fr = fairness_report(rep, gamma, 0.1, a.cost, baseline_cost=a.cost)
    assert fr.relative_cost == 100.0
    assert fr.xi == pytest.approx(fairness_xi(fr.variance))
    rel = rep.estimates / rep.truth
    assert fr.variance[0] == pytest.approx(np.var(rel[:, 0]))
    absolute = fairness_report(rep, gamma, 0.1, a.cost, relative=False)
    assert absolute.variance[0] == pytest.approx(fr.variance[0] * rep.truth[0] ** 2)
    d = json.loads(json.dumps(fr.to_dict()))
    assert set(d["groups"]) == set(prior.group_labels)
    buf = io.StringIO()
    fr.write_csv(buf)
    assert buf.getvalue().splitlines()[-1].startswith("ALL,")
