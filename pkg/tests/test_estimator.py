import math

import numpy as np
import pytest

from conftest import SEED
from oracles import m1_ruin
from ruinlab.errors import EmptyWindow, RegimeMismatch
from ruinlab.estimator import (
    BatchPlan,
    EstimatorResult,
    ExpMoment,
    Indicator,
    Window,
    compare_to_limit,
    convergence_ladder,
    estimate_ruin_probability,
    reduce_batches,
    run_conditional_estimate,
    simulate_plan,
)
from ruinlab.limit_laws import overshoot_limit, undershoot_max_limit


def test_result_verdicts():
    r = EstimatorResult(1.0, 0.1, 100.0, 10, 1000, 1, 0, "plain", 5.0)
    assert r.verdict is None and r.z_score is None
    assert r.against(1.25).verdict == "pass"
    assert r.against(1.35).verdict == "fail"
    assert r.against(1.35, n_se=4).verdict == "pass"
    lo, hi = r.interval
    assert hi - lo == pytest.approx(2 * 1.959963984540054 * 0.1)
    with pytest.raises(ValueError):
        EstimatorResult(1.0, -0.1, 1.0, 1, 1, 1, 0, "plain", 0.0)


def test_plan_streams_are_disjoint():
    p = BatchPlan(10, 5, 7)
    q = p.shifted(5)
    a = {s.stream_index for s in p.streams()}
    b = {s.stream_index for s in q.streams()}
    assert a.isdisjoint(b) and len(a) == 5
    with pytest.raises(ValueError):
        BatchPlan(0, 1, 7)


def test_plain_ruin_estimate(m1):
    r = estimate_ruin_probability(m1, 2.0, BatchPlan(20_000, 5, SEED), "plain")
    assert abs(r.estimate - m1_ruin(2.0)) < 3 * r.std_error
    assert r.n_paths == 100_000


def test_tilted_ruin_estimate_is_calibrated(m1):
    # per-batch z-scores against the closed form should be standard normal
    from scipy import stats
    plan = BatchPlan(10_000, 100, SEED)
    batches = simulate_plan(m1, 20.0, plan, "tilted")
    target = float(m1_ruin(20.0))
    w = np.array([b.ruin_weights() for b in batches])
    z = (w.mean(axis=1) - target) / (w.std(axis=1, ddof=1) / 100.0)
    assert stats.kstest(z, "norm").pvalue > 1e-3
    pooled = estimate_ruin_probability(m1, 20.0, plan, "tilted").against(target)
    assert pooled.verdict == "pass"
    assert np.all(w.std(axis=1, ddof=1) / 100.0 / target < 0.03)


def test_method_regime_guards(m1, m2):
    with pytest.raises(RegimeMismatch):
        simulate_plan(m2, 5.0, BatchPlan(10, 1, 1), "tilted")
    with pytest.raises(RegimeMismatch):
        simulate_plan(m1, 5.0, BatchPlan(10, 1, 1), "mixture")
    with pytest.raises(ValueError):
        simulate_plan(m1, 5.0, BatchPlan(10, 1, 1), "magic")


def test_worker_count_does_not_change_results(m1):
    plan = BatchPlan(500, 4, SEED)
    a = simulate_plan(m1, 5.0, plan, "tilted", workers=1)
    b = simulate_plan(m1, 5.0, plan, "tilted", workers=2)
    for x, y in zip(a, b):
        assert np.array_equal(x.weight, y.weight) and np.array_equal(x.tau, y.tau)


def test_conditional_functionals(m1):
    plan = BatchPlan(2000, 50, SEED, first_stream=500)
    r = run_conditional_estimate(m1, 20.0, Indicator("overshoot", 0.0, 1.0), plan, "tilted")
    assert abs(r.estimate - (1 - math.exp(-1))) < 3 * r.std_error
    batches = simulate_plan(m1, 20.0, plan, "tilted")
    r2 = reduce_batches(batches, ExpMoment("overshoot", 0.25), "tilted", plan, 20.0)
    assert abs(r2.estimate - 1 / 0.75) < 3 * r2.std_error
    win = Window(lambda y: np.exp(-y), 0.0, 1.0)
    r3 = reduce_batches(batches, win, "tilted", plan, 20.0)
    # undershoot of the max ~ Exp(1/2) independent of the Exp(1) overshoot in the limit
    assert abs(r3.estimate - (1 / 3) * (1 - math.exp(-1))) < 3 * r3.std_error
    one = run_conditional_estimate(m1, 20.0, None, BatchPlan(100, 3, SEED), "tilted")
    assert one.estimate == pytest.approx(1.0)


def test_compare_to_limit_on_exact_samples(s1):
    law = overshoot_limit(s1)
    rng = np.random.default_rng(0)
    d = compare_to_limit(rng.exponential(size=20_000), law, n_boot=50)
    assert d.ks < 0.02 and d.tv < 0.05
    bad = compare_to_limit(rng.exponential(1.3, size=20_000), law, n_boot=20)
    assert bad.ks > 0.05
    w = compare_to_limit(rng.exponential(size=5000), law, window=(0.0, 2.0), weights=np.ones(5000), n_boot=20)
    assert w.window == (0.0, 2.0) and w.law_window_mass == pytest.approx(1 - math.exp(-2))


def test_compare_to_limit_guards(s2):
    law = undershoot_max_limit(s2)
    with pytest.raises(ValueError):
        compare_to_limit(np.ones(10), law)
    with pytest.raises(EmptyWindow):
        compare_to_limit(np.full(10, 9.0), law, window=(0.0, 5.0))


def test_convergence_ladder_m1(m1):
    tab = convergence_ladder(m1, Indicator("overshoot", 0.0, 1.0), (5.0, 10.0, 20.0),
                             BatchPlan(1000, 50, SEED, first_stream=900), "tilted")
    assert [r.u for r in tab.results] == [5.0, 10.0, 20.0]
    assert len({r.first_stream for r in tab.results}) == 3
    # exponential overshoot is exact at every level
    assert tab.plateau_from(1 - math.exp(-1)) == 5.0
    assert tab.to_csv().splitlines()[0].startswith("u,estimate,std_error")
