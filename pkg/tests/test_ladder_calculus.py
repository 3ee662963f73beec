import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import SEED, make_m1
from oracles import kendall_excursion_cells, m1_ruin, volterra_ruin_richardson
from ruinlab.errors import DivergentIntegral, InsufficientSamples, RegimeMismatch
from ruinlab.ladder_calculus import (
    DescendingRenewalEstimate,
    asymptotic_ruin,
    bivariate_ladder_measure,
    cramer_constant,
    dual_kappa,
    dual_root,
    excursion_joint_law,
    finite_level_law,
    kappa,
    ladder_laplace_functional,
    ladder_system,
    renewal_function,
    ruin_probability,
    tilted_renewal,
    vigon_density_quadrature,
    vigon_ladder_measure,
)
from ruinlab.path_sim import simulate_descending_ladder_batch, simulate_excursion_batch
from ruinlab.risk_model import Exponential, Gamma, MixedExponential, RiskModel
from ruinlab.rng import StreamSeed

# renewal-table values for M2; the Volterra oracle reproduces them (see below)
M2_RUIN = {
    1.0: 8.52292791e-2,
    10.0: 6.52433770e-7,
    25.0: 1.45309498e-14,
    40.0: 9.25161480e-22,
}


def test_m1_ruin_closed_form(s1):
    u = np.arange(0.0, 21.0)
    assert np.max(np.abs(ruin_probability(s1, u) - m1_ruin(u))) < 1e-6
    assert np.max(np.abs(ruin_probability(s1, u) / m1_ruin(u) - 1)) < 1e-9


def test_m1_constants(s1):
    assert s1.alpha == pytest.approx(0.5)
    assert s1.rho == 0.5 and s1.q == pytest.approx(0.5) and s1.pi_H_mass == pytest.approx(0.5)
    assert s1.hatV_density == pytest.approx(0.5)
    assert s1.m_star == pytest.approx(2.0, rel=1e-10)
    assert cramer_constant(s1) == pytest.approx(0.5, abs=1e-10)
    assert s1.V_zero == pytest.approx(1.0) and s1.V_infinity == pytest.approx(2.0)


def test_m2_ruin_frozen(s2):
    for u, v in M2_RUIN.items():
        assert float(ruin_probability(s2, u)) == pytest.approx(v, rel=1e-8)
    assert float(ruin_probability(s2, 0.0)) == pytest.approx(s2.rho, abs=1e-15)


def test_m2_ruin_against_volterra_oracle(m2, s2):
    x, psi = volterra_ruin_richardson(0.5, 1.0, m2.claims.mean, m2.claims.sf, 25.0, 0.005)
    for u in (0.0, 1.0, 5.0, 10.0, 25.0):
        i = int(round(u / 0.005))
        assert float(ruin_probability(s2, u)) == pytest.approx(psi[i], rel=1e-5)


@pytest.mark.parametrize("claims", [Gamma(2.0, 2.0), MixedExponential([0.4, 0.6], [0.5, 3.0])], ids=["gamma", "mixexp"])
def test_cramer_models_against_volterra_oracle(claims):
    m = RiskModel(1.5 * claims.mean, 1.0, claims)
    s = ladder_system(m)
    x, psi = volterra_ruin_richardson(m.premium_rate, 1.0, claims.mean, claims.sf, 10.0, 0.005)
    for u in (0.0, 2.0, 10.0):
        assert float(ruin_probability(s, u)) == pytest.approx(psi[int(round(u / 0.005))], rel=2e-5)
    # the Lundberg asymptotic is approached from the renewal table
    assert float(ruin_probability(s, 30.0) / asymptotic_ruin(s, 30.0)) == pytest.approx(1.0, rel=1e-3)


def test_kappa_values(s1):
    assert kappa(s1, 0.0, -0.5) == pytest.approx(0.0, abs=1e-14)
    assert kappa(s1, 0.0, -0.25) == pytest.approx(1 / 3, abs=1e-14)
    assert kappa(s1, 0.0, 0.0) == pytest.approx(s1.q)
    with pytest.raises(DivergentIntegral):
        kappa(s1, 0.0, -1.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 3.0), st.floats(0.0, 0.95))
def test_wiener_hopf_identity(a, z):
    s = ladder_system(make_m1(), grid_end=20.0)
    lhs = kappa(s, a, -z) * dual_kappa(s.model, a, z)
    assert lhs == pytest.approx(a - s.model.psi(z), abs=1e-10)


def test_dual_root(m1):
    # psi(-t) = t/(1+t)... -> psi(-t) = -t/(1+t) + 2t for Exp(1), c=2
    for a in (0.1, 1.0, 5.0):
        t = dual_root(m1, a)
        assert -t / (1 + t) + 2 * t == pytest.approx(a, abs=1e-12)
    assert dual_root(m1, 0.0) == 0.0


def test_vigon_forms_agree(m2):
    g = vigon_ladder_measure(m2)
    for x in (0.0, 0.7, 4.0):
        assert np.interp(x, g.grid, g.density) == pytest.approx(vigon_density_quadrature(m2, x), rel=1e-8)
    assert g.total_mass == pytest.approx(m2.rho, rel=1e-10)


def test_renewal_measure_and_tilted_renewal(s1):
    V = s1.V
    assert V.atom_at_zero == pytest.approx(1.0)
    x = np.array([1.0, 5.0, 15.0])
    assert np.allclose(V.tail_at(x), np.exp(-x / 2), rtol=1e-8)
    xs, vstar = tilted_renewal(s1)
    i = np.searchsorted(xs, 30.0)
    assert (vstar[i + 1] - vstar[i - 1]) / (xs[i + 1] - xs[i - 1]) == pytest.approx(1 / s1.m_star, rel=1e-4)
    fresh = renewal_function(s1, np.linspace(0.0, 10.0, 2001))
    assert np.allclose(fresh.tail_at(x[:2]), np.exp(-x[:2] / 2), rtol=1e-5, atol=0)
    with pytest.raises(ValueError):
        renewal_function(s1, np.array([0.0, 0.5, 1.0]))


def test_grid_measure_export(s1):
    V = s1.V
    text = V.to_csv()
    assert text.splitlines()[0].startswith("x,")
    doc = V.to_json()
    json.dumps(doc)


def test_scaled_system_invariance(s1):
    for k in (0.5, 2.0, 10.0):
        t = s1.scaled(k)
        assert t.q == pytest.approx(k * s1.q) and t.pi_H_mass == pytest.approx(k * s1.pi_H_mass)
        assert float(ruin_probability(t, 7.0)) == pytest.approx(float(ruin_probability(s1, 7.0)), abs=1e-14)
        assert cramer_constant(t) == pytest.approx(cramer_constant(s1), abs=1e-14)


def test_step_guard():
    with pytest.raises(ValueError):
        ladder_system(make_m1(), step=0.05)


def test_cramer_constant_needs_cramer(s2):
    with pytest.raises(RegimeMismatch):
        cramer_constant(s2)


def test_finite_level_law_m1(s1):
    law = finite_level_law(s1, 10.0)
    assert law.ruin_probability == pytest.approx(0.5 * math.exp(-5))
    for y in (0.5, 2.0, 7.0):
        assert law.undershoot_max_cdf(y) == pytest.approx(1 - math.exp(-y / 2), abs=1e-6)
    assert law.undershoot_max_cdf(10.0) == pytest.approx(1.0, abs=1e-6)
    for x in (0.0, 1.0, 3.0):
        assert law.overshoot_tail(x) == pytest.approx(math.exp(-x), abs=1e-6)


def test_finite_level_law_m2_against_simulation(m2, s2):
    from ruinlab.estimator import BatchPlan, Indicator, run_conditional_estimate
    law = finite_level_law(s2, 3.0)
    r = run_conditional_estimate(m2, 3.0, Indicator("overshoot", -math.inf, 1.0), BatchPlan(20_000, 10, SEED), "plain")
    assert abs(r.estimate - (1 - law.overshoot_tail(1.0))) < 3 * r.std_error


def test_asymptotic_ruin_ce(s2):
    # ratio drifts towards 1 slowly; monotone decrease over the table
    r = [float(ruin_probability(s2, u) / asymptotic_ruin(s2, u)) for u in (10.0, 25.0, 40.0)]
    assert r[0] > r[1] > r[2] > 1.0


@pytest.fixture(scope="module")
def m1_ladders(m1):
    return simulate_descending_ladder_batch(m1, 20_000, 200.0, StreamSeed(SEED, 20))


def test_ladder_laplace_functional_m1(m1_ladders):
    # V_hat is (1/c) P(T_v in dt) dv; for a = 0 its transform in v is 1/(c z)
    m, se = ladder_laplace_functional(m1_ladders, 0.0, 0.5)
    assert abs(m - 1.0) < 3 * se + 1e-3
    # with a > 0: (1/c) / (z + Phi(a)) = 1 / kappa_hat(a, z)
    a, z = 0.7, 0.2
    m, se = ladder_laplace_functional(m1_ladders, a, z)
    assert abs(m - 1.0 / dual_kappa(make_m1(), a, z)) < 3 * se


def test_excursion_law_matches_kendall_oracle(m1, m1_ladders):
    t_edges = [0.0, 0.5, 1.5, 3.0, 8.0, 200.0]
    z_edges = [0.0, 0.5, 1.0, 2.0, 4.0, math.inf]
    x_edges = [0.0, 0.25, 0.75, 1.5, 3.0, math.inf]
    est = DescendingRenewalEstimate(m1_ladders, np.array(t_edges))
    mass, se = excursion_joint_law(m1, est, z_edges, x_edges)
    oracle = kendall_excursion_cells(t_edges[:-1] + [math.inf], z_edges, x_edges)
    assert mass.sum() == pytest.approx(0.5, abs=1e-9)
    z = (mass - oracle) / np.maximum(se, 1e-12)
    assert np.all(np.abs(z[se > 0]) < 4.0)
    assert np.all(mass[se == 0] == pytest.approx(oracle[se == 0], abs=1e-9))


def test_bivariate_ladder_measure_m1(m1, m1_ladders):
    b = bivariate_ladder_measure(m1, m1_ladders, np.array([0.0, 1.0, 4.0, 200.0]), np.array([0.0, 1.0, 2.0]))
    assert b.total_mass == pytest.approx(0.5, abs=1e-9)
    # spatial marginal of Pi_H = 0.5 e^{-x} dx
    assert np.allclose(b.spatial_marginal, 0.5 * np.array([1 - math.exp(-1), math.exp(-1) - math.exp(-2), math.exp(-2)]), atol=1e-9)
    with pytest.raises(InsufficientSamples):
        bivariate_ladder_measure(m1, m1_ladders, np.array([0.0, 0.001, 200.0]), np.array([0.0]), min_points=100)


def test_descending_estimate_needs_horizon(m1_ladders):
    with pytest.raises(InsufficientSamples):
        DescendingRenewalEstimate(m1_ladders, np.array([0.0, 300.0]))
