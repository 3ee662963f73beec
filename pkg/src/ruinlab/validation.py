"""Invariant suite run by ``ruinlab validate``.

Each check returns a row (name, kind, value, target, tolerance, status) with
status pass, fail or insufficient.  Statistical checks need at least
``MIN_PATHS`` paths and report insufficient otherwise.  Check i draws from the
stream block starting at ``i * STREAM_BLOCK`` so the checks never share numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from scipy import integrate

from .estimator import (
    BatchPlan,
    ExpMoment,
    Indicator,
    compare_to_limit,
    estimate_ruin_probability,
    run_conditional_estimate,
    simulate_plan,
)
from .ladder_calculus import (
    LadderSystem,
    cramer_constant,
    dual_kappa,
    finite_level_law,
    kappa,
    ladder_system,
    ruin_probability,
    vigon_density_quadrature,
)
from .limit_laws import (
    edpf_limit_convolution,
    edpf_limit_cramer,
    excursion_moment_identity,
    overshoot_limit,
    q_infinity_mass,
    quintuple_limit_density,
    undershoot_max_limit,
    undershoot_x_limit,
)
from .path_sim import FirstPassageBatch, occupation_histogram, simulate_excursion_batch
from .risk_model import RiskModel, laplace_exponent
from .rng import StreamSeed

__all__ = ["CheckResult", "ValidationContext", "run_validation", "MIN_PATHS"]

MIN_PATHS = 10_000
STREAM_BLOCK = 1_000


@dataclass(frozen=True)
class CheckResult:
    name: str
    kind: str
    value: float
    target: float
    tolerance: float
    status: str

    def row(self) -> list:
        return [self.name, self.kind, self.value, self.target, self.tolerance, self.status]


@dataclass
class ValidationContext:
    model: RiskModel
    system: LadderSystem
    seed: int
    paths: int
    batches: int
    u_check: float
    workers: int | None = None

    def plan(self, index: int, paths: int | None = None) -> BatchPlan:
        n = self.paths if paths is None else paths
        per = max(1, n // self.batches)
        return BatchPlan(per, self.batches, self.seed, index * STREAM_BLOCK)

    def stream(self, index: int) -> StreamSeed:
        return StreamSeed(self.seed, index * STREAM_BLOCK)


def _abs(name, value, target, tol, kind="analytic"):
    ok = abs(value - target) <= tol
    return CheckResult(name, kind, float(value), float(target), float(tol), "pass" if ok else "fail")


def _se(name, value, se, target, n_se=3.0):
    tol = n_se * se
    ok = abs(value - target) <= tol
    return CheckResult(name, "statistical", float(value), float(target), float(tol), "pass" if ok else "fail")


def _insufficient(name, target=math.nan):
    return CheckResult(name, "statistical", math.nan, float(target), math.nan, "insufficient")


def check_psi_origin(ctx):
    return _abs("psi(0) = 0", laplace_exponent(ctx.model, 0.0), 0.0, 0.0)


def check_psi_convex(ctx):
    hi = ctx.system.alpha if ctx.system.alpha is not None else 1.0
    th = np.linspace(-1.0, 0.95 * hi, 6)
    h = 1e-3
    second = [laplace_exponent(ctx.model, t + h) - 2 * laplace_exponent(ctx.model, t) + laplace_exponent(ctx.model, t - h)
              for t in th]
    worst = min(second) / h**2
    return CheckResult("psi convex", "analytic", worst, 0.0, 1e-6, "pass" if worst >= -1e-6 else "fail")


def check_psi_slope(ctx):
    h = 1e-6
    fd = (laplace_exponent(ctx.model, h) - laplace_exponent(ctx.model, -h)) / (2 * h)
    return _abs("psi'(0) = mean drift", fd, ctx.model.mean_drift, 1e-6)


def check_ruin_at_zero(ctx):
    return _abs("P(tau(0) < inf) = rho", ruin_probability(ctx.system, 0.0), ctx.model.rho, 1e-12)


def check_wiener_hopf(ctx):
    s = ctx.system
    worst = 0.0
    for a in (0.1, 0.5, 1.0, 2.0):
        for z in np.linspace(0.05, 0.9 * s.alpha, 5):
            lhs = kappa(s, a, -z) * dual_kappa(s.model, a, z, scale=s.scale)
            worst = max(worst, abs(lhs - (a - laplace_exponent(s.model, z))))
    return _abs("Wiener-Hopf identity (20 points)", worst, 0.0, 1e-10)


def check_kappa_at_alpha(ctx):
    s = ctx.system
    k0 = kappa(s, 0.0, -s.alpha)
    if s.regime.is_cramer:
        return _abs("kappa(0,-alpha) = 0", k0, 0.0, 1e-10)
    return CheckResult("kappa(0,-alpha) > 0", "analytic", k0, 0.0, 0.0, "pass" if k0 > 0 else "fail")


def check_vigon(ctx):
    s = ctx.system
    x = np.array([0.1, 0.5, 1.0, 2.0])
    quad = np.array([vigon_density_quadrature(s.model, xi, s.scale) for xi in x])
    worst = float(np.max(np.abs(quad - np.asarray(s.pi_H_density(x)))))
    return _abs("ladder height density by quadrature", worst, 0.0, 1e-8)


def check_overshoot_mass(ctx):
    return _abs("overshoot limit mass = 1", overshoot_limit(ctx.system).total_mass, 1.0, 1e-6)


def check_undershoot_mass(ctx):
    s = ctx.system
    return _abs("undershoot limit mass = 1 - kappa(0,-alpha)/q",
                undershoot_max_limit(s).total_mass, q_infinity_mass(s), 1e-6)


def check_undershoot_path_mass(ctx):
    s = ctx.system
    return _abs("path undershoot limit mass", undershoot_x_limit(s).total_mass, q_infinity_mass(s), 1e-6)


def check_qmass(ctx):
    s = ctx.system
    qm = q_infinity_mass(s)
    cub = quintuple_limit_density(s).total_mass()
    if s.regime.is_cramer:
        return _abs("joint limit mass = 1", cub, 1.0, 1e-6)
    return _abs("joint limit mass = 1 - kappa(0,-alpha)/q in (0,1)", cub, qm, 1e-6)


def check_quintuple_marginal(ctx):
    s = ctx.system
    q = quintuple_limit_density(s)
    y = np.linspace(0.0, 5.0, 21)
    d = float(np.max(np.abs(q.marginal_y(y) - undershoot_max_limit(s).density(y))))
    return _abs("joint density y-marginal", d, 0.0, 1e-6)


def _scaled_outputs(system: LadderSystem) -> np.ndarray:
    x = np.array([0.5, 1.0, 3.0])
    out = [ruin_probability(system, 5.0), q_infinity_mass(system)]
    out += list(overshoot_limit(system).density(x)) + list(undershoot_max_limit(system).density(x))
    if system.regime.is_cramer:
        out += [cramer_constant(system), edpf_limit_cramer(system, -0.2, 0.25 * system.alpha, 0.3)]
    else:
        out += [edpf_limit_convolution(system, None, 0.5 * system.alpha, 0.3)]
    return np.array(out, dtype=float)


def check_normalisation(ctx):
    base = _scaled_outputs(ctx.system)
    worst = 0.0
    for k in (0.5, 2.0, 10.0):
        worst = max(worst, float(np.max(np.abs(_scaled_outputs(ctx.system.scaled(k)) - base))))
    return _abs("local-time scale invariance", worst, 0.0, 1e-10)


def check_edpf_quadrature(ctx):
    s = ctx.system
    law = overshoot_limit(s)
    eta = 0.5 * s.alpha
    if s.regime.is_cramer:
        val = edpf_limit_cramer(s, 0.0, eta, 0.0)
    else:
        val = edpf_limit_convolution(s, None, eta, 0.0)

    def f(x):
        d = float(law.density(x))
        return math.exp(math.log(d) + eta * x) if d > 0 else 0.0

    quad = integrate.quad(f, 0, 50, epsabs=0, epsrel=1e-12, limit=400)[0]
    quad += integrate.quad(f, 50, np.inf, epsabs=0, epsrel=1e-10, limit=400)[0]
    return _abs("EDPF formula vs overshoot law", val, quad, 1e-6)


def check_cramer_flat(ctx):
    s = ctx.system
    if not s.regime.is_cramer:
        return None
    u = np.array([5.0, 10.0, 20.0])
    vals = np.exp(s.alpha * u) * ruin_probability(s, u)
    tol = 1e-6 if s.model.claims.kind == "exponential" else 1e-2
    return _abs("e^{alpha u} P(ruin) at u = 20 vs constant", float(vals[-1]), cramer_constant(s), tol)


def check_ruin_mc(ctx, index):
    name = f"P(ruin) at u = {ctx.u_check:g}, importance sampling"
    target = float(ruin_probability(ctx.system, ctx.u_check))
    if ctx.paths < MIN_PATHS:
        return _insufficient(name, target)
    method = "tilted" if ctx.system.regime.is_cramer else "mixture"
    r = estimate_ruin_probability(ctx.model, ctx.u_check, ctx.plan(index), method, ctx.workers)
    return _se(name, r.estimate, r.std_error, target)


def check_overshoot_mc(ctx, index):
    s = ctx.system
    if s.regime.is_cramer:
        name = "tilted overshoot at u = 20: KS vs limit < 0.02"
        if ctx.paths < MIN_PATHS:
            return _insufficient(name, 0.02)
        b = FirstPassageBatch.concat(simulate_plan(ctx.model, 20.0, ctx.plan(index), "tilted", ctx.workers))
        r = b.ruined
        d = compare_to_limit(b.overshoot[r], overshoot_limit(s), weights=b.weight[r], n_boot=0)
        return CheckResult(name, "statistical", d.ks, 0.02, 0.02, "pass" if d.ks < 0.02 else "fail")
    name = f"P(overshoot <= 1 | ruin) at u = {ctx.u_check:g} vs exact finite-level law"
    law = finite_level_law(s, ctx.u_check)
    target = 1.0 - law.overshoot_tail(1.0)
    if ctx.paths < MIN_PATHS:
        return _insufficient(name, target)
    r = run_conditional_estimate(ctx.model, ctx.u_check, Indicator("overshoot", -math.inf, 1.0),
                                 ctx.plan(index), "mixture", ctx.workers)
    return _se(name, r.estimate, r.std_error, target)


def check_plain_vs_tilted(ctx, index):
    s = ctx.system
    if not s.regime.is_cramer:
        return None
    name = "plain vs tilted E[e^{-delay} | ruin] at u = 8"
    if ctx.paths < MIN_PATHS:
        return _insufficient(name, 0.0)
    f = ExpMoment("passage_delay", -1.0)
    a = run_conditional_estimate(ctx.model, 8.0, f, ctx.plan(index), "plain", ctx.workers)
    b = run_conditional_estimate(ctx.model, 8.0, f, ctx.plan(index).shifted(STREAM_BLOCK // 2), "tilted", ctx.workers)
    se = math.hypot(a.std_error, b.std_error)
    return _se(name, a.estimate - b.estimate, se, 0.0)


def _excursions(ctx, index, tilt=None):
    return simulate_excursion_batch(ctx.model, ctx.paths, 1e4, ctx.stream(index), tilt=tilt)


def check_excursion_completion(ctx, index):
    name = "P(tau(0) < inf) = rho from excursions"
    if ctx.paths < MIN_PATHS:
        return _insufficient(name, ctx.model.rho)
    e = _excursions(ctx, index)
    p = float(e.completed.mean())
    se = math.sqrt(p * (1 - p) / len(e))
    return _se(name, p, se, ctx.model.rho)


def check_excursion_terminal(ctx, index):
    name = "excursion terminal law vs Pi_H / |Pi_H|: TV < 0.02"
    if ctx.paths < MIN_PATHS:
        return _insufficient(name, 0.02)
    s = ctx.system
    e = _excursions(ctx, index)
    x = e.terminal[e.completed]
    edges = np.linspace(0.0, float(np.quantile(x, 0.99)), 51)
    tail = lambda t: np.asarray(s.pi_H_tail(t)) / s.pi_H_mass
    law = np.append(-np.diff(tail(edges)), tail(edges[-1]))
    emp = np.append(np.histogram(x, bins=edges)[0], np.sum(x > edges[-1])) / x.size
    tv = 0.5 * float(np.sum(np.abs(emp - law)))
    bound = 0.02 if ctx.paths >= 100_000 else 0.02 * math.sqrt(100_000 / ctx.paths)
    return CheckResult(name, "statistical", tv, 0.0, bound, "pass" if tv < bound else "fail")


def check_occupation(ctx, index):
    name = "occupation density before tau(0) on (0, 3] = hat-V density"
    target = ctx.system.hatV_density
    if ctx.paths < MIN_PATHS:
        return _insufficient(name, target)
    h = occupation_histogram(ctx.model, np.array([0.0, 3.0]), ctx.paths, ctx.stream(index))
    return _se(name, float(h.density[0]), float(h.density_std_error[0]), target)


def check_moment_identity(ctx, index):
    name = "|Pi_H| E(X e^{alpha X}; tau(0) < inf) = P(tau(0) < inf) m*"
    s = ctx.system
    if not s.regime.is_cramer:
        return None
    if ctx.paths < MIN_PATHS:
        return _insufficient(name, s.rho * s.m_star)
    lhs, se, rhs = excursion_moment_identity(s, _excursions(ctx, index, tilt=s.alpha))
    return _se(name, lhs, se, rhs)


ANALYTIC: list[Callable] = [
    check_psi_origin, check_psi_convex, check_psi_slope, check_ruin_at_zero, check_wiener_hopf,
    check_kappa_at_alpha, check_vigon, check_overshoot_mass, check_undershoot_mass,
    check_undershoot_path_mass, check_qmass, check_quintuple_marginal, check_normalisation,
    check_edpf_quadrature, check_cramer_flat,
]
STATISTICAL: list[Callable] = [
    check_ruin_mc, check_overshoot_mc, check_plain_vs_tilted, check_excursion_completion,
    check_excursion_terminal, check_occupation, check_moment_identity,
]


def run_validation(model: RiskModel, seed: int, paths: int, batches: int, u_check: float,
                   workers: int | None = None, system: LadderSystem | None = None) -> list[CheckResult]:
    system = ladder_system(model) if system is None else system
    ctx = ValidationContext(model, system, seed, paths, batches, u_check, workers)
    rows = []
    for f in ANALYTIC:
        r = f(ctx)
        if r is not None:
            rows.append(r)
    for i, f in enumerate(STATISTICAL, start=1):
        r = f(ctx, i)
        if r is not None:
            rows.append(r)
    return rows
