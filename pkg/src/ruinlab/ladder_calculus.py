"""Ladder processes, renewal functions and ruin probabilities.

Local time at the maximum is normalised so that the descending renewal
measure is V_hat(dv) = (k/c) dv, with k = 1 unless a different ``scale`` is
asked for.  With that choice

    q = k (1 - rho),   Pi_H(dx) = k (lambda/c) P(xi > x) dx,   |Pi_H| = k rho,

and q + |Pi_H| = k is the total rate of the compound Poisson ladder height
process.  Every exported probability, density and mass is a ratio in which
k cancels.

The renewal function V solves V(dx) = k^{-1} sum_n rho^n G^{*n}(dx), G the
integrated-tail law, so q Vbar(u) = P(tau(u) < inf).  It is computed on a
uniform grid by the Panjer recursion for a compound geometric sum.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import integrate, optimize, signal

from .errors import DivergentIntegral, InsufficientSamples, RegimeMismatch, RootBracketFailure
from .path_sim import LadderBatch
from .risk_model import Regime, RegimeClassification, RiskModel, classify_regime, laplace_exponent

__all__ = [
    "GridMeasure",
    "LadderSystem",
    "RenewalTable",
    "DescendingRenewalEstimate",
    "BivariateLadderMeasure",
    "excursion_joint_law",
    "ladder_system",
    "vigon_ladder_measure",
    "vigon_density_quadrature",
    "kappa",
    "dual_kappa",
    "dual_root",
    "renewal_function",
    "ruin_probability",
    "cramer_constant",
    "tilted_renewal",
    "bivariate_ladder_measure",
    "ladder_laplace_functional",
    "FiniteLevelLaw",
    "finite_level_law",
    "asymptotic_ruin",
]

log = logging.getLogger(__name__)

_GL_X, _GL_W = np.polynomial.legendre.leggauss(6)
RICHARDSON_TOL = 1e-5


@dataclass(frozen=True)
class GridMeasure:
    """Atom at zero plus a density on a grid, with the tail mass (x, inf).

    Beyond the last grid point ``closure(x)`` returns the tail mass.
    """

    grid: np.ndarray
    atom_at_zero: float
    density: np.ndarray
    tail: np.ndarray
    closure: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        if g.ndim != 1 or g.size < 2 or np.any(np.diff(g) <= 0):
            raise ValueError("grid must be strictly increasing")
        if self.atom_at_zero < 0 or np.any(self.density < -1e-15) or np.any(self.tail < -1e-15):
            raise ValueError("masses must be nonnegative")

    @property
    def total_mass(self) -> float:
        return float(self.atom_at_zero + self.tail[0]) if self.grid[0] == 0 else float(
            self.atom_at_zero + self.tail_at(0.0)
        )

    def tail_at(self, x):
        """Mass of (x, inf) for x >= 0."""
        xa = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(xa)
        g, t = self.grid, self.tail
        inside = xa <= g[-1]
        if np.any(inside):
            xi = xa[inside]
            pos = t > 0
            if np.all(pos):
                out[inside] = np.exp(np.interp(xi, g, np.log(t)))
            else:
                out[inside] = np.interp(xi, g, t)
        if np.any(~inside):
            if self.closure is None:
                out[~inside] = 0.0
            else:
                out[~inside] = self.closure(xa[~inside])
        return float(out[0]) if np.ndim(x) == 0 else out

    def cdf(self, x):
        return self.total_mass - self.tail_at(x)

    def rows(self):
        for i, x in enumerate(self.grid):
            yield (float(x), float(self.atom_at_zero if i == 0 else 0.0), float(self.density[i]), float(self.tail[i]))

    def to_csv(self, handle=None) -> str:
        buf = io.StringIO() if handle is None else handle
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "atom", "density", "tail"])
        for row in self.rows():
            w.writerow([repr(v) for v in row])
        return buf.getvalue() if handle is None else ""

    def to_json(self) -> dict:
        return {
            "x": self.grid.tolist(),
            "atom": float(self.atom_at_zero),
            "density": self.density.tolist(),
            "tail": self.tail.tolist(),
            "total_mass": self.total_mass,
        }


@dataclass(frozen=True)
class RenewalTable:
    """P(tau(u) < inf) on a uniform grid; independent of the local-time scale."""

    grid: np.ndarray
    ruin: np.ndarray
    step: float
    richardson_gap: float
    escalations: int
    closure_kind: str
    closure_rate: float
    closure_anchor: float

    def closure(self, x):
        """Tail closure beyond the grid: exponential (Cramer) or Levy-tail ratio."""
        x = np.asarray(x, dtype=float)
        L = self.grid[-1]
        if self.closure_kind == "exponential":
            return self.ruin[-1] * np.exp(-self.closure_rate * (x - L))
        if self.closure_kind == "levy_tail":
            return self.closure_anchor * self._levy_tail(x)
        return np.zeros_like(x)

    _levy_tail: Callable = field(default=None, repr=False, compare=False)

    def at(self, u):
        ua = np.atleast_1d(np.asarray(u, dtype=float))
        if np.any(ua < 0):
            raise ValueError("u must be nonnegative")
        out = np.empty_like(ua)
        inside = ua <= self.grid[-1]
        r = self.ruin
        if np.all(r > 0):
            out[inside] = np.exp(np.interp(ua[inside], self.grid, np.log(r)))
        else:
            out[inside] = np.interp(ua[inside], self.grid, r)
        if np.any(~inside):
            out[~inside] = self.closure(ua[~inside])
        return float(out[0]) if np.ndim(u) == 0 else out


def _integrated_tail_masses(model: RiskModel, edges: np.ndarray) -> np.ndarray:
    """Mass of the integrated-tail law on each cell, by 6-point Gauss-Legendre per cell."""
    lo, hi = edges[:-1], edges[1:]
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    vals = np.asarray(model.claims.sf(mid[:, None] + half[:, None] * _GL_X))
    return (vals * _GL_W).sum(axis=1) * half / model.claims.mean


def _panjer_ruin(model: RiskModel, h: float, n: int) -> np.ndarray:
    """Half-atom corrected P(S > j h), S compound geometric with the discretised ladder law.

    Tail sums are accumulated from the far end so that probabilities far
    below machine epsilon keep their relative accuracy.
    """
    rho = model.rho
    edges = (np.arange(n + 1) - 0.5) * h
    edges[0] = 0.0
    g = _integrated_tail_masses(model, edges)
    den = np.concatenate([[1.0 - rho * g[0]], -rho * g[1:]])
    impulse = np.zeros(n)
    impulse[0] = 1.0 - rho
    p = signal.lfilter([1.0], den, impulse)
    above = np.concatenate([np.cumsum(p[::-1])[::-1][1:], [0.0]])
    surv = above + 0.5 * p
    surv[0] = rho
    return surv


def _closure_for(model: RiskModel, regime: RegimeClassification):
    if regime.is_cramer:
        return "exponential", regime.alpha
    if regime.is_convolution_equivalent:
        return "levy_tail", regime.alpha
    return "none", 0.0


def _add_far_tail(model, grid, surv, kind, rate):
    """Add the mass of the discretised sum beyond the grid end, estimated by the closure."""
    L = grid[-1]
    m = int(0.75 * (grid.size - 1))
    if kind == "exponential":
        phi_m, phi_L = math.exp(-rate * grid[m]), math.exp(-rate * L)
    elif kind == "levy_tail":
        phi_m, phi_L = float(model.levy_tail(grid[m])), float(model.levy_tail(L))
    else:
        return surv
    if not phi_m > phi_L:
        return surv
    beyond = surv[m] * phi_L / (phi_m - phi_L)
    out = surv + beyond
    out[0] = surv[0]
    return out


def _renewal_table(model: RiskModel, regime: RegimeClassification, h: float, grid_end: float) -> RenewalTable:
    """Richardson-extrapolated table on [0, grid_end].

    The recursion runs to grid_end / 0.75 and the last quarter is dropped:
    the far-tail estimate is only asymptotically right, and its error
    dominates close to the end of the recursion.
    """
    kind, rate = _closure_for(model, regime)
    escalations = 0
    while True:
        n = int(round(grid_end / (0.75 * h))) + 1
        coarse = np.arange(n) * h
        s1 = _add_far_tail(model, coarse, _panjer_ruin(model, h, n), kind, rate)
        fine = np.arange(2 * n - 1) * (h / 2)
        s2 = _add_far_tail(model, fine, _panjer_ruin(model, h / 2, 2 * n - 1), kind, rate)[::2]
        ruin = (4.0 * s2 - s1) / 3.0
        ruin[0] = model.rho
        window = coarse <= min(grid_end, 40.0 / max(rate, 1e-3))
        gap = float(np.max(np.abs(s2 - s1)[window] / (3.0 * np.maximum(ruin[window], 1e-300))))
        if gap <= RICHARDSON_TOL or escalations >= 2:
            break
        log.warning("renewal grid step %.3g: relative Richardson gap %.2e, halving", h, gap)
        h /= 2
        escalations += 1
    keep = int(round(grid_end / h)) + 1
    coarse, ruin = coarse[:keep], ruin[:keep]
    ruin = np.maximum(ruin, 0.0)
    ruin = np.minimum.accumulate(ruin)
    anchor = 0.0
    if kind == "levy_tail":
        anchor = ruin[-1] / float(model.levy_tail(coarse[-1]))
    return RenewalTable(coarse, ruin, h, gap, escalations, kind, rate, anchor, model.levy_tail)


def default_step(alpha: float | None) -> float:
    return 0.01 if alpha is None else min(0.01, 0.01 / alpha)


def default_grid_end(alpha: float | None) -> float:
    return 60.0 if alpha is None else max(60.0, 50.0 / alpha)


@dataclass(frozen=True)
class LadderSystem:
    """Ladder objects of one model under the normalisation V_hat(dv) = (scale/c) dv."""

    model: RiskModel
    regime: RegimeClassification
    scale: float
    table: RenewalTable = field(repr=False)
    p: float | None = None
    d_H: float = 0.0
    d_Linv: float = 0.0

    @property
    def alpha(self) -> float | None:
        return self.regime.alpha

    @property
    def rho(self) -> float:
        return self.model.rho

    @property
    def q(self) -> float:
        return self.scale * (1.0 - self.rho)

    @property
    def pi_H_mass(self) -> float:
        return self.scale * self.rho

    @property
    def hatV_density(self) -> float:
        return self.scale / self.model.premium_rate

    @property
    def V_infinity(self) -> float:
        return 1.0 / self.q

    @property
    def V_zero(self) -> float:
        return 1.0 / (self.q + self.pi_H_mass)

    def psi(self, theta):
        return laplace_exponent(self.model, theta)

    def pi_H_density(self, x):
        m = self.model
        return self.scale * m.claim_intensity / m.premium_rate * m.claims.sf(x)

    def pi_H_tail(self, x):
        """Pi_H((x, inf)) = k (lambda/c) E(xi - x)^+."""
        m = self.model
        return self.scale * m.claim_intensity / m.premium_rate * m.claims.stop_loss(x)

    @cached_property
    def pi_H(self) -> GridMeasure:
        return vigon_ladder_measure(self.model, scale=self.scale, grid=self.table.grid)

    @cached_property
    def V(self) -> GridMeasure:
        return renewal_function(self)

    def V_tail(self, x):
        """Vbar(x) = V(inf) - V(x)."""
        return self.table.at(x) / self.q

    @cached_property
    def m_star(self) -> float:
        if self.alpha is None:
            return math.inf
        try:
            return _m_star(self)
        except DivergentIntegral:
            return math.inf

    def kappa(self, a: float, b: float) -> float:
        return kappa(self, a, b)

    def dual_kappa(self, a: float, z: float) -> float:
        return dual_kappa(self.model, a, z, scale=self.scale)

    def scaled(self, k: float) -> "LadderSystem":
        """Same model with (q, Pi_H, d_H, d_Linv) multiplied by k."""
        if not k > 0:
            raise ValueError("scale factor must be positive")
        p = None if self.p is None else self.p
        return replace(self, scale=self.scale * k, d_H=self.d_H * k, d_Linv=self.d_Linv * k, p=p)

    def with_excursion_rate(self, p: float) -> "LadderSystem":
        return replace(self, p=p)

    def summary_rows(self) -> list[tuple[str, float, str]]:
        rows = [
            ("scale", self.scale, "local-time normalisation V_hat(dv) = (k/c) dv"),
            ("rho", self.rho, "lambda E[xi] / c"),
            ("q", self.q, "killing rate k (1 - rho)"),
            ("|Pi_H|", self.pi_H_mass, "Vigon: integral of V_hat(dv) Pi_X(v + dx)"),
            ("V(0)", self.V_zero, "1 / (q + |Pi_H|)"),
            ("V(inf)", self.V_infinity, "1 / q"),
            ("hatV density", self.hatV_density, "k / c"),
        ]
        if self.alpha is not None:
            rows.append(("alpha", self.alpha, f"regime: {self.regime.regime.value}"))
            rows.append(("kappa(0,-alpha)", kappa(self, 0.0, -self.alpha), "k [1 - (lambda/c)(M(alpha)-1)/alpha]"))
            rows.append(("m*", self.m_star, "integral of x e^{alpha x} Pi_H(dx)"))
        if self.regime.is_cramer:
            rows.append(("cramer constant", cramer_constant(self), "q / (alpha m*)"))
        if self.p is not None:
            rows.append(("p", self.p, "1 / (1 - E e^{-tau(0)})"))
        return rows


def ladder_system(
    model: RiskModel,
    scale: float = 1.0,
    step: float | None = None,
    grid_end: float | None = None,
    regime: RegimeClassification | None = None,
) -> LadderSystem:
    """Build the ladder system, including the renewal table on [0, grid_end]."""
    regime = classify_regime(model) if regime is None else regime
    h = default_step(regime.alpha) if step is None else step
    L = default_grid_end(regime.alpha) if grid_end is None else grid_end
    if regime.alpha is not None and h > 0.01 / regime.alpha + 1e-15:
        raise ValueError(f"grid step {h} exceeds 0.01/alpha")
    table = _renewal_table(model, regime, h, L)
    return LadderSystem(model, regime, scale, table)


def vigon_ladder_measure(model: RiskModel, scale: float = 1.0, grid: np.ndarray | None = None) -> GridMeasure:
    """Pi_H(dx) = integral of V_hat(dv) Pi_X(v + dx) = k (lambda/c) P(xi > x) dx."""
    grid = np.linspace(0.0, 50.0, 5001) if grid is None else np.asarray(grid, dtype=float)
    coef = scale * model.claim_intensity / model.premium_rate
    density = coef * np.asarray(model.claims.sf(grid))
    tail = coef * np.asarray(model.claims.stop_loss(grid))
    closure = lambda x: coef * np.asarray(model.claims.stop_loss(x))
    return GridMeasure(grid, 0.0, density, tail, closure)


def vigon_density_quadrature(model: RiskModel, x: float, scale: float = 1.0) -> float:
    """Same density by direct quadrature of (k/c) lambda f(v + x) over v > 0."""
    c, lam = model.premium_rate, model.claim_intensity
    val = integrate.quad(lambda v: float(model.claims.pdf(v + x)), 0.0, np.inf, epsabs=0, epsrel=1e-12, limit=400)[0]
    return scale / c * lam * val


def dual_root(model: RiskModel, a: float) -> float:
    """Phi(a) >= 0 solving psi(-Phi) = a."""
    if a < 0:
        raise ValueError("a must be nonnegative")
    if a == 0:
        return 0.0
    c, lam = model.premium_rate, model.claim_intensity
    hi = (a + lam) / c
    f = lambda th: laplace_exponent(model, -th) - a
    if not f(hi) > 0:
        raise RootBracketFailure(f"no sign change for the dual root at a={a}")
    return float(optimize.brentq(f, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500))


def dual_kappa(model: RiskModel, a: float, z: float, scale: float = 1.0) -> float:
    """Descending exponent kappa_hat(a, z) = (c/k)(z + Phi(a))."""
    if a < 0 or z < 0:
        raise ValueError("a and z must be nonnegative")
    return model.premium_rate / scale * (z + dual_root(model, a))


def kappa(system: LadderSystem, a: float, b: float) -> float:
    """Ascending exponent kappa(a, b) = -log E[e^{-a L^{-1}_1 - b H_1}].

    For a = 0 this is q + integral of (1 - e^{-bx}) Pi_H(dx).  For a > 0 the
    Wiener-Hopf identity kappa(a,-z) kappa_hat(a,z) = a - psi(z) is solved for
    kappa with the removable zero at z = -Phi(a) cancelled analytically:

        kappa(a, b) = k [1 - (lambda/c) (M(-Phi(a)) - M(-b)) / (b - Phi(a))].
    """
    model = system.model
    claims = model.claims
    if not claims.mgf_finite(-b):
        raise DivergentIntegral(f"kappa({a}, {b}) diverges: M({-b}) is infinite", a, b)
    coef = model.claim_intensity / model.premium_rate
    if a == 0:
        ratio = claims.mgf_ratio(-b)
    else:
        ratio = claims.divided_difference(-dual_root(model, a), -b)
    return system.scale * (1.0 - coef * ratio) + system.d_H * b


def renewal_function(system: LadderSystem, grid: np.ndarray | None = None) -> GridMeasure:
    """V as a measure: atom V(0), density V'(x) and tail Vbar(x) on the grid.

    With ``grid`` given (uniform, starting at 0) a fresh Panjer run uses its step.
    """
    if grid is None:
        table = system.table
    else:
        grid = np.asarray(grid, dtype=float)
        h = float(grid[1] - grid[0])
        if grid[0] != 0 or not np.allclose(np.diff(grid), h, rtol=1e-9, atol=0):
            raise ValueError("renewal grid must be uniform and start at 0")
        if system.alpha is not None and h > 0.01 / system.alpha + 1e-15:
            raise ValueError(f"grid step {h} exceeds 0.01/alpha")
        table = _renewal_table(system.model, system.regime, h, float(grid[-1]))
    q = system.q
    tail = table.ruin / q
    density = -np.gradient(tail, table.grid)
    density[0] = max(density[0], 0.0)
    closure = lambda x: table.closure(x) / q
    return GridMeasure(table.grid, system.V_zero, np.maximum(density, 0.0), tail, closure)


def ruin_probability(system: LadderSystem, u):
    """P(tau(u) < inf) = q Vbar(u); exactly rho at u = 0."""
    return system.q * system.V_tail(u)


def _m_star(system: LadderSystem) -> float:
    model, alpha = system.model, system.alpha
    if not model.claims.moment_finite(alpha, 1):
        raise DivergentIntegral(f"integral of x e^(alpha x) Pi_H(dx) diverges at alpha={alpha}", alpha)

    def integrand(x):
        s = float(model.claims.sf(x))
        return 0.0 if s <= 0.0 else x * math.exp(alpha * x + math.log(s))

    val = integrate.quad(integrand, 0.0, np.inf, epsabs=0.0, epsrel=1e-13, limit=500)[0]
    return system.d_H + system.scale * model.claim_intensity / model.premium_rate * val


def cramer_constant(system: LadderSystem) -> float:
    """lim e^{alpha u} P(tau(u) < inf) = q / (alpha m*)."""
    if not system.regime.is_cramer:
        raise RegimeMismatch("the Cramer constant needs the Cramer-Lundberg regime")
    m = _m_star(system)
    return system.q / (system.alpha * m)


def tilted_renewal(system: LadderSystem) -> tuple[np.ndarray, np.ndarray]:
    """V*(x) = integral over [0, x] of e^{alpha y} V(dy), on the renewal grid."""
    if system.alpha is None:
        raise RegimeMismatch("tilted renewal needs an exponential rate alpha")
    V = system.V
    x = V.grid
    f = np.exp(system.alpha * x) * V.density
    cum = integrate.cumulative_trapezoid(f, x, initial=0.0)
    return x, V.atom_at_zero + cum


class DescendingRenewalEstimate:
    """Monte Carlo estimate of V_hat(dt, dv) = (k/c) P(T_v in dt) dv on a time grid.

    T_v is the first time X reaches depth v.  For path i the depths first
    reached during [t_j, t_{j+1}) are exactly [D_i(t_j), D_i(t_{j+1})), D_i the
    running-minimum depth, so integrals against weights w(v) only need an
    antiderivative of w.
    """

    def __init__(self, batch: LadderBatch, time_grid: np.ndarray, scale: float = 1.0):
        tg = np.asarray(time_grid, dtype=float)
        if tg.ndim != 1 or tg.size < 2 or np.any(np.diff(tg) <= 0) or tg[0] < 0:
            raise ValueError("time grid must be increasing and nonnegative")
        if tg[-1] > batch.horizon:
            raise InsufficientSamples("ladder samples do not cover the time grid")
        self.batch = batch
        self.time_grid = tg
        self.scale = scale
        self.depths = batch.depth_at(tg)
        self.counts = np.histogram(batch.times, bins=tg)[0]

    def integrate(self, antiderivative: Callable[[np.ndarray], np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        """Per-cell mean and standard error of (k/c) integral of w(v) over the cell's depths."""
        Wd = antiderivative(self.depths)
        per_path = (self.scale / self.batch.premium_rate) * np.diff(Wd, axis=1)
        n = per_path.shape[0]
        return per_path.mean(axis=0), per_path.std(axis=0, ddof=1) / math.sqrt(n)

    def require(self, minimum: int = 100) -> None:
        if np.any(self.counts < minimum):
            bad = int(np.argmin(self.counts))
            raise InsufficientSamples(
                f"time cell {bad} has {int(self.counts[bad])} ladder points (< {minimum})"
            )


@dataclass(frozen=True)
class BivariateLadderMeasure:
    """Cell masses of Pi_{L^{-1},H}(dt, dx) with the last space column holding x beyond the grid."""

    time_grid: np.ndarray
    space_grid: np.ndarray
    mass: np.ndarray
    std_error: np.ndarray

    @property
    def spatial_marginal(self) -> np.ndarray:
        return self.mass.sum(axis=0)

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum())


def excursion_joint_law(
    model: RiskModel,
    renewal_estimate: DescendingRenewalEstimate,
    z_edges,
    x_edges,
) -> tuple[np.ndarray, np.ndarray]:
    """Cell probabilities of (tau(0), -X_{tau(0)-}, X_{tau(0)}) for a path from 0.

    The law is V_hat(dt, dz) Pi_X(z + dx) / k with time cells from the estimate's
    grid.  Returns (mass, std_error), both of shape (time cells, z cells, x cells).
    The last edges may be inf.
    """
    est = renewal_estimate
    ze, xe = np.asarray(z_edges, dtype=float), np.asarray(x_edges, dtype=float)
    sl = model.claims.stop_loss
    lam = model.claim_intensity
    nt = est.time_grid.size - 1
    mass = np.zeros((nt, ze.size - 1, xe.size - 1))
    se = np.zeros_like(mass)

    def strip(d, x):
        # integral of F_bar(v + x) over v in [z0, d]
        if math.isinf(x):
            return np.zeros_like(d)
        return np.asarray(sl(z0 + x)) - np.asarray(sl(d + x))

    for i in range(ze.size - 1):
        z0, z1 = ze[i], ze[i + 1]
        for j in range(xe.size - 1):
            x0, x1 = xe[j], xe[j + 1]
            W = lambda D: lam * (strip(np.clip(D, z0, z1), x0) - strip(np.clip(D, z0, z1), x1))
            m, s = est.integrate(W)
            mass[:, i, j], se[:, i, j] = m / est.scale, s / est.scale
    return mass, se


def bivariate_ladder_measure(
    model: RiskModel,
    ladder_samples: LadderBatch,
    time_grid: np.ndarray,
    space_grid: np.ndarray,
    scale: float = 1.0,
    min_points: int = 100,
) -> BivariateLadderMeasure:
    """Pi_{L^{-1},H}(dt, dx) = integral of V_hat(dt, dv) Pi_X(v + dx), V_hat from ladder samples."""
    est = DescendingRenewalEstimate(ladder_samples, time_grid, scale)
    est.require(min_points)
    xs = np.asarray(space_grid, dtype=float)
    lam = model.claim_intensity
    sl = model.claims.stop_loss
    D = est.depths
    cols = []
    for j in range(xs.size):
        cols.append(lam * np.asarray(sl(D + xs[j])))
    cols.append(np.zeros_like(D))
    Wd = np.stack(cols)
    coef = scale / model.premium_rate
    per_path = coef * (Wd[:-1] - Wd[1:])
    per_path[-1] = coef * cols[-2]
    cell = -np.diff(per_path, axis=2)
    n = cell.shape[1]
    mass = cell.mean(axis=1).T
    se = cell.std(axis=1, ddof=1).T / math.sqrt(n)
    return BivariateLadderMeasure(est.time_grid, xs, mass, se)


def ladder_laplace_functional(batch: LadderBatch, a: float, z: float, scale: float = 1.0) -> tuple[float, float]:
    """Estimate of the double Laplace transform of V_hat(dt, dv) and its standard error.

    Integrates e^{-a T_v - z v} over depth v exactly on each linear stretch of
    the running minimum; depths beyond the truncation are dropped, which
    biases the result by at most e^{-a horizon - z depth} / (a/c + z).
    """
    c = batch.premium_rate
    beta = a / c + z
    if not beta > 0:
        raise ValueError("a/c + z must be positive")
    t, v, off = batch.times, batch.depths, batch.offsets
    prev = np.empty_like(v)
    prev[:] = np.concatenate([[0.0], v[:-1]])
    starts = off[:-1][np.diff(off) > 0]
    prev[starts] = 0.0
    contrib = np.exp(-a * t + (a / c) * v - beta * prev) * -np.expm1(-beta * (v - prev)) / beta
    path_of = np.repeat(np.arange(len(batch)), np.diff(off))
    per_path = np.bincount(path_of, weights=contrib, minlength=len(batch)) * scale / c
    return float(per_path.mean()), float(per_path.std(ddof=1) / math.sqrt(per_path.size))


class FiniteLevelLaw:
    """Exact law of (u - max before ruin, overshoot) at a fixed level u, given ruin.

    P(u - sup X in dy, X_tau - u in dx, tau < inf) = V(u - dy) Pi_H(y + dx)
    for 0 <= y <= u, integrated against the renewal table cell by cell.
    """

    def __init__(self, system: LadderSystem, u: float):
        if not u >= 0:
            raise ValueError("u must be nonnegative")
        t = system.table
        if u > t.grid[-1]:
            raise ValueError("u lies beyond the renewal grid")
        self.system, self.u = system, float(u)
        z = np.append(t.grid[t.grid < u], u)
        vbar = np.asarray(t.at(z)) / system.q
        self._mid = 0.5 * (z[:-1] + z[1:])
        self._dV = vbar[:-1] - vbar[1:]
        self._atom = system.V_zero
        self.ruin_probability = float(ruin_probability(system, u))

    def _integrate(self, g, lo: float = 0.0) -> float:
        """Integral of g(u - z) V(dz) over z in [max(lo,0), u], atom at zero included."""
        keep = self._mid >= lo
        total = float(np.sum(self._dV[keep] * g(self.u - self._mid[keep])))
        if lo <= 0:
            total += self._atom * float(g(np.array(self.u)))
        return total

    def overshoot_tail(self, x: float) -> float:
        tail = self.system.pi_H_tail
        return self._integrate(lambda y: np.asarray(tail(y + x))) / self.ruin_probability

    def undershoot_max_cdf(self, y: float) -> float:
        tail = self.system.pi_H_tail
        return self._integrate(lambda s: np.asarray(tail(s)), lo=self.u - y) / self.ruin_probability


def finite_level_law(system: LadderSystem, u: float) -> FiniteLevelLaw:
    return FiniteLevelLaw(system, u)


def asymptotic_ruin(system: LadderSystem, u):
    """Large-u approximation of P(tau(u) < inf).

    Cramer: (q / (alpha m*)) e^{-alpha u}.  Convolution equivalent:
    q Pi_H((u, inf)) / kappa(0,-alpha)^2.
    """
    u = np.asarray(u, dtype=float)
    if system.regime.is_cramer:
        return cramer_constant(system) * np.exp(-system.alpha * u)
    if system.regime.is_convolution_equivalent:
        k0 = kappa(system, 0.0, -system.alpha)
        return system.q * np.asarray(system.pi_H_tail(u)) / k0**2
    raise RegimeMismatch("no large-u approximation outside the two regimes")
