"""Limits of the conditioned path functionals as the reserve u grows.

All laws are built from a LadderSystem.  Under the Cramer-Lundberg condition
they are probability laws; in the convolution-equivalent regime the
undershoot laws and the joint law lose mass kappa(0,-alpha)/q (vague limits)
while the overshoot and passage-time laws pick up a compensating term and
keep mass one.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize

from .errors import DivergentIntegral, InsufficientSamples, RegimeMismatch
from .ladder_calculus import DescendingRenewalEstimate, LadderSystem, dual_kappa, kappa
from .path_sim import ExcursionBatch
from .risk_model import Regime, RiskModel

__all__ = [
    "LimitLaw",
    "QuintupleDensity",
    "TimeMarginalLaw",
    "overshoot_limit",
    "undershoot_max_limit",
    "undershoot_x_limit",
    "quintuple_limit_density",
    "q_infinity_mass",
    "edpf_limit_cramer",
    "edpf_limit_convolution",
    "time_marginal_limit",
    "functional_limit_irregular",
    "excursion_moment_identity",
]

WEAK = "weak"
VAGUE = "vague"
_CELL_X, _CELL_W = np.polynomial.legendre.leggauss(10)
_QUAD = dict(epsabs=0.0, epsrel=1e-12, limit=400)
SINGULAR_STEP = 1e-5


def _gl(f, a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    pts = mid[..., None] + half[..., None] * _CELL_X
    return (f(pts) * _CELL_W).sum(-1) * half


@dataclass
class LimitLaw:
    """Atom at zero plus density on [0, inf); mass may fall short of one for vague limits."""

    name: str
    pdf: Callable[[np.ndarray], np.ndarray]
    atom_at_zero: float
    convergence_mode: str
    expected_mass: float
    grid: np.ndarray = field(repr=False)

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        self.grid = g
        cells = _gl(self.pdf, g[:-1], g[1:])
        self._cum = np.concatenate([[0.0], np.cumsum(cells)])
        f = lambda x: float(self.pdf(np.array(x)))
        self._beyond = integrate.quad(f, g[-1], np.inf, **_QUAD)[0]

    def density(self, x):
        return self.pdf(np.asarray(x, dtype=float))

    @property
    def total_mass(self) -> float:
        return float(self.atom_at_zero + self._cum[-1] + self._beyond)

    def cdf(self, x):
        """Mass of [0, x], atom included."""
        xa = np.atleast_1d(np.asarray(x, dtype=float))
        g = self.grid
        j = np.clip(np.searchsorted(g, xa, side="right") - 1, 0, g.size - 1)
        inside = xa <= g[-1]
        out = np.empty_like(xa)
        out[inside] = self._cum[j[inside]] + _gl(self.pdf, g[j[inside]], xa[inside])
        for i in np.flatnonzero(~inside):
            out[i] = self._cum[-1] + integrate.quad(lambda t: float(self.pdf(np.array(t))), g[-1], xa[i], **_QUAD)[0]
        out = self.atom_at_zero + np.where(xa < 0, -self.atom_at_zero, out)
        return float(out[0]) if np.ndim(x) == 0 else out

    def tail(self, x):
        return self.total_mass - self.cdf(x)

    def window_mass(self, lo: float, hi: float) -> float:
        """Mass of (lo, hi], or of [0, hi] when lo is 0."""
        return float(self.cdf(hi)) if lo == 0 else float(self.cdf(hi) - self.cdf(lo))

    def normalized_cdf(self, x):
        return self.cdf(x) / self.total_mass

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Inverse-cdf draws from the law normalised to a probability."""
        total = self.total_mass
        target = rng.random(n) * total
        out = np.zeros(n)
        cum = self.atom_at_zero + self._cum
        g = self.grid
        in_grid = (target >= self.atom_at_zero) & (target < cum[-1])
        t = target[in_grid]
        j = np.clip(np.searchsorted(cum, t, side="right") - 1, 0, g.size - 2)
        frac = (t - cum[j]) / np.maximum(cum[j + 1] - cum[j], 1e-300)
        out[in_grid] = g[j] + frac * (g[j + 1] - g[j])
        for i in np.flatnonzero(target >= cum[-1]):
            r = target[i] - cum[-1]
            h = lambda x: integrate.quad(lambda s: float(self.pdf(np.array(s))), g[-1], x, **_QUAD)[0] - r
            hi = g[-1] + 1.0
            while h(hi) < 0 and hi < 1e8:
                hi = g[-1] + 2 * (hi - g[-1])
            out[i] = optimize.brentq(h, g[-1], hi)
        return out

    def rows(self, x=None):
        x = self.grid if x is None else np.asarray(x, dtype=float)
        dens = self.pdf(x)
        tails = self.tail(x)
        for xi, di, ti in zip(x, dens, tails):
            yield float(xi), float(di), float(ti)

    def to_csv(self, x=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "density", "tail", "atom", "total_mass", "convergence_mode"])
        atom, mass = repr(float(self.atom_at_zero)), repr(self.total_mass)
        for xi, di, ti in self.rows(x):
            w.writerow([repr(xi), repr(di), repr(ti), atom, mass, self.convergence_mode])
        return buf.getvalue()

    def to_json(self, x=None) -> dict:
        xs, ds, ts = zip(*self.rows(x))
        return {
            "name": self.name,
            "x": list(xs),
            "density": list(ds),
            "tail": list(ts),
            "atom": float(self.atom_at_zero),
            "total_mass": self.total_mass,
            "expected_mass": self.expected_mass,
            "convergence_mode": self.convergence_mode,
        }


def _require(system: LadderSystem, regime: Regime | None):
    if system.alpha is None or system.regime.regime is Regime.NEITHER:
        raise RegimeMismatch("limit laws need the Cramer-Lundberg or convolution-equivalent regime")
    if regime is not None and regime is not system.regime.regime:
        raise RegimeMismatch(f"system is {system.regime.regime.value}, not {regime.value}")
    return system.alpha


def _default_grid(alpha: float) -> np.ndarray:
    end = max(60.0, 60.0 / alpha)
    return np.linspace(0.0, end, int(round(end / 0.01)) + 1)


def q_infinity_mass(system: LadderSystem) -> float:
    """Total mass 1 - kappa(0,-alpha)/q of the limiting joint law."""
    alpha = _require(system, None)
    return 1.0 - kappa(system, 0.0, -alpha) / system.q


def _mode(system: LadderSystem) -> str:
    return WEAK if system.regime.is_cramer else VAGUE


def overshoot_limit(system: LadderSystem, regime: Regime | None = None, grid=None) -> LimitLaw:
    """Limit law of X_tau(u) - u.

    Density (alpha/q) integral of e^{alpha y} pi_H(y + x) dy, which with
    pi_H = k (lambda/c) P(xi > .) integrates by parts to
    (k lambda / (c q)) [e^{-alpha x} E(e^{alpha xi}; xi > x) - P(xi > x)].
    The convolution-equivalent regime adds (alpha/q) kappa(0,-alpha) e^{-alpha x}.
    """
    alpha = _require(system, regime)
    m = system.model
    claims = m.claims
    coef = system.scale * m.claim_intensity / (m.premium_rate * system.q)
    extra = 0.0
    if system.regime.is_convolution_equivalent:
        extra = alpha / system.q * kappa(system, 0.0, -alpha)

    def pdf(x):
        x = np.asarray(x, dtype=float)
        xp = np.maximum(x, 0.0)
        core = np.exp(-alpha * xp) * np.asarray(claims.tilted_tail(alpha, xp)) - np.asarray(claims.sf(xp))
        val = coef * np.maximum(core, 0.0) + extra * np.exp(-alpha * xp)
        return np.where(x < 0, 0.0, val)

    atom = system.d_H * alpha / system.q
    g = _default_grid(alpha) if grid is None else grid
    return LimitLaw("overshoot", pdf, atom, WEAK, 1.0, g)


def undershoot_max_limit(system: LadderSystem, regime: Regime | None = None, grid=None) -> LimitLaw:
    """Limit law of u - sup_{s < tau(u)} X_s: density (alpha/q) e^{alpha y} Pi_H((y, inf))."""
    alpha = _require(system, regime)
    m = system.model
    coef = alpha / system.q * system.scale * m.claim_intensity / m.premium_rate

    def pdf(y):
        y = np.asarray(y, dtype=float)
        yp = np.maximum(y, 0.0)
        return np.where(y < 0, 0.0, coef * np.asarray(m.claims.exp_stop_loss(alpha, yp)))

    atom = system.d_H * alpha / system.q
    g = _default_grid(alpha) if grid is None else grid
    return LimitLaw("undershoot_max", pdf, atom, _mode(system), q_infinity_mass(system), g)


def undershoot_x_limit(system: LadderSystem, model: RiskModel | None = None, grid=None) -> LimitLaw:
    """Limit law of u - X_{tau(u)-}: density (k lambda / (c q)) P(xi > x) (e^{alpha x} - 1)."""
    alpha = _require(system, None)
    m = system.model if model is None else model
    coef = system.scale * m.claim_intensity / (m.premium_rate * system.q)

    def pdf(x):
        x = np.asarray(x, dtype=float)
        xp = np.maximum(x, 0.0)
        val = coef * np.asarray(m.claims.exp_sf(alpha, xp)) * -np.expm1(-alpha * xp)
        return np.where(x < 0, 0.0, val)

    atom = system.d_H * alpha / system.q
    g = _default_grid(alpha) if grid is None else grid
    return LimitLaw("undershoot_path", pdf, atom, _mode(system), q_infinity_mass(system), g)


@dataclass(frozen=True)
class QuintupleDensity:
    """Joint limit density of (undershoot of the max y, overshoot x, undershoot of the path v).

    (alpha/q) e^{alpha y} 1(v >= y) (k/c) lambda f(v + x) on {v >= y >= 0, x >= 0}.
    """

    system: LadderSystem

    @property
    def alpha(self) -> float:
        return self.system.alpha

    @property
    def _coef(self) -> float:
        s, m = self.system, self.system.model
        return s.alpha / s.q * s.scale / m.premium_rate * m.claim_intensity

    def __call__(self, y, x, v):
        y, x, v = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (y, x, v)))
        ok = (y >= 0) & (x >= 0) & (v >= y)
        f = np.asarray(self.system.model.claims.pdf(np.where(ok, v + x, 1.0)))
        live = ok & (f > 0)
        with np.errstate(divide="ignore"):
            log_f = np.log(np.where(live, f, 1.0))
        val = self._coef * np.exp(self.alpha * np.where(live, y, 0.0) + log_f)
        return np.where(live, val, 0.0)

    def _y_slice(self, y, x0, x1, v0, v1):
        """e^{alpha y} times the integral over x in [x0,x1], v in [max(v0,y), v1] of f(v + x).

        Exact via the stop-loss transform, kept in tilted form so nothing under- or overflows.
        """
        a = self.alpha
        esl = self.system.model.claims.exp_stop_loss
        y = np.asarray(y, dtype=float)
        lo = np.maximum(v0, y)
        ok = lo < v1
        lo = np.where(ok, lo, v1)

        def term(z):
            return np.exp(a * (y - z)) * np.asarray(esl(a, z))

        def strip(xe):
            if math.isinf(xe):
                return 0.0
            if math.isinf(v1):
                return term(lo + xe)
            return term(lo + xe) - term(v1 + xe)

        return np.where(ok, strip(x0) - strip(x1), 0.0)

    def cell_mass(self, ycell, xcell, vcell) -> float:
        """Mass of a box; the last edge of any cell may be inf."""
        (y0, y1), (x0, x1), (v0, v1) = ycell, xcell, vcell
        y1 = min(y1, v1)
        if not y1 > y0:
            return 0.0

        def g(y):
            return max(float(self._y_slice(np.array(y), x0, x1, v0, v1)), 0.0)

        pts = [p for p in (v0,) if y0 < p < y1] or None
        if math.isinf(y1):
            b = max(y0, v0) + 1.0
            head = integrate.quad(g, y0, b, points=pts, **_QUAD)[0]
            rest = sum(integrate.quad(g, lo, hi, **_QUAD)[0]
                       for lo, hi in ((b, b + 50.0), (b + 50.0, b + 1000.0), (b + 1000.0, np.inf)))
            return self._coef * (head + rest)
        return self._coef * integrate.quad(g, y0, y1, points=pts, **_QUAD)[0]

    def cell_masses(self, y_edges, x_edges, v_edges) -> np.ndarray:
        ye, xe, ve = (np.asarray(e, dtype=float) for e in (y_edges, x_edges, v_edges))
        out = np.zeros((ye.size - 1, xe.size - 1, ve.size - 1))
        for i in range(ye.size - 1):
            for j in range(xe.size - 1):
                for l in range(ve.size - 1):
                    out[i, j, l] = self.cell_mass((ye[i], ye[i + 1]), (xe[j], xe[j + 1]), (ve[l], ve[l + 1]))
        return out

    def marginal_x(self, x):
        """Integrate out (y, v): equals the overshoot density without the CE term."""
        s, m = self.system, self.system.model
        x = np.asarray(x, dtype=float)
        a = self.alpha
        inner = np.exp(-a * x) * np.asarray(m.claims.tilted_tail(a, x)) - np.asarray(m.claims.sf(x))
        return self._coef / a * inner

    def marginal_y(self, y):
        y = np.asarray(y, dtype=float)
        return self._coef * np.asarray(self.system.model.claims.exp_stop_loss(self.alpha, y))

    def total_mass(self) -> float:
        """Integral of e^{alpha y} Pi_H-tail, i.e. the mass of the undershoot-max law."""
        a = self.alpha
        f = lambda y: float(self.system.model.claims.exp_stop_loss(a, y))
        head = integrate.quad(f, 0.0, 50.0, **_QUAD)[0]
        return self._coef * (head + integrate.quad(f, 50.0, np.inf, **_QUAD)[0])

    def grid_rows(self, y, x, v):
        Y, X, Vv = np.meshgrid(np.asarray(y, float), np.asarray(x, float), np.asarray(v, float), indexing="ij")
        D = self(Y, X, Vv)
        for a, b, c, d in zip(Y.ravel(), X.ravel(), Vv.ravel(), D.ravel()):
            yield float(a), float(b), float(c), float(d)

    def to_csv(self, y, x, v) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["y", "x", "v", "density"])
        for row in self.grid_rows(y, x, v):
            w.writerow([repr(t) for t in row])
        return buf.getvalue()


def quintuple_limit_density(system: LadderSystem, model: RiskModel | None = None) -> QuintupleDensity:
    _require(system, None)
    return QuintupleDensity(system)


def _kappa_slope(system: LadderSystem, delta: float, s: float) -> float:
    """d/ds kappa(delta, -s) by central difference, one-sided where kappa diverges to the right."""
    h = SINGULAR_STEP
    k = lambda t: kappa(system, delta, -t)
    try:
        return (k(s + h) - k(s - h)) / (2 * h)
    except DivergentIntegral:
        return (3 * k(s) - 4 * k(s - h) + k(s - 2 * h)) / (2 * h)


def edpf_limit_cramer(system: LadderSystem, lam_p: float, eta: float, delta: float) -> float:
    """Limit of E[e^{-delta (tau - G) + lam_p (u - max) + eta (overshoot)} | tau(u) < inf].

    alpha (kappa(delta, -(lam_p + alpha)) - kappa(delta, -eta)) / (q (eta - lam_p - alpha)),
    continued by its derivative where the denominator vanishes.
    """
    alpha = _require(system, Regime.CRAMER_LUNDBERG)
    if lam_p > 0 or eta > alpha or delta < 0:
        raise ValueError("need lam_p <= 0, eta <= alpha and delta >= 0")
    s0 = lam_p + alpha
    gap = eta - s0
    if abs(gap) < SINGULAR_STEP:
        return -alpha / system.q * _kappa_slope(system, delta, s0)
    return alpha * (kappa(system, delta, -s0) - kappa(system, delta, -eta)) / (system.q * gap)


def edpf_limit_convolution(system: LadderSystem, model: RiskModel | None, beta: float, delta: float) -> float:
    """Convolution-equivalent limit of E[e^{-delta (tau - G) + beta (overshoot)} | tau(u) < inf]."""
    alpha = _require(system, Regime.CONVOLUTION_EQUIVALENT)
    m = system.model if model is None else model
    if not beta < alpha or delta < 0:
        raise ValueError("need beta < alpha and delta >= 0")
    q = system.q
    psi_a = m.psi(alpha)
    jump = -alpha * psi_a / (q * (alpha - beta) * dual_kappa(m, delta, alpha, scale=system.scale))
    smooth = alpha * (kappa(system, delta, -beta) - kappa(system, delta, -alpha)) / (q * (alpha - beta))
    return jump + smooth


@dataclass(frozen=True)
class TimeMarginalLaw:
    """Cell masses of the limiting passage-delay law with Monte Carlo standard errors."""

    edges: np.ndarray
    mass: np.ndarray
    std_error: np.ndarray
    total_mass: float
    total_std_error: float
    convergence_mode: str = WEAK

    @property
    def density(self) -> np.ndarray:
        return self.mass / np.diff(self.edges)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_lo", "t_hi", "mass", "std_error"])
        for a, b, m, s in zip(self.edges[:-1], self.edges[1:], self.mass, self.std_error):
            w.writerow([repr(float(a)), repr(float(b)), repr(float(m)), repr(float(s))])
        return buf.getvalue()


def _time_weight_antiderivative(system: LadderSystem):
    """W(v) = integral over [0, v] of lambda [e^{-alpha s} E(e^{alpha xi}; xi > s) - P(xi > s)] ds.

    The integrand is integral of (e^{alpha z} - 1) Pi_X(s + dz); integration by
    parts gives the closed form used here.
    """
    m, a = system.model, system.alpha
    claims, lam = m.claims, m.claim_intensity
    Ma, mu = claims.mgf(a), claims.mean

    def W(v):
        v = np.asarray(v, dtype=float)
        tt = np.exp(-a * v) * np.asarray(claims.tilted_tail(a, v))
        F = 1.0 - np.asarray(claims.sf(v))
        return lam * ((Ma - tt - F) / a - (mu - np.asarray(claims.stop_loss(v))))

    return W


def time_marginal_limit(
    system: LadderSystem,
    renewal_estimate: DescendingRenewalEstimate,
    regime: Regime | None = None,
) -> TimeMarginalLaw:
    """Limit law of tau(u) - G: K(dt)/q with K(dt) the integral of V_hat(dt, dv) w(v).

    w(v) is the integral of (e^{alpha z} - 1) Pi_X(v + dz); the
    convolution-equivalent regime adds (-psi(alpha)/q) times the integral of
    e^{-alpha v} V_hat(dt, dv).
    """
    alpha = _require(system, regime)
    est = renewal_estimate
    if len(est.batch) < 2:
        raise InsufficientSamples("need at least two ladder paths")
    W = _time_weight_antiderivative(system)
    if system.regime.is_convolution_equivalent:
        psi_a = system.model.psi(alpha)
        base = W
        W = lambda v: base(v) - psi_a * -np.expm1(-alpha * np.asarray(v, dtype=float)) / alpha
    Wd = W(est.depths)
    per_path = (system.scale / system.model.premium_rate) * np.diff(Wd, axis=1) / system.q
    n = per_path.shape[0]
    totals = per_path.sum(axis=1)
    return TimeMarginalLaw(
        est.time_grid,
        per_path.mean(axis=0),
        per_path.std(axis=0, ddof=1) / math.sqrt(n),
        float(totals.mean()),
        float(totals.std(ddof=1) / math.sqrt(n)),
    )


def _inner_integrals(alpha, terminal, G, batch, breakpoints, nodes=16):
    """Per-excursion integral over y in [0, X] of e^{alpha y} G(batch, X - y)."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    X = np.asarray(terminal, dtype=float)
    cuts = [np.zeros_like(X)]
    for b in sorted(breakpoints):
        cuts.append(np.clip(X - b, 0.0, X))
    cuts.append(X)
    cuts = np.sort(np.stack(cuts), axis=0)
    total = np.zeros_like(X)
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        for xi, wi in zip(x, w):
            y = mid + half * xi
            total += wi * half * np.exp(alpha * y) * np.asarray(G(batch, X - y), dtype=float)
    return total


def functional_limit_irregular(
    system: LadderSystem,
    model: RiskModel | None,
    G: Callable[[ExcursionBatch, np.ndarray], np.ndarray],
    excursions: ExcursionBatch,
    breakpoints: Sequence[float] = (),
    min_completed: int = 10_000,
) -> tuple[float, float]:
    """Limit of E[G(excursion, overshoot) | tau(u) < inf] from excursions of X away from zero.

    (alpha |Pi_H| / (q P(tau(0) < inf))) times the integral over y > 0 of
    e^{alpha y} E[G(X_[0,tau(0)], X_tau(0) - y); X_tau(0) > y, tau(0) < inf].
    The y-integral is done per excursion by Gauss-Legendre, split where G
    jumps (``breakpoints`` are overshoot values).  Both expectations use the
    excursion weights, so Esscher-tilted excursions give the same target with
    bounded summands.  Returns (estimate, standard error).
    """
    alpha = _require(system, None)
    ok = excursions.completed
    if int(ok.sum()) < min_completed:
        raise InsufficientSamples(f"{int(ok.sum())} completed excursions (< {min_completed})")
    wts = np.where(ok, excursions.weight, 0.0)
    H = np.zeros_like(wts)
    sub = excursions.subset(ok)
    H[ok] = _inner_integrals(alpha, sub.terminal, G, sub, breakpoints)
    num, den = wts * H, wts
    a, b = num.mean(), den.mean()
    n = wts.size
    cov = np.cov(num, den, ddof=1)
    var = (cov[0, 0] - 2 * (a / b) * cov[0, 1] + (a / b) ** 2 * cov[1, 1]) / (n * b * b)
    const = alpha * system.pi_H_mass / system.q
    return float(const * a / b), float(const * math.sqrt(max(var, 0.0)))


def excursion_moment_identity(system: LadderSystem, excursions: ExcursionBatch) -> tuple[float, float, float]:
    """Both sides of |Pi_H| E(X e^{alpha X}; tau(0) < inf) = P(tau(0) < inf) m*, X = X_tau(0).

    Returns (Monte Carlo left side, its standard error, analytic right side).
    """
    alpha = _require(system, None)
    ok = excursions.completed
    X = np.where(ok, excursions.terminal, 0.0)
    with np.errstate(divide="ignore"):
        vals = np.where(ok, X * np.exp(np.log(excursions.weight) + alpha * X), 0.0)
    n = vals.size
    lhs = system.pi_H_mass * vals.mean()
    se = system.pi_H_mass * vals.std(ddof=1) / math.sqrt(n)
    return float(lhs), float(se), float(system.rho * system.m_star)
