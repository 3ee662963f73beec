"""Claim-surplus process X_t = sum of claims - c t and its exponential moments.

Claims arrive at rate ``claim_intensity`` and are i.i.d. with one of four
parametric laws.  Everything downstream only needs, per law: density, tail,
stop-loss transform, moment generating function with its derivative and
divided differences, Esscher tilts, and exact samplers (unconditional and
conditioned to exceed a level).
"""

from __future__ import annotations

import hashlib
import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
from scipy import integrate, optimize, special, stats

from .errors import InfiniteTilt, ModelError, NoPositiveRoot

__all__ = [
    "ClaimDistribution",
    "Exponential",
    "Gamma",
    "MixedExponential",
    "TiltedPareto",
    "RiskModel",
    "Regime",
    "RegimeClassification",
    "laplace_exponent",
    "lundberg_root",
    "classify_regime",
    "esscher_transform",
    "moment_condition_check",
    "scaled_expint",
    "claims_from_params",
]

ROOT_GAP = 1e-9
_QUAD = dict(epsabs=0.0, epsrel=1e-12, limit=400)


def _ret(x_in, out):
    return float(out) if np.ndim(x_in) == 0 else out


def _quad_inf(fun, a=0.0):
    return integrate.quad(fun, a, np.inf, **_QUAD)[0]


def scaled_expint(p: float, t):
    """e^t E_p(t) for t >= 0, where E_p is the generalised exponential integral.

    Equivalently the integral of e^{-t(y-1)} y^{-p} over y in [1, inf).
    """
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty_like(t_arr)
    big = t_arr > 600.0
    if np.any(big):
        tb = t_arr[big]
        term = np.ones_like(tb)
        acc = np.ones_like(tb)
        for k in range(12):
            term = term * (-(p + k)) / tb
            acc = acc + term
        out[big] = acc / tb
    rest = ~big
    if np.any(rest):
        tr = t_arr[rest]
        if float(p).is_integer() and p >= 1:
            with np.errstate(over="ignore", invalid="ignore"):
                vals = np.exp(tr) * special.expn(int(p), tr)
            zero = tr == 0.0
            vals[zero] = 1.0 / (p - 1.0) if p > 1 else np.inf
            out[rest] = vals
        else:
            vals = np.empty_like(tr)
            for i, ti in enumerate(tr):
                if ti == 0.0:
                    vals[i] = 1.0 / (p - 1.0) if p > 1 else np.inf
                else:
                    vals[i] = _quad_inf(lambda y, ti=ti: math.exp(-ti * (y - 1.0)) * y ** (-p), 1.0)
            out[rest] = vals
    return float(out[0]) if np.ndim(t) == 0 else out


def _rejection(rng: np.random.Generator, n: int, propose, accept) -> np.ndarray:
    """Vectorised accept/reject; ``propose(idx)`` draws for the pending slots."""
    out = np.empty(n)
    todo = np.arange(n)
    while todo.size:
        x = propose(todo)
        keep = rng.random(todo.size) < accept(x, todo)
        out[todo[keep]] = x[keep]
        todo = todo[~keep]
    return out


class ClaimDistribution(ABC):
    """Law of a single claim size on (0, inf)."""

    kind: str = ""

    @abstractmethod
    def params(self) -> dict: ...

    @abstractmethod
    def pdf(self, x): ...

    @abstractmethod
    def sf(self, x): ...

    @property
    @abstractmethod
    def radius(self) -> float:
        """Supremum of the tilts theta with M(theta) finite."""

    @property
    def finite_at_radius(self) -> bool:
        return False

    @abstractmethod
    def mgf(self, theta: float) -> float: ...

    @abstractmethod
    def mgf_derivative(self, theta: float) -> float: ...

    @abstractmethod
    def tilt(self, theta: float) -> "ClaimDistribution":
        """Esscher tilt: density e^{theta x} f(x) / M(theta)."""

    @abstractmethod
    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray: ...

    @abstractmethod
    def sample_excess(self, rng: np.random.Generator, a: np.ndarray) -> np.ndarray:
        """One draw from the law conditioned on exceeding a[i], for each i."""

    def mgf_finite(self, theta: float) -> bool:
        return theta < self.radius or (theta == self.radius and self.finite_at_radius)

    @cached_property
    def mean(self) -> float:
        return _quad_inf(lambda x: float(self.sf(x)))

    def divided_difference(self, t1: float, t2: float) -> float:
        """(M(t1) - M(t2)) / (t1 - t2), with the diagonal limit M'(t)."""
        if not (self.mgf_finite(t1) and self.mgf_finite(t2)):
            return math.inf
        h = t1 - t2
        if h == 0.0:
            return self.mgf_derivative(t1)
        if abs(h) > 1e-3:
            return (self.mgf(t1) - self.mgf(t2)) / h

        base = self.tilt(t2)

        def integrand(x):
            z = h * x
            phi = math.expm1(z) / z if z != 0.0 else 1.0
            return x * phi * float(base.pdf(x))

        return self.mgf(t2) * _quad_inf(integrand)

    def mgf_ratio(self, theta: float) -> float:
        """(M(theta) - 1) / theta, i.e. the integral of e^{theta x} tail(x)."""
        if theta == 0.0:
            return self.mean
        return self.divided_difference(theta, 0.0)

    def mgf_minus_one(self, theta: float) -> float:
        if theta == 0.0:
            return 0.0
        r = self.mgf_ratio(theta)
        return math.inf if math.isinf(r) else theta * r

    def stop_loss(self, x):
        """E (xi - x)^+."""
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        vals = np.array([_quad_inf(lambda z: float(self.sf(z)), max(xi, 0.0)) + max(-xi, 0.0) for xi in xs])
        return _ret(x, vals)

    def tilted_tail(self, theta: float, x):
        """Integral of e^{theta z} f(z) over z > x, i.e. M(theta) times the tilted tail."""
        if not self.mgf_finite(theta):
            raise InfiniteTilt(f"M({theta}) is infinite for {self.kind}")
        return self.mgf(theta) * self.tilt(theta).sf(x)

    def exp_sf(self, theta: float, x):
        """e^{theta x} P(xi > x), computed without intermediate underflow where possible."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(self.sf(x), dtype=float)
        with np.errstate(divide="ignore"):
            return _ret(x, np.exp(np.where(v > 0, theta * x + np.log(np.where(v > 0, v, 1.0)), -np.inf)))

    def exp_stop_loss(self, theta: float, x):
        """e^{theta x} E(xi - x)^+ for x >= 0."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(self.stop_loss(x), dtype=float)
        with np.errstate(divide="ignore"):
            return _ret(x, np.exp(np.where(v > 0, theta * x + np.log(np.where(v > 0, v, 1.0)), -np.inf)))

    def moment_finite(self, theta: float, order: int) -> bool:
        """Whether E xi^order e^{theta xi} is finite."""
        if theta <= 0.0 or theta < self.radius:
            return True
        return theta == self.radius and self.finite_at_radius

    def as_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params()}


@dataclass(frozen=True)
class Exponential(ClaimDistribution):
    rate: float
    kind = "exponential"

    def __post_init__(self):
        if not self.rate > 0:
            raise ModelError("exponential rate must be positive")

    def params(self):
        return {"rate": self.rate}

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return _ret(x, np.where(x >= 0, self.rate * np.exp(-self.rate * np.maximum(x, 0)), 0.0))

    def sf(self, x):
        x = np.asarray(x, dtype=float)
        return _ret(x, np.exp(-self.rate * np.maximum(x, 0.0)))

    @property
    def radius(self):
        return self.rate

    @property
    def mean(self):
        return 1.0 / self.rate

    def mgf(self, theta):
        return self.rate / (self.rate - theta) if theta < self.rate else math.inf

    def mgf_derivative(self, theta):
        return self.rate / (self.rate - theta) ** 2 if theta < self.rate else math.inf

    def divided_difference(self, t1, t2):
        if t1 >= self.rate or t2 >= self.rate:
            return math.inf
        return self.rate / ((self.rate - t1) * (self.rate - t2))

    def stop_loss(self, x):
        x = np.asarray(x, dtype=float)
        return _ret(x, np.where(x >= 0, np.exp(-self.rate * np.maximum(x, 0)) / self.rate, 1.0 / self.rate - x))

    def tilted_tail(self, theta, x):
        if theta >= self.rate:
            raise InfiniteTilt(f"M({theta}) is infinite for exponential({self.rate})")
        x = np.asarray(x, dtype=float)
        r = self.rate - theta
        return _ret(x, self.rate / r * np.exp(-r * np.maximum(x, 0.0)))

    def tilt(self, theta):
        if theta >= self.rate:
            raise InfiniteTilt(f"M({theta}) is infinite for exponential({self.rate})")
        return self if theta == 0 else Exponential(self.rate - theta)

    def sample(self, rng, n):
        return rng.standard_exponential(n) / self.rate

    def sample_excess(self, rng, a):
        a = np.asarray(a, dtype=float)
        return np.maximum(a, 0.0) + rng.standard_exponential(a.shape) / self.rate


@dataclass(frozen=True)
class Gamma(ClaimDistribution):
    shape: float
    rate: float
    kind = "gamma"

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ModelError("gamma shape and rate must be positive")

    def params(self):
        return {"shape": self.shape, "rate": self.rate}

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return _ret(x, stats.gamma.pdf(x, self.shape, scale=1.0 / self.rate))

    def sf(self, x):
        x = np.asarray(x, dtype=float)
        return _ret(x, special.gammaincc(self.shape, self.rate * np.maximum(x, 0.0)))

    @property
    def radius(self):
        return self.rate

    @property
    def mean(self):
        return self.shape / self.rate

    def mgf(self, theta):
        if theta >= self.rate:
            return math.inf
        return (self.rate / (self.rate - theta)) ** self.shape

    def mgf_ratio(self, theta):
        if theta >= self.rate:
            return math.inf
        if theta == 0.0:
            return self.mean
        return math.expm1(-self.shape * math.log1p(-theta / self.rate)) / theta

    def mgf_derivative(self, theta):
        if theta >= self.rate:
            return math.inf
        return self.shape / (self.rate - theta) * self.mgf(theta)

    def stop_loss(self, x):
        x = np.asarray(x, dtype=float)
        xp = np.maximum(x, 0.0)
        k, mu = self.shape, self.rate
        val = k / mu * special.gammaincc(k + 1, mu * xp) - xp * special.gammaincc(k, mu * xp)
        return _ret(x, np.where(x >= 0, val, self.mean - x))

    def tilt(self, theta):
        if theta >= self.rate:
            raise InfiniteTilt(f"M({theta}) is infinite for gamma rate {self.rate}")
        return self if theta == 0 else Gamma(self.shape, self.rate - theta)

    def sample(self, rng, n):
        return rng.standard_gamma(self.shape, n) / self.rate

    def sample_excess(self, rng, a):
        a = np.maximum(np.asarray(a, dtype=float), 0.0)
        tail = special.gammaincc(self.shape, self.rate * a)
        if np.any(tail <= 0.0):
            raise ModelError("gamma excess level beyond double precision range")
        u = rng.random(a.shape)
        x = special.gammainccinv(self.shape, u * tail) / self.rate
        return np.maximum(x, np.nextafter(a, np.inf))


@dataclass(frozen=True)
class MixedExponential(ClaimDistribution):
    weights: tuple[float, ...]
    rates: tuple[float, ...]
    kind = "mixed_exponential"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        r = np.asarray(self.rates, dtype=float)
        if w.shape != r.shape or w.ndim != 1 or w.size == 0:
            raise ModelError("mixed exponential needs equally many weights and rates")
        if np.any(w <= 0) or np.any(r <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ModelError("mixed exponential weights must be positive and sum to 1; rates positive")
        object.__setattr__(self, "weights", tuple(float(v) for v in w))
        object.__setattr__(self, "rates", tuple(float(v) for v in r))

    def params(self):
        return {"weights": list(self.weights), "rates": list(self.rates)}

    @property
    def _w(self):
        return np.asarray(self.weights)

    @property
    def _r(self):
        return np.asarray(self.rates)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        xe = np.maximum(x, 0.0)[..., None]
        val = (self._w * self._r * np.exp(-self._r * xe)).sum(-1)
        return _ret(x, np.where(x >= 0, val, 0.0))

    def sf(self, x):
        x = np.asarray(x, dtype=float)
        xe = np.maximum(x, 0.0)[..., None]
        return _ret(x, (self._w * np.exp(-self._r * xe)).sum(-1))

    @property
    def radius(self):
        return min(self.rates)

    @property
    def mean(self):
        return float((self._w / self._r).sum())

    def mgf(self, theta):
        if theta >= self.radius:
            return math.inf
        return float((self._w * self._r / (self._r - theta)).sum())

    def mgf_derivative(self, theta):
        if theta >= self.radius:
            return math.inf
        return float((self._w * self._r / (self._r - theta) ** 2).sum())

    def divided_difference(self, t1, t2):
        if max(t1, t2) >= self.radius:
            return math.inf
        return float((self._w * self._r / ((self._r - t1) * (self._r - t2))).sum())

    def stop_loss(self, x):
        x = np.asarray(x, dtype=float)
        xe = np.maximum(x, 0.0)[..., None]
        val = (self._w * np.exp(-self._r * xe) / self._r).sum(-1)
        return _ret(x, np.where(x >= 0, val, self.mean - x))

    def tilt(self, theta):
        if theta >= self.radius:
            raise InfiniteTilt(f"M({theta}) is infinite for mixed exponential")
        if theta == 0:
            return self
        raw = self._w * self._r / (self._r - theta)
        return MixedExponential(tuple(raw / raw.sum()), tuple(self._r - theta))

    def _components(self, rng, probs):
        u = rng.random(probs.shape[0])
        cdf = np.cumsum(probs, axis=1)
        idx = (u[:, None] > cdf).sum(axis=1)
        return np.minimum(idx, len(self.rates) - 1)

    def sample(self, rng, n):
        comp = self._components(rng, np.broadcast_to(self._w, (n, self._w.size)))
        return rng.standard_exponential(n) / self._r[comp]

    def sample_excess(self, rng, a):
        a = np.maximum(np.asarray(a, dtype=float), 0.0)
        logp = np.log(self._w) - self._r * a[:, None]
        logp -= logp.max(axis=1, keepdims=True)
        probs = np.exp(logp)
        probs /= probs.sum(axis=1, keepdims=True)
        comp = self._components(rng, probs)
        return a + rng.standard_exponential(a.shape) / self._r[comp]


@dataclass(frozen=True)
class TiltedPareto(ClaimDistribution):
    """Density proportional to e^{-tilt x} (1 + x/scale)^{-power} on (0, inf)."""

    tilt_rate: float
    power: float
    scale: float = 1.0
    kind = "tilted_pareto"

    def __post_init__(self):
        if not (self.tilt_rate >= 0 and self.power > 1 and self.scale > 0):
            raise ModelError("tilted pareto needs tilt >= 0, power > 1, scale > 0")
        a, p, s = self.tilt_rate, self.power, self.scale
        z = _quad_inf(lambda x: math.exp(-a * x) * (1.0 + x / s) ** (-p))
        object.__setattr__(self, "_norm", z)

    def params(self):
        return {"tilt": self.tilt_rate, "power": self.power, "scale": self.scale}

    @property
    def normalizer(self) -> float:
        return self._norm

    def _z(self, beta: float, power: float | None = None) -> float:
        """Integral of e^{-beta x}(1+x/s)^{-power} over (0, inf)."""
        p = self.power if power is None else power
        return self.scale * scaled_expint(p, beta * self.scale)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        xe = np.maximum(x, 0.0)
        val = np.exp(-self.tilt_rate * xe) * (1.0 + xe / self.scale) ** (-self.power) / self._norm
        return _ret(x, np.where(x >= 0, val, 0.0))

    def _upper(self, beta, x, power):
        """Integral of e^{-beta z}(1+z/s)^{-power} over z > x (x >= 0)."""
        s = self.scale
        y0 = 1.0 + x / s
        return s * np.exp(-beta * x) * y0 ** (1.0 - power) * scaled_expint(power, beta * s * y0)

    def sf(self, x):
        x = np.asarray(x, dtype=float)
        xe = np.maximum(x, 0.0)
        val = self._upper(self.tilt_rate, xe, self.power) / self._norm
        return _ret(x, np.minimum(np.where(x > 0, val, 1.0), 1.0))

    @property
    def radius(self):
        return self.tilt_rate

    @property
    def finite_at_radius(self):
        return True

    @cached_property
    def mean(self):
        return self.mgf_derivative(0.0)

    def mgf(self, theta):
        if theta > self.tilt_rate:
            return math.inf
        return self._z(self.tilt_rate - theta) / self._norm

    def mgf_derivative(self, theta):
        if theta > self.tilt_rate:
            return math.inf
        beta = self.tilt_rate - theta
        if beta == 0 and self.power <= 2:
            return math.inf
        s = self.scale
        return s * (self._z(beta, self.power - 1) - self._z(beta, self.power)) / self._norm

    def mgf_ratio(self, theta):
        if theta > self.tilt_rate:
            return math.inf
        if theta == 0.0:
            return self.mean
        if abs(theta) > 1e-3:
            return (self.mgf(theta) - 1.0) / theta
        return _quad_inf(lambda x: math.exp(theta * x) * float(self.sf(x)))

    def stop_loss(self, x):
        x = np.asarray(x, dtype=float)
        xe = np.maximum(x, 0.0)
        s, p, a = self.scale, self.power, self.tilt_rate
        y0 = 1.0 + xe / s
        t = a * s * y0
        if a == 0:
            val = s * s * y0 ** (2.0 - p) * (1.0 / (p - 2.0) - 1.0 / (p - 1.0)) / self._norm
        else:
            diff = scaled_expint(p - 1.0, t) - scaled_expint(p, t)
            val = s * s * np.exp(-a * xe) * y0 ** (2.0 - p) * diff / self._norm
        return _ret(x, np.where(x >= 0, val, self.mean - x))

    def _exp_factor(self, theta, xe):
        return np.exp((theta - self.tilt_rate) * xe)

    def exp_sf(self, theta, x):
        x = np.asarray(x, dtype=float)
        xe = np.maximum(x, 0.0)
        s, p = self.scale, self.power
        y0 = 1.0 + xe / s
        val = s * y0 ** (1.0 - p) * scaled_expint(p, self.tilt_rate * s * y0) / self._norm
        return _ret(x, np.where(x > 0, self._exp_factor(theta, xe) * val, np.exp(theta * np.minimum(x, 0.0))))

    def exp_stop_loss(self, theta, x):
        x = np.asarray(x, dtype=float)
        xe = np.maximum(x, 0.0)
        s, p, a = self.scale, self.power, self.tilt_rate
        y0 = 1.0 + xe / s
        if a == 0:
            diff = 1.0 / (p - 2.0) - 1.0 / (p - 1.0)
        else:
            diff = scaled_expint(p - 1.0, a * s * y0) - scaled_expint(p, a * s * y0)
        val = s * s * y0 ** (2.0 - p) * diff / self._norm
        return _ret(x, np.where(x >= 0, self._exp_factor(theta, xe) * val, np.exp(theta * np.minimum(x, 0.0)) * (self.mean - x)))

    def tilted_tail(self, theta, x):
        if theta > self.tilt_rate:
            raise InfiniteTilt(f"M({theta}) is infinite beyond the tilt {self.tilt_rate}")
        x = np.asarray(x, dtype=float)
        xe = np.maximum(x, 0.0)
        val = self._upper(self.tilt_rate - theta, xe, self.power) / self._norm
        return _ret(x, np.where(x > 0, val, self.mgf(theta)))

    def tilt(self, theta):
        if theta > self.tilt_rate:
            raise InfiniteTilt(f"M({theta}) is infinite beyond the tilt {self.tilt_rate}")
        if theta == 0:
            return self
        return TiltedPareto(self.tilt_rate - theta, self.power, self.scale)

    def moment_finite(self, theta, order):
        if theta <= 0.0 or theta < self.tilt_rate:
            return True
        return theta == self.tilt_rate and self.power - order > 1

    def sample(self, rng, n):
        a, p, s = self.tilt_rate, self.power, self.scale
        lomax_acc = (p - 1.0) * self._norm / s
        if a == 0 or lomax_acc >= a * self._norm:
            return _rejection(
                rng, n,
                lambda idx: s * (rng.random(idx.size) ** (-1.0 / (p - 1.0)) - 1.0),
                lambda x, idx: np.exp(-a * x),
            )
        return _rejection(
            rng, n,
            lambda idx: rng.standard_exponential(idx.size) / a,
            lambda x, idx: (1.0 + x / s) ** (-p),
        )

    def sample_excess(self, rng, a):
        lvl = np.maximum(np.asarray(a, dtype=float), 0.0)
        al, p, s = self.tilt_rate, self.power, self.scale
        use_exp = al * (s + lvl) > p - 1.0
        out = np.empty(lvl.shape)
        idx_e = np.flatnonzero(use_exp)
        idx_l = np.flatnonzero(~use_exp)
        if idx_e.size:
            base = lvl[idx_e]
            out[idx_e] = _rejection(
                rng, idx_e.size,
                lambda i: base[i] + rng.standard_exponential(i.size) / al,
                lambda x, i: ((s + x) / (s + base[i])) ** (-p),
            )
        if idx_l.size:
            base = lvl[idx_l]
            out[idx_l] = _rejection(
                rng, idx_l.size,
                lambda i: (s + base[i]) * rng.random(i.size) ** (-1.0 / (p - 1.0)) - s,
                lambda x, i: np.exp(-al * (x - base[i])),
            )
        return np.maximum(out, np.nextafter(lvl, np.inf))


_KINDS = {
    "exponential": (Exponential, ("rate",)),
    "gamma": (Gamma, ("shape", "rate")),
    "mixed_exponential": (MixedExponential, ("weights", "rates")),
    "tilted_pareto": (TiltedPareto, ("tilt", "power", "scale")),
}


def claims_from_params(kind: str, params: dict) -> ClaimDistribution:
    """Build a claim law from its kind name and a parameter mapping."""
    if kind not in _KINDS:
        raise ModelError(f"unknown claim kind {kind!r}; expected one of {sorted(_KINDS)}")
    cls, names = _KINDS[kind]
    unknown = set(params) - set(names)
    if unknown:
        raise ModelError(f"unknown parameters for {kind}: {sorted(unknown)}")
    missing = [k for k in names if k not in params and k != "scale"]
    if missing:
        raise ModelError(f"missing parameters for {kind}: {missing}")
    if kind == "tilted_pareto":
        return TiltedPareto(params["tilt"], params["power"], params.get("scale", 1.0))
    if kind == "mixed_exponential":
        return MixedExponential(tuple(params["weights"]), tuple(params["rates"]))
    return cls(*(params[k] for k in names))


@dataclass(frozen=True)
class RiskModel:
    """Claim surplus X_t = sum_{i <= N_t} xi_i - c t with N a Poisson process.

    ``check_drift=False`` is reserved for Esscher-tilted models, which are
    allowed to drift upwards.
    """

    premium_rate: float
    claim_intensity: float
    claims: ClaimDistribution
    check_drift: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        if not (self.premium_rate > 0 and math.isfinite(self.premium_rate)):
            raise ModelError("premium_rate must be positive and finite")
        if not (self.claim_intensity > 0 and math.isfinite(self.claim_intensity)):
            raise ModelError("claim_intensity must be positive and finite")
        if self.check_drift and not self.mean_drift < 0:
            raise ModelError(
                f"mean drift lambda*E[xi] - c = {self.mean_drift:.6g} must be negative"
            )

    @property
    def mean_drift(self) -> float:
        return self.claim_intensity * self.claims.mean - self.premium_rate

    @property
    def rho(self) -> float:
        """Ruin probability from zero reserve: lambda E[xi] / c."""
        return self.claim_intensity * self.claims.mean / self.premium_rate

    def psi(self, theta: float) -> float:
        return laplace_exponent(self, theta)

    def psi_prime(self, theta: float) -> float:
        d = self.claims.mgf_derivative(theta)
        return self.claim_intensity * d - self.premium_rate

    def levy_tail(self, x):
        """Tail of the Levy measure, lambda * P(xi > x)."""
        return self.claim_intensity * self.claims.sf(x)

    def as_dict(self) -> dict:
        return {
            "premium_rate": self.premium_rate,
            "claim_intensity": self.claim_intensity,
            "claims": self.claims.as_dict(),
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def laplace_exponent(model: RiskModel, theta):
    """psi(theta) = log E e^{theta X_1} = lambda (M(theta) - 1) - c theta; +inf off-domain."""
    if np.ndim(theta) > 0:
        return np.array([laplace_exponent(model, float(t)) for t in np.ravel(theta)]).reshape(np.shape(theta))
    theta = float(theta)
    m1 = model.claims.mgf_minus_one(theta) if model.claims.mgf_finite(theta) else math.inf
    if math.isinf(m1):
        return math.inf
    return model.claim_intensity * m1 - model.premium_rate * theta


def lundberg_root(model: RiskModel) -> float:
    """Positive root of psi, searched on (0, radius - gap]."""
    claims = model.claims
    lam, c = model.claim_intensity, model.premium_rate
    hi = claims.radius if claims.finite_at_radius else claims.radius - ROOT_GAP

    def h(t):
        return lam * claims.mgf_ratio(t) - c

    h_hi = h(hi)
    if not h_hi >= 0:
        raise NoPositiveRoot(f"psi < 0 on the whole finite-moment domain (psi/theta at {hi:.6g} is {h_hi:.3g})")
    if h_hi == 0:
        return hi
    root = optimize.brentq(h, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(root * h(root)) > 1e-12 * max(1.0, c * root):
        root = optimize.brentq(h, root * (1 - 1e-9), min(hi, root * (1 + 1e-9)), xtol=1e-16)
    return float(root)


class Regime(str, Enum):
    CRAMER_LUNDBERG = "cramer_lundberg"
    CONVOLUTION_EQUIVALENT = "convolution_equivalent"
    NEITHER = "neither"


@dataclass(frozen=True)
class RegimeClassification:
    regime: Regime
    alpha: float | None

    @property
    def is_cramer(self) -> bool:
        return self.regime is Regime.CRAMER_LUNDBERG

    @property
    def is_convolution_equivalent(self) -> bool:
        return self.regime is Regime.CONVOLUTION_EQUIVALENT


def classify_regime(model: RiskModel) -> RegimeClassification:
    claims = model.claims
    try:
        alpha = lundberg_root(model)
    except NoPositiveRoot:
        alpha = None
    if alpha is not None:
        if math.isfinite(claims.mgf_derivative(alpha)):
            return RegimeClassification(Regime.CRAMER_LUNDBERG, alpha)
        return RegimeClassification(Regime.NEITHER, None)
    if isinstance(claims, TiltedPareto) and claims.tilt_rate > 0:
        a = claims.tilt_rate
        if laplace_exponent(model, a) < 0:
            return RegimeClassification(Regime.CONVOLUTION_EQUIVALENT, a)
    return RegimeClassification(Regime.NEITHER, None)


def esscher_transform(model: RiskModel, theta: float) -> RiskModel:
    """Exponentially tilted model: intensity lambda M(theta), claims e^{theta x} f / M."""
    if theta == 0:
        return model
    claims = model.claims
    if not claims.mgf_finite(theta):
        raise InfiniteTilt(f"M({theta}) is infinite for {claims.kind}")
    return RiskModel(
        model.premium_rate,
        model.claim_intensity * claims.mgf(theta),
        claims.tilt(theta),
        check_drift=False,
    )


def moment_condition_check(model: RiskModel, theta: float, order: int) -> bool:
    """Whether E |X_1|^order e^{theta X_1} is finite."""
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    return model.claims.moment_finite(theta, order)
