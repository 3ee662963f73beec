"""Batched Monte Carlo estimates of conditional ruin functionals and distances to limit laws."""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import EmptyWindow, NoRuinEvents, RegimeMismatch
from .limit_laws import VAGUE, LimitLaw
from .path_sim import (
    FirstPassageBatch,
    simulate_first_passage_batch,
    simulate_first_passage_mixture_batch,
    simulate_first_passage_tilted_batch,
)
from .risk_model import RiskModel, classify_regime
from .rng import StreamSeed

__all__ = [
    "EstimatorResult",
    "BatchPlan",
    "Distances",
    "ConvergenceTable",
    "Indicator",
    "ExpMoment",
    "Window",
    "simulate_plan",
    "reduce_batches",
    "run_conditional_estimate",
    "estimate_ruin_probability",
    "compare_to_limit",
    "convergence_ladder",
]

Z95 = 1.959963984540054
METHODS = ("plain", "tilted", "mixture")


@dataclass(frozen=True)
class EstimatorResult:
    estimate: float
    std_error: float
    n_effective: float
    batches: int
    n_paths: int
    master_seed: int
    first_stream: int
    method: str
    u: float
    target: float | None = None
    n_se: float = 3.0

    def __post_init__(self):
        if not self.std_error >= 0:
            raise ValueError("std_error must be nonnegative")

    @property
    def interval(self) -> tuple[float, float]:
        return self.estimate - Z95 * self.std_error, self.estimate + Z95 * self.std_error

    @property
    def z_score(self) -> float | None:
        if self.target is None:
            return None
        if self.std_error == 0:
            return 0.0 if self.estimate == self.target else math.inf
        return (self.estimate - self.target) / self.std_error

    @property
    def verdict(self) -> str | None:
        """'pass' when within n_se standard errors of the target."""
        z = self.z_score
        if z is None:
            return None
        return "pass" if abs(z) <= self.n_se else "fail"

    def against(self, target: float, n_se: float = 3.0) -> "EstimatorResult":
        return EstimatorResult(**{**asdict(self), "target": float(target), "n_se": float(n_se)})

    def as_row(self) -> dict:
        row = asdict(self)
        row["verdict"] = self.verdict
        return row


@dataclass(frozen=True)
class BatchPlan:
    """Batch b draws from StreamSeed(master_seed, first_stream + b)."""

    n_paths: int
    n_batches: int
    master_seed: int
    first_stream: int = 0
    u_ladder: tuple[float, ...] = ()
    horizon: float = 1e4

    def __post_init__(self):
        if self.n_paths < 1 or self.n_batches < 1:
            raise ValueError("n_paths and n_batches must be positive")

    def streams(self) -> list[StreamSeed]:
        return [StreamSeed(self.master_seed, self.first_stream + b) for b in range(self.n_batches)]

    def shifted(self, offset: int) -> "BatchPlan":
        """Same plan on a disjoint block of streams."""
        return BatchPlan(self.n_paths, self.n_batches, self.master_seed,
                         self.first_stream + offset, self.u_ladder, self.horizon)


@dataclass(frozen=True)
class Indicator:
    """1(lo <= record.field <= hi)."""

    field: str
    lo: float = -math.inf
    hi: float = math.inf

    def __call__(self, b: FirstPassageBatch) -> np.ndarray:
        v = getattr(b, self.field)
        return ((v >= self.lo) & (v <= self.hi)).astype(float)


@dataclass(frozen=True)
class ExpMoment:
    """exp(rate * record.field)."""

    field: str
    rate: float

    def __call__(self, b: FirstPassageBatch) -> np.ndarray:
        return np.exp(self.rate * getattr(b, self.field))


@dataclass(frozen=True)
class Window:
    """Product of a function of the undershoot of the max and an overshoot window."""

    phi: Callable[[np.ndarray], np.ndarray]
    lo: float
    hi: float

    def __call__(self, b: FirstPassageBatch) -> np.ndarray:
        ok = (b.overshoot > self.lo) & (b.overshoot <= self.hi)
        return np.where(ok, self.phi(b.undershoot_max), 0.0)


def _one(const: float) -> Callable:
    return lambda b: np.full(len(b), const)


def _simulate(job) -> FirstPassageBatch:
    model, u, n, method, alpha, stream, horizon = job
    if method == "plain":
        return simulate_first_passage_batch(model, u, n, horizon, stream)
    if method == "tilted":
        return simulate_first_passage_tilted_batch(model, u, n, alpha, stream)
    return simulate_first_passage_mixture_batch(model, u, n, alpha, stream)


def _worker_count(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get("RUINLAB_WORKERS", "1"))
    return max(1, workers)


def _method_alpha(model: RiskModel, method: str) -> float | None:
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    if method == "plain":
        return None
    regime = classify_regime(model)
    if method == "tilted" and not regime.is_cramer:
        raise RegimeMismatch("tilted sampling needs the Cramer-Lundberg regime")
    if method == "mixture" and not regime.is_convolution_equivalent:
        raise RegimeMismatch("mixture sampling needs the convolution-equivalent regime")
    return regime.alpha


def simulate_plan(
    model: RiskModel, u: float, plan: BatchPlan, method: str = "plain", workers: int | None = None
) -> list[FirstPassageBatch]:
    """Run every batch of the plan; results are ordered by batch index whatever the worker count."""
    alpha = _method_alpha(model, method)
    jobs = [(model, u, plan.n_paths, method, alpha, s, plan.horizon) for s in plan.streams()]
    w = _worker_count(workers)
    if w == 1 or len(jobs) == 1:
        return [_simulate(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(w, len(jobs))) as pool:
        return list(pool.map(_simulate, jobs))


def _ratio_plain(num: np.ndarray, den: np.ndarray) -> tuple[float, float]:
    """Ratio of means with a delta-method standard error."""
    n = num.size
    a, b = num.mean(), den.mean()
    r = a / b
    resid = num - r * den
    return float(r), float(resid.std(ddof=1) / (b * math.sqrt(n))) if n > 1 else 0.0


def _ratio_jackknife(nums: Sequence[float], dens: Sequence[float]) -> tuple[float, float]:
    """Ratio of batch totals with a delete-one-batch jackknife standard error."""
    N, D = np.asarray(nums), np.asarray(dens)
    B = N.size
    r = N.sum() / D.sum()
    if B < 2:
        return float(r), math.nan
    loo = (N.sum() - N) / (D.sum() - D)
    var = (B - 1) / B * np.sum((loo - loo.mean()) ** 2)
    return float(r), float(math.sqrt(var))


def reduce_batches(batches, functional, method: str, plan: BatchPlan, u: float) -> EstimatorResult:
    """Conditional estimate from already simulated batches (see run_conditional_estimate)."""
    nums, dens, ws = [], [], []
    num_all, den_all = [], []
    for b in batches:
        w = b.ruin_weights()
        f = np.zeros(len(b))
        r = b.ruined
        if np.any(r):
            f[r] = functional(b.subset(r))
        # a zero likelihood ratio kills the path even when f overflowed on it
        with np.errstate(invalid="ignore"):
            wf = np.where(w > 0, w * f, 0.0)
        nums.append(float(np.sum(wf)))
        dens.append(float(np.sum(w)))
        num_all.append(wf)
        den_all.append(w)
        ws.append(w[r])
    w_r = np.concatenate(ws)
    if method == "plain":
        if w_r.size == 0:
            raise NoRuinEvents(f"no ruined paths at u={u}")
        est, se = _ratio_plain(np.concatenate(num_all), np.concatenate(den_all))
        n_eff = float(w_r.size)
    else:
        if w_r.size == 0 or not np.sum(w_r) > 0:
            raise NoRuinEvents(f"no weighted ruin events at u={u}")
        est, se = _ratio_jackknife(nums, dens)
        n_eff = float(np.sum(w_r) ** 2 / np.sum(w_r**2))
    return EstimatorResult(est, se, n_eff, len(batches), plan.n_paths * len(batches),
                           plan.master_seed, plan.first_stream, method, float(u))


def run_conditional_estimate(
    model: RiskModel,
    u: float,
    functional: Callable[[FirstPassageBatch], np.ndarray] | None,
    plan: BatchPlan,
    method: str = "plain",
    workers: int | None = None,
) -> EstimatorResult:
    """E[F | tau(u) < inf] as a (weighted) ratio estimator.

    ``functional`` maps a batch of ruined records to per-record values; None
    means F = 1.  Plain sampling uses a delta-method standard error, the
    weighted samplers a jackknife over batches.
    """
    if functional is None:
        functional = _one(1.0)
    batches = simulate_plan(model, u, plan, method, workers)
    return reduce_batches(batches, functional, method, plan, u)


def estimate_ruin_probability(
    model: RiskModel, u: float, plan: BatchPlan, method: str = "plain", workers: int | None = None
) -> EstimatorResult:
    """P(tau(u) < inf) as the mean of weight * 1(ruined), with the i.i.d. standard error."""
    batches = simulate_plan(model, u, plan, method, workers)
    w = np.concatenate([b.ruin_weights() for b in batches])
    wr = w[w > 0]
    n_eff = float(np.sum(wr) ** 2 / np.sum(wr**2)) if wr.size else 0.0
    se = float(w.std(ddof=1) / math.sqrt(w.size)) if w.size > 1 else 0.0
    return EstimatorResult(float(w.mean()), se, n_eff, len(batches), int(w.size),
                           plan.master_seed, plan.first_stream, method, float(u))


@dataclass(frozen=True)
class Distances:
    ks: float
    ks_std_error: float
    tv: float
    tv_std_error: float
    n: int
    n_effective: float
    window: tuple[float, float]
    bins: int
    law_window_mass: float
    sample_window_mass: float


def _weighted_ks(x, F, w) -> float:
    """KS distance between the weighted empirical cdf of x and law values F at x."""
    order = np.argsort(x, kind="stable")
    Fs, ws = F[order], w[order]
    cw = np.cumsum(ws) / ws.sum()
    before = np.concatenate([[0.0], cw[:-1]])
    return float(max(np.max(np.abs(cw - Fs)), np.max(np.abs(before - Fs))))


def _tv(cell, w, nbins, law_cell) -> float:
    h = np.bincount(cell, weights=w, minlength=nbins) / w.sum()
    return float(0.5 * np.sum(np.abs(h - law_cell)))


def compare_to_limit(
    samples: np.ndarray,
    law: LimitLaw,
    window: tuple[float, float] | None = None,
    weights: np.ndarray | None = None,
    bins: int = 50,
    n_boot: int = 200,
    seed: int = 0,
) -> Distances:
    """Kolmogorov-Smirnov and binned total-variation distances between samples and a limit law.

    Both sides are conditioned on the window; vague limits need a compact one.
    Standard errors come from a weighted bootstrap.
    """
    x = np.asarray(samples, dtype=float)
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    if x.shape != w.shape:
        raise ValueError("samples and weights differ in shape")
    if window is None:
        if law.convergence_mode == VAGUE:
            raise ValueError("a vague limit needs a compact comparison window")
        lo, hi = 0.0, math.inf
    else:
        lo, hi = map(float, window)
        if law.convergence_mode == VAGUE and not math.isfinite(hi):
            raise ValueError("a vague limit needs a compact comparison window")
    inside = (x >= lo) & (x <= hi) & (w > 0)
    if not np.any(inside):
        raise EmptyWindow(f"no samples in [{lo}, {hi}]")
    c_lo = law.cdf(lo) - (law.atom_at_zero if lo == 0 else 0.0)
    c_hi = law.total_mass if math.isinf(hi) else law.cdf(hi)
    law_mass = c_hi - c_lo
    if not law_mass > 0:
        raise EmptyWindow(f"the law puts no mass in [{lo}, {hi}]")
    law_cdf = lambda t: (np.asarray(law.cdf(t)) - c_lo) / law_mass
    xi, wi = x[inside], w[inside]
    top = hi if math.isfinite(hi) else float(np.quantile(xi, 0.999))
    edges = np.linspace(lo, top, bins + 1)
    law_cell = np.diff(np.concatenate([law_cdf(edges[:-1]), [law_cdf(edges[-1])]]))
    if not math.isfinite(hi):
        edges = np.append(edges, np.inf)
        law_cell = np.append(law_cell, 1.0 - law_cdf(top))
    F = np.asarray(law_cdf(xi), dtype=float)
    cell = np.clip(np.searchsorted(edges, xi, side="right") - 1, 0, law_cell.size - 1)
    ks = _weighted_ks(xi, F, wi)
    tv = _tv(cell, wi, law_cell.size, law_cell)
    rng = np.random.default_rng(seed)
    boot_ks, boot_tv = [], []
    m = xi.size
    for _ in range(n_boot):
        idx = rng.integers(0, m, m)
        boot_ks.append(_weighted_ks(xi[idx], F[idx], wi[idx]))
        boot_tv.append(_tv(cell[idx], wi[idx], law_cell.size, law_cell))
    ks_se = float(np.std(boot_ks, ddof=1)) if len(boot_ks) > 1 else math.nan
    tv_se = float(np.std(boot_tv, ddof=1)) if len(boot_tv) > 1 else math.nan
    n_eff = float(wi.sum() ** 2 / np.sum(wi**2))
    return Distances(ks, ks_se, tv, tv_se, int(xi.size), n_eff, (lo, hi), bins,
                     float(law_mass), float(w[inside].sum() / w.sum()))


@dataclass(frozen=True)
class ConvergenceTable:
    results: tuple[EstimatorResult, ...]
    differences: tuple[float, ...] = field(default=())

    @property
    def shrinking(self) -> bool:
        d = np.abs(self.differences)
        return bool(d.size < 2 or np.all(np.diff(d) <= 0))

    def plateau_from(self, target: float, n_se: float = 3.0) -> float | None:
        """Smallest u from which every estimate is within n_se of the target."""
        first = None
        for r in reversed(self.results):
            if abs(r.estimate - target) <= n_se * r.std_error:
                first = r.u
            else:
                break
        return first

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["u", "estimate", "std_error", "n_effective", "batches", "n_paths",
                "master_seed", "first_stream", "method", "target", "verdict"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.results:
            row = r.as_row()
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
        return buf.getvalue()


def convergence_ladder(
    model: RiskModel,
    functional: Callable | None,
    u_ladder: Sequence[float],
    plan: BatchPlan,
    method: str = "plain",
    workers: int | None = None,
) -> ConvergenceTable:
    """run_conditional_estimate at each level, each level on its own block of streams."""
    results = []
    for i, u in enumerate(u_ladder):
        block = plan.shifted(i * plan.n_batches)
        results.append(run_conditional_estimate(model, u, functional, block, method, workers))
    diffs = tuple(float(b.estimate - a.estimate) for a, b in zip(results, results[1:]))
    return ConvergenceTable(tuple(results), diffs)
