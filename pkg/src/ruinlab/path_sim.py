"""Exact event-driven simulation of the claim-surplus process.

Between claims the path falls linearly at rate c, so first passage above a
level can only happen at a claim instant.  All simulators step a whole batch
of independent paths at once, one claim per iteration, and drop paths from
the active set as they finish.

A path that sinks more than ``safe_depth`` below the barrier is declared
never to cross it.  The depth is chosen so that the probability of a later
crossing is below 1e-12 (see ``default_safe_depth``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import HorizonAmbiguous, InfiniteTilt, ModelError
from .risk_model import RiskModel, classify_regime, esscher_transform, laplace_exponent
from .rng import StreamSeed

__all__ = [
    "FirstPassageRecord",
    "FirstPassageBatch",
    "ExcursionRecord",
    "ExcursionBatch",
    "LadderSample",
    "LadderBatch",
    "OccupationHistogram",
    "MixtureProposal",
    "default_safe_depth",
    "simulate_first_passage",
    "simulate_first_passage_batch",
    "simulate_first_passage_tilted",
    "simulate_first_passage_tilted_batch",
    "simulate_first_passage_mixture_batch",
    "simulate_excursion",
    "simulate_excursion_batch",
    "simulate_descending_ladder",
    "simulate_descending_ladder_batch",
    "occupation_histogram",
]

SAFE_PROBABILITY = 1e-12


def default_safe_depth(model: RiskModel, alpha: float | None = None) -> float:
    """Depth D below the barrier with rho * e^{-alpha D} = 1e-12."""
    if alpha is None:
        alpha = classify_regime(model).alpha
    if alpha is None:
        raise ModelError("no exponential decay rate available; pass safe_depth explicitly")
    return max(math.log(max(model.rho, 1e-300) / SAFE_PROBABILITY), 0.0) / alpha


@dataclass(frozen=True)
class FirstPassageRecord:
    ruined: bool
    tau: float
    last_max_time: float
    passage_delay: float
    undershoot_max: float
    undershoot_path: float
    overshoot: float
    weight: float = 1.0


RECORD_FIELDS = tuple(f.name for f in fields(FirstPassageRecord))


@dataclass
class FirstPassageBatch:
    """Column arrays of first-passage records; unset entries are NaN."""

    ruined: np.ndarray
    tau: np.ndarray
    last_max_time: np.ndarray
    passage_delay: np.ndarray
    undershoot_max: np.ndarray
    undershoot_path: np.ndarray
    overshoot: np.ndarray
    weight: np.ndarray

    @classmethod
    def empty(cls, n: int) -> "FirstPassageBatch":
        nan = lambda: np.full(n, np.nan)
        return cls(np.zeros(n, dtype=bool), nan(), nan(), nan(), nan(), nan(), nan(), np.ones(n))

    @classmethod
    def concat(cls, batches: Sequence["FirstPassageBatch"]) -> "FirstPassageBatch":
        return cls(*(np.concatenate([getattr(b, k) for b in batches]) for k in RECORD_FIELDS))

    def __len__(self) -> int:
        return self.ruined.size

    def record(self, i: int) -> FirstPassageRecord:
        return FirstPassageRecord(
            bool(self.ruined[i]), *(float(getattr(self, k)[i]) for k in RECORD_FIELDS[1:])
        )

    def records(self) -> Iterator[FirstPassageRecord]:
        return (self.record(i) for i in range(len(self)))

    def subset(self, mask) -> "FirstPassageBatch":
        return FirstPassageBatch(*(getattr(self, k)[mask] for k in RECORD_FIELDS))

    def ruin_weights(self) -> np.ndarray:
        """weight * 1(ruined); its mean estimates P(tau(u) < inf)."""
        return np.where(self.ruined, self.weight, 0.0)

    def final_claim(self) -> np.ndarray:
        return self.overshoot + self.undershoot_path


@dataclass(frozen=True)
class ExcursionRecord:
    completed: bool
    duration: float
    terminal: float
    pre_terminal: float
    path_events: tuple[tuple[float, float], ...] = ()
    discounted_mark: float = 0.0
    weight: float = 1.0


@dataclass
class ExcursionBatch:
    """Excursions from zero up to the first passage above zero.

    Under a tilted proposal ``weight`` is the likelihood ratio e^{-a X + psi(a) t}
    evaluated at the passage, so E[weight g; completed] = E[g; tau(0) < inf].
    """

    completed: np.ndarray
    duration: np.ndarray
    terminal: np.ndarray
    pre_terminal: np.ndarray
    discounted_mark: np.ndarray
    weight: np.ndarray
    horizon: float

    def __len__(self) -> int:
        return self.completed.size

    @classmethod
    def concat(cls, batches: Sequence["ExcursionBatch"]) -> "ExcursionBatch":
        keys = ("completed", "duration", "terminal", "pre_terminal", "discounted_mark", "weight")
        return cls(*(np.concatenate([getattr(b, k) for b in batches]) for k in keys), batches[0].horizon)

    def subset(self, mask) -> "ExcursionBatch":
        keys = ("completed", "duration", "terminal", "pre_terminal", "discounted_mark", "weight")
        return ExcursionBatch(*(getattr(self, k)[mask] for k in keys), self.horizon)

    def record(self, i: int) -> ExcursionRecord:
        return ExcursionRecord(
            bool(self.completed[i]), float(self.duration[i]), float(self.terminal[i]),
            float(self.pre_terminal[i]), (), float(self.discounted_mark[i]), float(self.weight[i]),
        )


class MixtureProposal:
    """Claim proposal for the heavy-tailed (convolution equivalent) regime.

    Until a path has used it, each claim is drawn with probability ``mix`` from
    the original law conditioned to land no lower than ``buffer`` below the
    barrier; otherwise from the base law.  After the first such draw the path
    follows the base dynamics only.  The base is the original model, or with
    ``tilted=True`` the Esscher tilt by alpha (arrivals at rate lambda M(alpha)).
    """

    def __init__(
        self,
        model: RiskModel,
        alpha: float,
        mix: float = 0.02,
        buffer: float | None = None,
        tilted: bool = True,
        once: bool = True,
    ):
        if not model.claims.mgf_finite(alpha):
            raise InfiniteTilt(f"M({alpha}) is infinite")
        if not 0.0 <= mix < 1.0:
            raise ValueError("mix must lie in [0, 1)")
        self.model = model
        self.alpha = alpha
        self.mix = mix
        self.buffer = 2.0 / alpha if buffer is None else buffer
        self.tilted = tilted
        self.once = once
        self.m_alpha = model.claims.mgf(alpha) if tilted else 1.0
        self.rate = model.claim_intensity * self.m_alpha
        self.base = model.claims.tilt(alpha) if tilted else model.claims
        self._used: np.ndarray | None = None

    def reset(self, n: int) -> None:
        self._used = np.zeros(n, dtype=bool)

    def draw(self, rng: np.random.Generator, distance: np.ndarray, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Claim sizes and log f / q, the claim part of the likelihood ratio."""
        n = distance.size
        a = np.maximum(distance - self.buffer, 0.0)
        mix = np.where(self._used[idx], 0.0, self.mix)
        pick = rng.random(n) < mix
        xi = np.empty(n)
        if np.any(pick):
            xi[pick] = self.model.claims.sample_excess(rng, a[pick])
        if np.any(~pick):
            xi[~pick] = self.base.sample(rng, int((~pick).sum()))
        if self.once:
            self._used[idx[pick]] = True
        tail = np.asarray(self.model.claims.sf(a), dtype=float)
        with np.errstate(divide="ignore"):
            log_big = np.where(xi > a, np.log(mix) + math.log(self.m_alpha) - np.log(np.maximum(tail, 1e-300)), -np.inf)
            log_base = np.log1p(-mix) + (self.alpha * xi if self.tilted else 0.0)
        log_q = np.logaddexp(log_base, log_big)
        return xi, math.log(self.m_alpha) - log_q


def _passage_engine(
    model: RiskModel,
    u: float,
    n: int,
    rng: np.random.Generator,
    horizon: float,
    safe_depth: float,
    *,
    rate: float | None = None,
    sample_claims: Callable | None = None,
    segment_hook: Callable | None = None,
    events: list | None = None,
) -> tuple[FirstPassageBatch, np.ndarray]:
    """Run n paths from 0 until the first claim that lifts X above u.

    ``sample_claims(rng, distance)`` may return (claims, log-ratio increments);
    the arrival part of the likelihood ratio, log(lambda/rate) + (rate - lambda) T,
    is added here.
    Returns the batch and the accumulated log likelihood ratio per path.
    """
    c = model.premium_rate
    lam = model.claim_intensity
    rate = lam if rate is None else rate
    log_rate_ratio = math.log(rate / lam)
    floor = u - safe_depth
    out = FirstPassageBatch.empty(n)
    log_lr = np.zeros(n)
    t = np.zeros(n)
    x = np.zeros(n)
    xmax = np.zeros(n)
    gtime = np.zeros(n)
    idx = np.arange(n)
    while idx.size:
        T = rng.standard_exponential(idx.size) / rate
        t0 = t[idx]
        x0 = x[idx]
        t1 = t0 + T
        over = t1 > horizon
        if np.any(over):
            hz = idx[over]
            level = x0[over] - c * (horizon - t0[over])
            if np.any(level >= floor):
                raise HorizonAmbiguous(
                    f"{int(np.sum(level >= floor))} path(s) within safe depth of the barrier at horizon {horizon}"
                )
            if segment_hook is not None:
                segment_hook(hz, x0[over], level)
            log_lr[hz] += (rate - lam) * (horizon - t0[over])
            t[hz] = horizon
            keep = ~over
            idx, t0, x0, t1, T = idx[keep], t0[keep], x0[keep], t1[keep], T[keep]
        x_pre = x0 - c * T
        if segment_hook is not None:
            segment_hook(idx, x0, x_pre)
        log_lr[idx] += (rate - lam) * T - log_rate_ratio
        deep = x_pre < floor
        if np.any(deep):
            t[idx[deep]] = t1[deep]
            keep = ~deep
            idx, t1, x_pre = idx[keep], t1[keep], x_pre[keep]
        if not idx.size:
            break
        dist = u - x_pre
        if sample_claims is None:
            xi = model.claims.sample(rng, idx.size)
        else:
            xi, inc = sample_claims(rng, dist, idx)
            log_lr[idx] += inc
        ruin = xi > dist
        if events is not None:
            for j, i in enumerate(idx):
                if i < len(events):
                    events[i].append((float(t1[j]), float(x_pre[j] + xi[j])))
        if np.any(ruin):
            r = idx[ruin]
            xr = xi[ruin]
            a0 = dist[ruin]
            over_ = xr - a0
            under_path = xr - over_
            tau = t1[ruin]
            g = gtime[r]
            delay = tau - g
            out.ruined[r] = True
            out.tau[r] = tau
            out.passage_delay[r] = delay
            out.last_max_time[r] = tau - delay
            out.overshoot[r] = over_
            out.undershoot_path[r] = under_path
            out.undershoot_max[r] = np.maximum(np.minimum(u - xmax[r], under_path), 0.0)
            t[r] = tau
        keep = ~ruin
        idx, t1, xn = idx[keep], t1[keep], x_pre[keep] + xi[keep]
        t[idx] = t1
        x[idx] = xn
        up = xn > xmax[idx]
        if np.any(up):
            xmax[idx[up]] = xn[up]
            gtime[idx[up]] = t1[up]
    return out, log_lr


def _resolve_depth(model, safe_depth, alpha=None, relative_to=0.0):
    """Explicit depth, or the default one measured below the start instead of the barrier.

    Importance-sampled runs estimate probabilities far below 1e-12, so the
    crossing probability after censoring must be small relative to psi(u):
    with relative_to = u the floor sits at the default depth below zero.
    """
    if safe_depth is not None:
        return float(safe_depth)
    return relative_to + default_safe_depth(model, alpha)


def simulate_first_passage_batch(
    model: RiskModel,
    u: float,
    n: int,
    horizon: float,
    seed: StreamSeed,
    safe_depth: float | None = None,
) -> FirstPassageBatch:
    """Plain simulation of n independent paths; weight is 1 throughout."""
    if not (u >= 0 and horizon > 0):
        raise ValueError("need u >= 0 and horizon > 0")
    depth = _resolve_depth(model, safe_depth)
    batch, _ = _passage_engine(model, u, n, seed.generator(), horizon, depth)
    return batch


def simulate_first_passage(model, u, horizon, seed, safe_depth=None) -> FirstPassageRecord:
    return simulate_first_passage_batch(model, u, 1, horizon, seed, safe_depth).record(0)


def simulate_first_passage_tilted_batch(
    model: RiskModel,
    u: float,
    n: int,
    alpha: float,
    seed: StreamSeed,
    horizon: float = math.inf,
    safe_depth: float | None = None,
) -> FirstPassageBatch:
    """Simulate under the Esscher tilt by alpha.

    weight = exp(-alpha X_tau + psi(alpha) tau); under the Lundberg root
    psi(alpha) = 0 and weight = e^{-alpha (u + overshoot)}.
    """
    if not u > 0:
        raise ValueError("u must be positive")
    tilted = esscher_transform(model, alpha)
    psi_a = laplace_exponent(model, alpha)
    depth = _resolve_depth(model, safe_depth, alpha, relative_to=u)
    batch, _ = _passage_engine(tilted, u, n, seed.generator(), horizon, depth)
    r = batch.ruined
    w = np.zeros(n)
    w[r] = np.exp(-alpha * (u + batch.overshoot[r]) + psi_a * batch.tau[r])
    batch.weight = w
    return batch


def simulate_first_passage_tilted(model, u, alpha, seed, horizon=math.inf) -> FirstPassageRecord:
    return simulate_first_passage_tilted_batch(model, u, 1, alpha, seed, horizon).record(0)


def simulate_first_passage_mixture_batch(
    model: RiskModel,
    u: float,
    n: int,
    alpha: float,
    seed: StreamSeed,
    mix: float = 0.02,
    buffer: float | None = None,
    tilted: bool = True,
    horizon: float = math.inf,
    safe_depth: float | None = None,
) -> FirstPassageBatch:
    """Importance sampling with the big-jump mixture proposal (see MixtureProposal)."""
    if not u > 0:
        raise ValueError("u must be positive")
    prop = MixtureProposal(model, alpha, mix, buffer, tilted=tilted)
    prop.reset(n)
    depth = _resolve_depth(model, safe_depth, alpha, relative_to=u)
    batch, log_lr = _passage_engine(
        model, u, n, seed.generator(), horizon, depth, rate=prop.rate, sample_claims=prop.draw
    )
    batch.weight = np.where(batch.ruined, np.exp(log_lr), 0.0)
    return batch


def simulate_excursion_batch(
    model: RiskModel,
    n: int,
    horizon: float,
    seed: StreamSeed,
    tilt: float | None = None,
    safe_depth: float | None = None,
    segment_hook: Callable | None = None,
) -> ExcursionBatch:
    """Paths from 0 stopped at the first passage above 0.

    With ``tilt`` set, paths follow the Esscher-tilted model and carry the
    likelihood ratio back to the original law as their weight.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    alpha = tilt
    depth = _resolve_depth(model, safe_depth, alpha)
    sim_model = model if not tilt else esscher_transform(model, tilt)
    b, _ = _passage_engine(sim_model, 0.0, n, seed.generator(), horizon, depth, segment_hook=segment_hook)
    done = b.ruined
    weight = np.ones(n)
    if tilt:
        psi_a = laplace_exponent(model, tilt)
        weight = np.where(done, np.exp(-tilt * b.overshoot + psi_a * b.tau), 0.0)
    return ExcursionBatch(
        completed=done,
        duration=np.where(done, b.tau, horizon),
        terminal=b.overshoot,
        pre_terminal=b.undershoot_path,
        discounted_mark=np.where(done, np.exp(-np.where(done, b.tau, 0.0)), 0.0),
        weight=weight,
        horizon=horizon,
    )


def simulate_excursion(
    model: RiskModel, horizon: float, seed: StreamSeed, keep_path: bool = False, safe_depth: float | None = None
) -> ExcursionRecord:
    """One excursion; ``keep_path`` stores (time, level) after every claim."""
    events: list | None = [[]] if keep_path else None
    depth = _resolve_depth(model, safe_depth)
    b, _ = _passage_engine(model, 0.0, 1, seed.generator(), horizon, depth, events=events)
    done = bool(b.ruined[0])
    return ExcursionRecord(
        completed=done,
        duration=float(b.tau[0]) if done else horizon,
        terminal=float(b.overshoot[0]),
        pre_terminal=float(b.undershoot_path[0]),
        path_events=tuple(events[0]) if events else (),
        discounted_mark=math.exp(-float(b.tau[0])) if done else 0.0,
    )


@dataclass(frozen=True)
class LadderSample:
    """Strict new-minimum instants (t_k, v_k) of one path, v_k = -X at t_k.

    The points are the claim instants met while the path sits at its running
    minimum, plus the horizon itself when the last stretch is a new minimum.
    Between points the minimum decreases linearly at rate c.
    """

    times: np.ndarray
    depths: np.ndarray
    truncation_depth: float
    horizon: float


@dataclass
class LadderBatch:
    """Ragged collection of ladder samples: path i owns [offsets[i], offsets[i+1])."""

    times: np.ndarray
    depths: np.ndarray
    offsets: np.ndarray
    truncation_depth: np.ndarray
    horizon: float
    premium_rate: float

    def __len__(self) -> int:
        return self.offsets.size - 1

    def sample(self, i: int) -> LadderSample:
        s = slice(self.offsets[i], self.offsets[i + 1])
        return LadderSample(self.times[s], self.depths[s], float(self.truncation_depth[i]), self.horizon)

    def depth_at(self, times: np.ndarray) -> np.ndarray:
        """Running-minimum depth D_i(t) for every path i and every t <= horizon."""
        times = np.asarray(times, dtype=float)
        if np.any(times > self.horizon) or np.any(times < 0):
            raise ValueError("times must lie in [0, horizon]")
        n = len(self)
        c = self.premium_rate
        span = 2.0 * self.horizon + 1.0
        counts = np.diff(self.offsets)
        path_of = np.repeat(np.arange(n), counts)
        keys = path_of * span + self.times
        out = np.empty((n, times.size))
        start = self.offsets[:-1]
        stop = self.offsets[1:]
        for j, tj in enumerate(times):
            k = np.searchsorted(keys, np.arange(n) * span + tj, side="left")
            inside = k < stop
            prev = np.where(k > start, self.depths[np.maximum(k - 1, 0)], 0.0)
            kk = np.minimum(k, self.times.size - 1)
            seg = np.where(inside, self.depths[kk] - c * (self.times[kk] - tj), 0.0)
            out[:, j] = np.where(inside, np.maximum(prev, seg), prev)
        return out


def simulate_descending_ladder_batch(model: RiskModel, n: int, horizon: float, seed: StreamSeed) -> LadderBatch:
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    rng = seed.generator()
    c, lam = model.premium_rate, model.claim_intensity
    t = np.zeros(n)
    x = np.zeros(n)
    vmin = np.zeros(n)
    rows_p, rows_t, rows_v = [], [], []
    idx = np.arange(n)
    while idx.size:
        T = rng.standard_exponential(idx.size) / lam
        t1 = t[idx] + T
        over = t1 > horizon
        x_end = x[idx] - c * np.where(over, horizon - t[idx], T)
        t_end = np.where(over, horizon, t1)
        new = -x_end > vmin[idx]
        if np.any(new):
            p = idx[new]
            rows_p.append(p)
            rows_t.append(t_end[new])
            rows_v.append(-x_end[new])
            vmin[p] = -x_end[new]
        keep = ~over
        idx, t1, x_pre = idx[keep], t1[keep], x_end[keep]
        if not idx.size:
            break
        t[idx] = t1
        x[idx] = x_pre + model.claims.sample(rng, idx.size)
    if rows_p:
        p = np.concatenate(rows_p)
        tt = np.concatenate(rows_t)
        vv = np.concatenate(rows_v)
        order = np.lexsort((tt, p))
        p, tt, vv = p[order], tt[order], vv[order]
    else:
        p = np.zeros(0, dtype=int)
        tt = vv = np.zeros(0)
    offsets = np.concatenate([[0], np.cumsum(np.bincount(p, minlength=n))])
    return LadderBatch(tt, vv, offsets, vmin, horizon, c)


def simulate_descending_ladder(model: RiskModel, horizon: float, seed: StreamSeed) -> LadderSample:
    return simulate_descending_ladder_batch(model, 1, horizon, seed).sample(0)


@dataclass
class OccupationHistogram:
    """Expected time spent per depth cell before the first passage above 0."""

    edges: np.ndarray
    occupation: np.ndarray
    std_error: np.ndarray
    overflow: float
    n_paths: int
    discount_mean: float
    discount_std_error: float

    @property
    def density(self) -> np.ndarray:
        return self.occupation / np.diff(self.edges)

    @property
    def density_std_error(self) -> np.ndarray:
        return self.std_error / np.diff(self.edges)


def occupation_histogram(
    model: RiskModel,
    grid: np.ndarray,
    n_paths: int,
    seed: StreamSeed,
    horizon: float = 1e4,
    safe_depth: float | None = None,
) -> OccupationHistogram:
    """Average time spent at each depth cell [z_j, z_{j+1}) before tau(0).

    Occupation below the last edge goes to ``overflow``.  The mean of
    e^{-tau(0)} (zero when the passage never happens) is returned alongside,
    since it fixes the excursion rate 1 / (1 - E e^{-tau(0)}).
    """
    edges = np.asarray(grid, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0) or edges[0] < 0:
        raise ValueError("grid must be increasing edges starting at depth >= 0")
    c = model.premium_rate
    per_path = np.zeros((n_paths, edges.size))
    tail = np.zeros(n_paths)

    def hook(idx, x_start, x_end):
        d0 = np.maximum(-x_start, 0.0)
        d1 = np.maximum(-x_end, 0.0)
        cum = np.clip(d1[:, None], 0.0, edges) - np.clip(d0[:, None], 0.0, edges)
        per_path[idx] += cum / c
        tail[idx] += (np.maximum(d1, edges[-1]) - np.maximum(d0, edges[-1])) / c

    exc = simulate_excursion_batch(model, n_paths, horizon, seed, safe_depth=safe_depth, segment_hook=hook)
    cells = np.diff(per_path, axis=1)
    mark = exc.discounted_mark
    return OccupationHistogram(
        edges=edges,
        occupation=cells.mean(axis=0),
        std_error=cells.std(axis=0, ddof=1) / math.sqrt(n_paths),
        overflow=float(tail.mean()),
        n_paths=n_paths,
        discount_mean=float(mark.mean()),
        discount_std_error=float(mark.std(ddof=1) / math.sqrt(n_paths)),
    )
