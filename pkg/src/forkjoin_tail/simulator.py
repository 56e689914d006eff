"""Monte Carlo for the maximum backlog M_N of the Brownian fork-join model.

Each replication lives on its own :class:`RngStream` ``(master_seed, rep)``.
Inside a replication the draw layout is fixed:

* substream 0: ``steps`` arrival increments, then an ``(N, steps)`` block of
  service increments in queue-major order (queue ``q`` always uses block
  ``q``, so adding queues never changes the existing ones);
* substream 1: Brownian-bridge uniforms;
* substream 2: the randomly designated queue of the mixture tilt.

Paths are sampled on the grid ``t_j = j * T_max / steps``, ``j = 0..steps``,
and the supremum is taken over that grid (``t_0 = 0`` gives ``M_N >= 0``),
optionally refined by the exact bridge maximum on intervals that can matter.
"""

from __future__ import annotations

import enum
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .model import (
    DomainError,
    FirstPassageSpec,
    ModelParams,
    Regime,
    classify,
    lambda_fraction,
    level as level_of,
)
from .numerics import RngStream, SummaryStats, summarize

__all__ = [
    "ISDegeneracyWarning",
    "PathConfig",
    "SimEstimate",
    "SimKind",
    "TiltConfig",
    "bridge_max_sample",
    "default_tilt",
    "empirical_clt_statistic",
    "estimate_sup_exceedance",
    "estimate_tail_crude",
    "estimate_tail_tilted",
    "queue_suprema",
    "sample_first_passage",
    "sample_first_passage_many",
    "simulate_drifted_sup",
    "simulate_max_backlog",
    "simulate_paths",
]

# bridge maxima are only sampled on intervals whose larger endpoint is within
# BRIDGE_WINDOW * vol * sqrt(dt) of the threshold; further away the crossing
# probability is below exp(-2 * BRIDGE_WINDOW**2)
BRIDGE_WINDOW = 30.0
ESS_WARN = 10.0


class ISDegeneracyWarning(RuntimeWarning):
    """Importance weights collapsed onto too few replications."""


class SimKind(str, enum.Enum):
    CRUDE = "crude"
    TILTED = "tilted"


@dataclass(frozen=True)
class PathConfig:
    horizon_mult: float = 4.0
    steps: int = 4096
    bridge_correction: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.horizon_mult) and self.horizon_mult >= 1):
            raise DomainError(f"horizon_mult must be >= 1, got {self.horizon_mult!r}")
        if isinstance(self.steps, bool) or int(self.steps) != self.steps or self.steps < 2:
            raise DomainError(f"steps must be an integer >= 2, got {self.steps!r}")


@dataclass(frozen=True)
class TiltConfig:
    """Extra drift ``theta_a`` on W_A and ``theta_i`` on one service process.

    ``designated_queue=None`` picks the tilted queue uniformly at random per
    replication and weights by the mixture likelihood ratio. ``stopped``
    evaluates the likelihood ratio at the first crossing instead of at the
    horizon; both are unbiased, the stopped one has far lighter weights.
    ``service_mix`` is the probability that the service tilt is switched on
    in a replication (a defensive mixture with the arrival-only tilt).
    """

    theta_a: float = 0.0
    theta_i: float = 0.0
    designated_queue: int | None = None
    stopped: bool = True
    service_mix: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.theta_a) and math.isfinite(self.theta_i)):
            raise DomainError("tilts must be finite")
        if not 0 < self.service_mix <= 1:
            raise DomainError(f"service_mix must lie in (0, 1], got {self.service_mix!r}")
        if self.designated_queue is not None and self.designated_queue < 0:
            raise DomainError("designated_queue must be a nonnegative index")


@dataclass(frozen=True)
class SimEstimate:
    p_hat: float
    stderr: float
    reps: int
    kind: SimKind
    hits: int
    stats: SummaryStats
    ess: float | None = None
    max_weight_share: float | None = None
    warnings: tuple[str, ...] = field(default=())

    @property
    def ci(self) -> tuple[float, float]:
        return self.stats.ci_low, self.stats.ci_high


# ---------------------------------------------------------------------------
# helpers


def _as_generator(stream, substream: int = 0) -> np.random.Generator:
    if isinstance(stream, np.random.Generator):
        return stream
    return stream.generator(substream)


def _check_reps(reps: int) -> None:
    if isinstance(reps, bool) or int(reps) != reps or reps < 1:
        raise DomainError(f"reps must be an integer >= 1, got {reps!r}")


def _horizon(params: ModelParams, a: float, cfg: PathConfig, level: float | None) -> float:
    anchor = (level if level is not None else level_of(params, a)) / params.beta
    if not anchor > 0:
        raise DomainError("horizon anchor f/beta must be positive (use N >= 2 or pass level=)")
    return cfg.horizon_mult * anchor


def _run_chunks(fn, reps: int, threads: int):
    """Apply ``fn(rep_index)`` to every replication, in index order."""
    threads = max(1, int(threads))
    if threads == 1 or reps == 1:
        return [fn(r) for r in range(reps)]
    bounds = np.linspace(0, reps, min(threads, reps) + 1).astype(int)

    def chunk(lo_hi):
        lo, hi = lo_hi
        return [fn(r) for r in range(lo, hi)]

    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(chunk, zip(bounds[:-1], bounds[1:])))
    return [x for part in parts for x in part]


@dataclass
class GridPaths:
    """One replication on the grid: ``values[q, j]`` is queue q's backlog
    process at ``times[j]`` (times exclude t = 0, where every value is 0)."""

    times: np.ndarray
    arrival: np.ndarray
    service: np.ndarray
    values: np.ndarray

    @property
    def dt(self) -> float:
        return float(self.times[0])


def _grid(params: ModelParams, horizon: float, steps: int, gen: np.random.Generator,
          n_rows: int, theta_a: float = 0.0) -> GridPaths:
    dt = horizon / steps
    sq = math.sqrt(dt)
    times = dt * np.arange(1, steps + 1)
    arrival = np.cumsum(gen.standard_normal(steps))
    arrival *= params.sigma_a * sq
    if theta_a:
        arrival += theta_a * times
    service = gen.standard_normal((n_rows, steps))
    np.cumsum(service, axis=1, out=service)
    service *= params.sigma * sq
    return GridPaths(times, arrival, service, np.empty(0))


def _finish(paths: GridPaths, beta: float) -> GridPaths:
    common = paths.arrival - beta * paths.times
    paths.values = paths.service + common
    return paths


def simulate_paths(params: ModelParams, a: float, cfg: PathConfig, stream: RngStream,
                   *, level: float | None = None, n_rows: int | None = None) -> GridPaths:
    """Untilted grid paths of the first ``n_rows`` (default N) queues."""
    horizon = _horizon(params, a, cfg, level)
    rows = params.n_queues if n_rows is None else int(n_rows)
    return _finish(_grid(params, horizon, cfg.steps, _as_generator(stream, 0), rows), params.beta)


def _padded(values: np.ndarray) -> np.ndarray:
    return np.concatenate([np.zeros((values.shape[0], 1)), values], axis=1)


# ---------------------------------------------------------------------------
# bridge maximum


def bridge_max_sample(x0, x1, dt: float, vol: float, stream, size=None):
    """Maximum of a Brownian bridge from x0 to x1 over an interval of length dt."""
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt!r}")
    gen = _as_generator(stream, 1)
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    shape = np.broadcast_shapes(x0.shape, x1.shape) if size is None else size
    u = 1.0 - gen.random(shape)  # in (0, 1]
    m = 0.5 * (x0 + x1 + np.sqrt((x1 - x0) ** 2 - 2 * vol * vol * dt * np.log(u)))
    return float(m) if np.ndim(m) == 0 else m


def _bridge_crossing(x0, x1, threshold, var_dt, gen):
    """Bernoulli draw of {bridge max > threshold} for endpoints below it."""
    p = np.exp(-2 * (threshold - x0) * (threshold - x1) / var_dt)
    return gen.random(p.shape) < p


# ---------------------------------------------------------------------------
# maximum backlog samples


def _grid_sup(paths: GridPaths, vol: float, bridge: bool, gen_bridge) -> np.ndarray:
    """Per-queue supremum over the grid, bridge-refined if requested."""
    sup = np.maximum(paths.values.max(axis=1), 0.0)
    if not bridge:
        return sup
    x = _padded(paths.values)
    x0, x1 = x[:, :-1], x[:, 1:]
    var_dt = vol * vol * paths.dt
    reach = np.maximum(x0, x1)
    cand = reach > (sup - BRIDGE_WINDOW * math.sqrt(var_dt))[:, None]
    q, j = np.nonzero(cand)
    if q.size:
        m = bridge_max_sample(x0[q, j], x1[q, j], paths.dt, vol, gen_bridge)
        np.maximum.at(sup, q, m)
    return sup


def queue_suprema(params: ModelParams, a: float, cfg: PathConfig, stream: RngStream,
                  *, queue_ids=None, level: float | None = None) -> np.ndarray:
    """Per-queue suprema for one replication, in the order of ``queue_ids``.

    Queue ``q`` is driven by block ``q`` of the service draws regardless of
    which other queues are requested.
    """
    ids = np.arange(params.n_queues) if queue_ids is None else np.asarray(queue_ids, dtype=int)
    if ids.size == 0:
        raise DomainError("queue_ids must be non-empty")
    paths = simulate_paths(params, a, cfg, stream, level=level, n_rows=int(ids.max()) + 1)
    paths.values = paths.values[ids]
    vol = math.sqrt(params.total_var)
    return _grid_sup(paths, vol, cfg.bridge_correction, stream.generator(1))


def simulate_max_backlog(params: ModelParams, a: float, cfg: PathConfig, stream: RngStream,
                         *, level: float | None = None) -> float:
    """One sample of the discretized M_N over [0, horizon_mult * T_N(a)].

    With bridge correction only per-queue intervals whose endpoints come
    within the bridge window of the grid maximum are refined; the rest cannot
    beat it except with negligible probability.
    """
    paths = simulate_paths(params, a, cfg, stream, level=level)
    grid_max = max(float(paths.values.max()), 0.0)
    if not cfg.bridge_correction:
        return grid_max
    vol = math.sqrt(params.total_var)
    x = _padded(paths.values)
    x0, x1 = x[:, :-1], x[:, 1:]
    cand = np.maximum(x0, x1) > grid_max - BRIDGE_WINDOW * vol * math.sqrt(paths.dt)
    q, j = np.nonzero(cand)
    m = bridge_max_sample(x0[q, j], x1[q, j], paths.dt, vol, stream.generator(1))
    return max(grid_max, float(np.max(m)))


# ---------------------------------------------------------------------------
# tail estimation


def default_tilt(params: ModelParams, a: float) -> TiltConfig:
    """Drift change along the most likely path to {M_N > f_N(a)}.

    Below a_star only the shared arrival process is pushed (to drift
    2 lambda(a) beta); above it the arrival and a randomly designated queue
    share the push in proportion to their variances. At a_star the arrival
    push is the same for both, and both mechanisms carry comparable mass, so
    the service push is switched on in half of the replications.
    """
    regime = classify(params, a)
    if regime is not Regime.SUBCRITICAL:
        tv = params.total_var
        return TiltConfig(theta_a=2 * params.beta * params.sigma_a**2 / tv,
                          theta_i=2 * params.beta * params.sigma**2 / tv,
                          service_mix=0.5 if regime is Regime.CRITICAL else 1.0)
    return TiltConfig(theta_a=2 * lambda_fraction(params, a) * params.beta, theta_i=0.0)


def _replication(params, horizon, cfg, threshold, tilt, seed, rep):
    """(weighted indicator, log weight or nan) for one replication."""
    stream = RngStream(seed, rep)
    gen = stream.generator(0)
    n = params.n_queues
    paths = _grid(params, horizon, cfg.steps, gen, n, tilt.theta_a)
    designated = None
    if tilt.theta_i:
        pick = stream.generator(2)
        active = tilt.service_mix == 1 or pick.random() < tilt.service_mix
        designated = (tilt.designated_queue if tilt.designated_queue is not None
                      else int(pick.integers(n)))
        if designated >= n:
            raise DomainError(f"designated_queue {designated} out of range for N={n}")
        if active:
            paths.service[designated] += tilt.theta_i * paths.times
    _finish(paths, params.beta)
    x = paths.values
    steps = cfg.steps

    col = x.max(axis=0)
    over = np.flatnonzero(col > threshold)
    stop = int(over[0]) if over.size else steps  # grid index of the first crossing
    if cfg.bridge_correction and stop > 0:
        # interval j runs from column j-1 (or t = 0) to column j; only those
        # ending before the first grid crossing can move the stopping time,
        # and all their endpoints are below the threshold
        var_dt = params.total_var * paths.dt
        window = threshold - BRIDGE_WINDOW * math.sqrt(var_dt)
        if col[:stop].max() > window:
            xp = _padded(x[:, :stop])
            x0, x1 = xp[:, :-1], xp[:, 1:]
            q, j = np.nonzero(np.maximum(x0, x1) > window)
            if q.size:
                crossed = _bridge_crossing(x0[q, j], x1[q, j], threshold, var_dt, stream.generator(1))
                if crossed.any():
                    stop = min(stop, int(j[crossed].min()))
    if stop >= steps:
        return 0.0, math.nan

    m = stop if tilt.stopped else steps - 1
    t = paths.times[m]
    logw = 0.0
    if tilt.theta_a:
        va = params.sigma_a**2
        logw += -tilt.theta_a * paths.arrival[m] / va + tilt.theta_a**2 * t / (2 * va)
    if tilt.theta_i:
        vs = params.sigma**2
        terms = tilt.theta_i * paths.service[:, m] / vs - tilt.theta_i**2 * t / (2 * vs)
        # log of the service part of dQ/dP: mixture over the designated queue,
        # then over whether the service tilt is on at all
        log_on = float(logsumexp(terms)) - math.log(n) if tilt.designated_queue is None else float(terms[designated])
        if tilt.service_mix < 1:
            log_on = float(np.logaddexp(math.log1p(-tilt.service_mix), math.log(tilt.service_mix) + log_on))
        logw -= log_on
    return math.exp(logw), logw


def _estimate(params, a, cfg, tilt, reps, master_seed, level, threads, kind):
    _check_reps(reps)
    horizon = _horizon(params, a, cfg, level)
    threshold = level if level is not None else level_of(params, a)
    out = _run_chunks(lambda r: _replication(params, horizon, cfg, threshold, tilt, master_seed, r),
                      reps, threads)
    values = np.array([v for v, _ in out])
    stats = summarize(values)
    hits = int(np.count_nonzero(values))
    if kind is SimKind.CRUDE:
        return SimEstimate(stats.mean, stats.stderr, reps, kind, hits, stats)
    msgs = []
    total = math.fsum(values)
    if total > 0:
        ess = total**2 / math.fsum(values**2)
        share = float(values.max()) / total
    else:
        ess, share = 0.0, math.nan
    if ess < ESS_WARN:
        msg = f"importance weights degenerate: effective sample size {ess:.3g} < {ESS_WARN:g} ({hits} hits)"
        warnings.warn(msg, ISDegeneracyWarning, stacklevel=3)
        msgs.append(msg)
    return SimEstimate(stats.mean, stats.stderr, reps, kind, hits, stats, ess, share, tuple(msgs))


def estimate_tail_crude(params: ModelParams, a: float, cfg: PathConfig, reps: int, master_seed: int,
                        *, level: float | None = None, threads: int = 1) -> SimEstimate:
    """Plain Monte Carlo estimate of P(M_N > f_N(a)) for the discretized model.

    ``level`` replaces f_N(a) as the threshold (and horizon anchor).
    """
    return _estimate(params, a, cfg, TiltConfig(), reps, master_seed, level, threads, SimKind.CRUDE)


def estimate_tail_tilted(params: ModelParams, a: float, cfg: PathConfig, tilt: TiltConfig | None,
                         reps: int, master_seed: int, *, level: float | None = None,
                         threads: int = 1) -> SimEstimate:
    """Importance-sampling estimate of the same discretized probability.

    ``tilt=None`` uses :func:`default_tilt`. With zero tilts every weight is
    exactly 1 and the result matches :func:`estimate_tail_crude` bit for bit.
    """
    tilt = default_tilt(params, a) if tilt is None else tilt
    return _estimate(params, a, cfg, tilt, reps, master_seed, level, threads, SimKind.TILTED)


# ---------------------------------------------------------------------------
# single drifted Brownian motion


def simulate_drifted_sup(drift: float, vol: float, horizon: float, cfg: PathConfig,
                         stream: RngStream) -> float:
    """Grid (optionally bridge-exact) sup of vol*B + drift*t over [0, horizon]."""
    gen = stream.generator(0)
    dt = horizon / cfg.steps
    times = dt * np.arange(1, cfg.steps + 1)
    x = vol * math.sqrt(dt) * np.cumsum(gen.standard_normal(cfg.steps)) + drift * times
    best = max(float(x.max()), 0.0)
    if not cfg.bridge_correction:
        return best
    xp = np.concatenate([[0.0], x])
    x0, x1 = xp[:-1], xp[1:]
    cand = np.maximum(x0, x1) > best - BRIDGE_WINDOW * vol * math.sqrt(dt)
    m = bridge_max_sample(x0[cand], x1[cand], dt, vol, stream.generator(1))
    return max(best, float(np.max(m)))


def estimate_sup_exceedance(spec: FirstPassageSpec, cfg: PathConfig, reps: int, master_seed: int,
                            *, threads: int = 1) -> SimEstimate:
    """Crude estimate of P(sup_t (vol*B(t) + drift*t) > level), drift < 0.

    The horizon is ``horizon_mult * level / |drift|``, the mean passage time
    given passage. With bridge correction the path sup is exact up to the
    horizon truncation.
    """
    _check_reps(reps)
    if spec.drift >= 0:
        raise DomainError("estimate_sup_exceedance needs drift < 0")
    horizon = cfg.horizon_mult * spec.level / -spec.drift
    out = _run_chunks(
        lambda r: float(simulate_drifted_sup(spec.drift, spec.vol, horizon, cfg, RngStream(master_seed, r))
                        > spec.level),
        reps, threads)
    stats = summarize(out)
    return SimEstimate(stats.mean, stats.stderr, reps, SimKind.CRUDE, int(sum(out)), stats)


# ---------------------------------------------------------------------------
# exact first passage


def sample_first_passage_many(spec: FirstPassageSpec, stream, size: int):
    """``size`` exact draws of the passage time; returns (finite mask, times).

    Times are NaN where the passage never happens. Given finiteness the time
    is inverse Gaussian with mean L/|nu| and shape L**2/vol**2 (Levy when
    nu = 0).
    """
    gen = _as_generator(stream, 0)
    L, nu, s = spec.level, spec.drift, spec.vol
    u = gen.random(size)
    finite = u < spec.finite_probability
    if nu == 0:
        z = gen.standard_normal(size)
        times = (L / s) ** 2 / (z * z)
    else:
        times = gen.wald(L / abs(nu), (L / s) ** 2, size)
    times = np.where(finite, times, np.nan)
    return finite, times


def sample_first_passage(spec: FirstPassageSpec, stream) -> tuple[bool, float | None]:
    finite, times = sample_first_passage_many(spec, stream, 1)
    return (True, float(times[0])) if finite[0] else (False, None)


# ---------------------------------------------------------------------------
# central limit regime


def empirical_clt_statistic(params: ModelParams, cfg: PathConfig, reps: int, master_seed: int,
                            *, threads: int = 1) -> tuple[SummaryStats, np.ndarray]:
    """Samples of (M_N - sigma**2/(2 beta) log N) / sqrt(log N) and their summary.

    The horizon anchor is T_N(0) = sigma**2 log N / (2 beta**2).
    """
    _check_reps(reps)
    if params.n_queues < 2:
        raise DomainError("the CLT statistic needs N >= 2")
    ln = params.log_n
    centre = params.sigma**2 / (2 * params.beta) * ln
    out = _run_chunks(lambda r: simulate_max_backlog(params, 0.0, cfg, RngStream(master_seed, r)),
                      reps, threads)
    sample = (np.asarray(out) - centre) / math.sqrt(ln)
    return summarize(sample), sample
