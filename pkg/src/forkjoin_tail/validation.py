"""Validation experiments: each check compares an observed quantity with its
theoretical prediction at a stated tolerance.

The experiments use the reference parameters sigma = sigma_a = beta = 1
unless they draw random parameters themselves. Simulation-based checks take
``reps`` (override of the replication count), ``seed`` and ``threads``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate as sp_integrate
from scipy import stats

from . import asymptotics as asy
from .model import (
    FirstPassageSpec,
    ModelParams,
    Regime,
    gamma_branches,
    gamma_exponent,
    lambda_fraction,
    level,
    sup_tail_exponential,
)
from .numerics import Z95, RngStream, integrate
from .simulator import (
    PathConfig,
    empirical_clt_statistic,
    estimate_sup_exceedance,
    estimate_tail_crude,
    estimate_tail_tilted,
    sample_first_passage_many,
)

REFERENCE = ModelParams(1.0, 1.0, 1.0)
DEFAULT_SEED = 20240611


@dataclass(frozen=True)
class CheckResult:
    name: str
    observed: float
    predicted: float
    tolerance: float
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    which: str
    results: list[CheckResult] = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.results) and all(r.passed for r in self.results)

    def add(self, name, observed, predicted, tolerance, passed, detail=""):
        self.results.append(CheckResult(name, float(observed), float(predicted), float(tolerance),
                                        bool(passed), detail))

    def close(self, name, observed, predicted, tol, *, relative=False, detail=""):
        """Record |observed - predicted| <= tol (relative to |predicted| if asked)."""
        scale = abs(predicted) if relative else 1.0
        ok = abs(observed - predicted) <= tol * scale
        self.add(name, observed, predicted, tol, ok, detail)


# ---------------------------------------------------------------------------
# exponent structure and logarithmic asymptotics


def _random_params(rng: np.random.Generator, n: int = 1) -> ModelParams:
    s, sa, b = rng.uniform(0.2, 3.0, size=3)
    return ModelParams(float(s), float(sa), float(b), n)


def check_log(seed: int = DEFAULT_SEED, **_) -> ValidationReport:
    rep = ValidationReport("log")
    p = REFERENCE
    rep.close("gamma(1.5)", gamma_exponent(p, 1.5), 1.0, 1e-12)
    rep.close("gamma(3)", gamma_exponent(p, 3.0), 2.5, 1e-12)
    dep, ind = gamma_branches(p, p.a_star)
    rep.close("branches meet at a_star", dep, ind, 1e-12)
    slope = (gamma_exponent(p, 3.0) - gamma_exponent(p, 1.5)) / 1.5
    rep.close("slope above a_star", slope, 1.0, 1e-12)

    rng = RngStream(seed, 1).generator()
    worst_crit = worst_lin = 0.0
    for _ in range(100):
        q = _random_params(rng)
        target = q.sigma_a**2 / q.sigma**2
        worst_crit = max(worst_crit, abs(gamma_exponent(q, q.a_star) - target) / max(1.0, target))
        c = float(rng.uniform(0.01, 5.0))
        inc = gamma_exponent(q, q.a_star + c) - gamma_exponent(q, q.a_star)
        pred = 2 * q.beta * c / q.total_var
        worst_lin = max(worst_lin, abs(inc - pred) / max(1.0, pred))
    rep.add("gamma(a_star) = sigma_a^2/sigma^2, 100 draws (worst rel. error)", worst_crit, 0.0, 1e-12,
            worst_crit <= 1e-12)
    rep.add("linear increment above a_star, 100 draws (worst rel. error)", worst_lin, 0.0, 1e-12,
            worst_lin <= 1e-12)

    # the implemented estimates carry the exponent: |log est / log N + gamma|
    # is bounded by the size of the log-log and prefactor corrections
    for a in (0.5, 1.0, 1.5, 2.5):
        for n in (10**3, 10**6, 10**9):
            q = p.with_n(n)
            est = asy.tail_estimate(q, a)
            ln = q.log_n
            kappa = est.log_correction_exponent
            bound = (math.log(ln) * (kappa + 1) + abs(math.log(est.prefactor_high))) / ln
            dev = abs(math.log(est.estimate_high) / ln + est.gamma)
            rep.add(f"log-asymptotics a={a} N=1e{round(math.log10(n))}", dev, 0.0, bound, dev <= bound)
    return rep


# ---------------------------------------------------------------------------
# convolution of a normal and an exponential


def convolution_quadrature(eta: float, mu: float, x: float) -> float:
    """P(eta X + E/mu > x) by direct quadrature over the exponential part."""
    def f(y):
        return mu * math.exp(-mu * y) * 0.5 * math.erfc((x - y) / (eta * math.sqrt(2.0)))

    pts = sorted({max(x, 0.0), max(x - 8 * eta, 0.0), x + 8 * eta})
    total = 0.0
    edges = [0.0, *[q for q in pts if q > 0], math.inf]
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi > lo:
            total += sp_integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-13, limit=400)[0]
    return total


def check_convolution(seed: int = DEFAULT_SEED, **_) -> ValidationReport:
    rep = ValidationReport("convolution")
    rng = RngStream(seed, 2).generator()
    worst = 0.0
    for _ in range(200):
        eta, mu = rng.uniform(0.2, 3.0, size=2)
        delta = rng.uniform(-6.0, 6.0)
        x = mu * eta * eta + math.sqrt(2.0) * eta * delta
        exact = asy.convolution_tail(asy.ConvolutionSpec(float(eta), float(mu), float(x))).exact
        worst = max(worst, abs(exact / convolution_quadrature(eta, mu, x) - 1))
    rep.add("exact form vs quadrature, 200 specs (worst rel. error)", worst, 0.0, 1e-8, worst <= 1e-8)

    sweeps = {
        asy.ConvolutionCase.MINUS_INFINITY: [(math.sqrt(x), 2.0, x) for x in (1e2, 1e3, 1e4)],
        asy.ConvolutionCase.PLUS_INFINITY: [(math.sqrt(x), 0.5, x) for x in (1e2, 1e3, 1e4)],
        asy.ConvolutionCase.FINITE_C: [(e, 1.0, e * e + math.sqrt(2.0) * e * 0.5) for e in (10.0, 100.0, 1000.0)],
    }
    for case, specs in sweeps.items():
        ratios = []
        for eta, mu, x in specs:
            tail = asy.convolution_tail(asy.ConvolutionSpec(eta, mu, x))
            if tail.case is not case:
                rep.add(f"{case.value}: case selection at x={x:g}", 0, 1, 0, False, f"got {tail.case.value}")
            ratios.append(tail.ratio)
        rep.close(f"{case.value}: asymptotic/exact at largest scale", ratios[-1], 1.0, 0.05,
                  detail="ratios " + ", ".join(f"{r:.6g}" for r in ratios))
    return rep


# ---------------------------------------------------------------------------
# first passage toolbox and the single-queue exponential identity


def check_passage(seed: int = DEFAULT_SEED, reps: int | None = None, threads: int = 1,
                  simulate: bool = True, **_) -> ValidationReport:
    rep = ValidationReport("passage")
    rng = RngStream(seed, 3).generator()
    worst = 0.0
    for _ in range(20):
        # |drift| >= 0.1 keeps the t**-1.5 tail within reach of quadrature
        drift = float(rng.uniform(0.1, 2.0) * rng.choice([-1.0, 1.0]))
        spec = FirstPassageSpec(float(rng.uniform(0.2, 3)), drift, float(rng.uniform(0.3, 2)))
        mode = spec.level / max(abs(spec.drift), 0.1)
        mass = integrate(lambda t: asy.first_passage_density(spec, t), 0.0, math.inf, points=(mode,))[0]
        worst = max(worst, abs(mass - spec.finite_probability))
    rep.add("density mass = min(1, exp(2 nu L / sigma^2)), 20 specs (worst abs. error)", worst, 0.0, 1e-9,
            worst <= 1e-9)

    p = REFERENCE.with_n(1024)
    for a, r in ((0.5, 0.0), (0.5, 0.7), (1.0, -1.3), (2.5, 2.0)):
        got = integrate(lambda k: asy.scaled_passage_density_limit(p, a, r, k), points=(0.0,))[0]
        pred = math.exp(2 * (1 - lambda_fraction(p, a)) * p.beta * r / p.sigma**2)
        rep.close(f"k-integral of scaled density limit a={a} r={r}", got, pred, 1e-9, relative=True)

    for drift in (1.0, -1.0):
        spec = FirstPassageSpec(1.0, drift, 1.0)
        finite, times = sample_first_passage_many(spec, RngStream(seed, 4), 10**5)
        ks = stats.kstest(times[finite], lambda u: asy.first_passage_cdf(spec, u) / spec.finite_probability).statistic
        rep.add(f"exact sampler vs density, KS at 1e5 draws, drift {drift:+g}", ks, 0.0, 0.01, ks < 0.01,
                f"{int(finite.sum())} finite passages")

    if simulate:
        n_reps = reps or 10**5
        cfg = PathConfig(horizon_mult=8.0, steps=1024, bridge_correction=True)
        for n in (8, 64):
            q = REFERENCE.with_n(n)
            a = 0.5
            lam = lambda_fraction(q, a)
            lvl = (1 - lam) * level(q, a)
            sup_spec = FirstPassageSpec(lvl, -(1 - lam) * q.beta, q.sigma)
            est = estimate_sup_exceedance(sup_spec, cfg, n_reps, seed + n, threads=threads)
            tol = 3 * est.stderr + 0.01
            rep.close(f"single-queue exceedance of (1-lambda) f_N = 1/N, N={n}", est.p_hat, 1.0 / n, tol,
                      detail=f"stderr {est.stderr:.3g}, exact {sup_tail_exponential(sup_spec, lvl):.6g}")
    return rep


# ---------------------------------------------------------------------------
# Gumbel limit


def check_gumbel(**_) -> ValidationReport:
    rep = ValidationReport("gumbel")
    p = REFERENCE.with_n(1000)
    rep.close("G(0) = 1 - exp(-1/(2 sqrt(pi)))", asy.gumbel_exceedance_limit(p, 0.5, 0.0),
              -math.expm1(-1 / (2 * math.sqrt(math.pi))), 1e-15)
    k = np.linspace(-5, 5, 201)
    sym = float(np.max(np.abs(asy.gumbel_exceedance_limit(p, 0.5, k) - asy.gumbel_exceedance_limit(p, 0.5, -k))))
    rep.add("symmetry in k", sym, 0.0, 1e-15, sym <= 1e-15)
    far = asy.gumbel_exceedance_limit(p, 0.5, 50.0)
    rep.add("G(k) -> 0 for large |k|", far, 0.0, 1e-12, far <= 1e-12)
    # T_N(a, k) > 0 needs k > -(f_N / beta) / sqrt(log N), about -2.6 at N = 1e3
    k = np.linspace(-2, 2, 201)
    gaps = []
    for n in (10**3, 10**6, 10**9):
        q = p.with_n(n)
        gaps.append(float(np.max(np.abs(asy.finite_gumbel_exceedance(q, 0.5, k)
                                        - asy.gumbel_exceedance_limit(q, 0.5, k)))))
    rep.add("finite-N exceedance approaches the limit (gap at N=1e9)", gaps[-1], 0.0, gaps[0],
            gaps[0] > gaps[1] > gaps[2], "gaps " + ", ".join(f"{g:.4g}" for g in gaps))
    dens = []
    for n in (10**3, 10**6, 10**9):
        q = p.with_n(n)
        dens.append(float(np.max(np.abs(asy.finite_scaled_passage_density(q, 0.5, 0.3, k)
                                        - asy.scaled_passage_density_limit(q, 0.5, 0.3, k)))))
    rep.add("scaled passage density approaches its limit (gap at N=1e9)", dens[-1], 0.0, dens[0],
            dens[0] > dens[1] > dens[2], "gaps " + ", ".join(f"{g:.4g}" for g in dens))
    return rep


# ---------------------------------------------------------------------------
# Monte Carlo regimes


def check_clt(seed: int = DEFAULT_SEED, reps: int | None = None, threads: int = 1, **_) -> ValidationReport:
    rep = ValidationReport("clt")
    p = REFERENCE.with_n(4096)
    n_reps = reps or 2000
    summary, sample = empirical_clt_statistic(p, PathConfig(4.0, 512, True), n_reps, seed, threads=threads)
    var = p.sigma**2 * p.sigma_a**2 / (2 * p.beta**2)
    ks = stats.kstest(sample, "norm", args=(0.0, math.sqrt(var))).statistic
    rep.add("KS distance to N(0, sigma^2 sigma_a^2 / (2 beta^2))", ks, 0.0, 0.06, ks < 0.06,
            f"N=4096, {n_reps} reps")
    med = float(np.median(sample))
    rep.close("sample median", med, 0.0, 3 * 1.2533 * summary.sd / math.sqrt(n_reps))
    rep.close("sample variance", float(np.var(sample, ddof=1)), var, 0.2, relative=True)
    return rep


def check_above(seed: int = DEFAULT_SEED, reps: int | None = None, threads: int = 1, **_) -> ValidationReport:
    rep = ValidationReport("above")
    a = 2.5
    cfg = PathConfig(4.0, 2048, True)
    plan = ((64, 2000), (256, 1000), (1024, 500))
    scaled = []
    for n, default_reps in plan:
        q = REFERENCE.with_n(n)
        g = gamma_exponent(q, a)
        est = estimate_tail_tilted(q, a, cfg, None, reps or default_reps, seed + n, threads=threads)
        v, se = n**g * est.p_hat, n**g * est.stderr
        scaled.append((v, se))
        rep.add(f"N^gamma p_hat in [0.3, 3], N={n}", v, 1.0, 0.0, 0.3 <= v <= 3.0,
                f"stderr {se:.3g}, ESS {est.ess:.4g}")
    for (v0, s0), (v1, s1), (n0, _), (n1, _) in zip(scaled[:-1], scaled[1:], plan[:-1], plan[1:]):
        slack = Z95 * math.hypot(s0, s1)
        g0, g1 = abs(v0 - 1), abs(v1 - 1)
        rep.add(f"gap |N^gamma p_hat - 1| non-increasing, N={n0} -> {n1}", g1, g0, slack, g1 <= g0 + slack)

    q = REFERENCE.with_n(16)
    cal = PathConfig(4.0, 256, True)
    crude = estimate_tail_crude(q, 0.6, cal, reps or 10**5, seed + 1, threads=threads)
    tilted = estimate_tail_tilted(q, 0.6, cal, None, reps or 10**5, seed + 2, threads=threads)
    overlap = crude.stats.ci_low <= tilted.stats.ci_high and tilted.stats.ci_low <= crude.stats.ci_high
    rep.add("IS and crude 95% CIs overlap at N=16, a=0.6", tilted.p_hat, crude.p_hat,
            crude.stats.ci_high - crude.stats.ci_low, overlap,
            f"crude [{crude.stats.ci_low:.5g}, {crude.stats.ci_high:.5g}], "
            f"tilted [{tilted.stats.ci_low:.5g}, {tilted.stats.ci_high:.5g}]")
    return rep


def check_critical(seed: int = DEFAULT_SEED, reps: int | None = None, threads: int = 1, **_) -> ValidationReport:
    rep = ValidationReport("critical")
    q = REFERENCE.with_n(1024)
    a = q.a_star
    g = gamma_exponent(q, a)
    scale = q.n_queues**g
    est = estimate_tail_tilted(q, a, PathConfig(4.0, 2048, True), None, reps or 1000, seed, threads=threads)
    lo, hi = scale * est.stats.ci_low, scale * est.stats.ci_high
    rep.add("N^gamma p_hat 95% CI inside [0.25, 1.0] at a_star, N=1024", scale * est.p_hat, 0.5, 0.0,
            lo >= 0.25 and hi <= 1.0, f"CI [{lo:.4g}, {hi:.4g}], ESS {est.ess:.4g}")
    crit = asy.tail_estimate(q, a)
    sup = asy.tail_estimate(q, a, regime=Regime.SUPERCRITICAL)
    rep.add("critical prediction below the supercritical formula", crit.estimate_high, sup.estimate_low, 0.0,
            crit.estimate_high < sup.estimate_low)
    rep.add("critical estimate below the supercritical formula (upper CI)", est.stats.ci_high,
            sup.estimate_low, 0.0, est.stats.ci_high < sup.estimate_low)
    return rep


def check_below(seed: int = DEFAULT_SEED, reps: int | None = None, threads: int = 1,
                simulate: bool = True, **_) -> ValidationReport:
    rep = ValidationReport("below")
    p = REFERENCE
    worst_gap = math.inf
    ok = True
    for a in np.linspace(0.05, 1.45, 29):
        b = asy.subcritical_constants(p, float(a))
        ok &= 0 < b.lower <= b.upper < math.inf
        worst_gap = min(worst_gap, b.upper - b.lower)
    rep.add("0 < L(a) <= U(a) < inf on a grid in (0, a_star)", worst_gap, 0.0, 0.0, ok,
            "observed = smallest U - L on the grid")
    if simulate:
        q = p.with_n(1024)
        a = 0.5
        est = estimate_tail_tilted(q, a, PathConfig(4.0, 2048, True), None, reps or 500, seed, threads=threads)
        approx = asy.tail_estimate(q, a)
        lo, hi = approx.estimate_low / 3, 3 * approx.estimate_high
        rep.add("L u / 3 <= p_hat <= 3 U u at a=0.5, N=1024", est.p_hat, math.sqrt(lo * hi), 0.0,
                lo <= est.p_hat <= hi, f"band [{lo:.4g}, {hi:.4g}], stderr {est.stderr:.3g}")
    return rep


CHECKS: dict[str, Callable[..., ValidationReport]] = {
    "log": check_log,
    "above": check_above,
    "critical": check_critical,
    "below": check_below,
    "clt": check_clt,
    "convolution": check_convolution,
    "passage": check_passage,
    "gumbel": check_gumbel,
}


def run(which: str, **kwargs) -> ValidationReport:
    if which not in CHECKS:
        raise KeyError(which)
    t0 = time.perf_counter()
    rep = CHECKS[which](**kwargs)
    rep.elapsed = time.perf_counter() - t0
    return rep
