"""Tail approximations for P(M_N > f_N(a)) and the analytic pieces they are
built from: normal-plus-exponential convolution tails, drifted Brownian
first-passage densities and their N -> infinity scaling limits, and the
Gumbel limit for the typical service fluctuation."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .model import (
    DomainError,
    FirstPassageSpec,
    ModelParams,
    Regime,
    classify,
    gamma_exponent,
    lambda_fraction,
    level,
    log_correction_exponent,
)
from .numerics import integrate

__all__ = [
    "ConvolutionCase",
    "ConvolutionSpec",
    "ConvolutionTail",
    "FirstPassageSpec",
    "SubcriticalBracket",
    "TailApproximation",
    "arrival_density_limit",
    "convolution_tail",
    "finite_gumbel_exceedance",
    "finite_scaled_passage_density",
    "first_passage_cdf",
    "first_passage_density",
    "gumbel_exceedance_limit",
    "gumbel_norming",
    "large_level_tail",
    "scaled_passage_density_limit",
    "subcritical_constants",
    "tail_estimate",
    "upper_bracket_integrand",
]

SQRT_PI = math.sqrt(math.pi)
LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)
DELTA_CUT = 3.0


class RegimeError(DomainError):
    """The requested quantity only exists in a different regime."""


# ---------------------------------------------------------------------------
# normal + exponential convolution


class ConvolutionCase(str, enum.Enum):
    FINITE_C = "finite_c"
    PLUS_INFINITY = "plus_infinity"
    MINUS_INFINITY = "minus_infinity"


@dataclass(frozen=True)
class ConvolutionSpec:
    """Tail of ``eta*X + E/mu`` at ``x`` with X ~ N(0,1), E ~ Exp(1) independent."""

    eta: float
    mu: float
    x: float
    case_hint: ConvolutionCase | None = None

    def __post_init__(self):
        if not self.eta > 0 or not self.mu > 0:
            raise DomainError(f"eta and mu must be positive, got eta={self.eta!r}, mu={self.mu!r}")

    @property
    def delta(self) -> float:
        """(x - mu*eta**2) / (sqrt(2)*eta), the argument deciding the case."""
        return (self.x - self.mu * self.eta**2) / (math.sqrt(2.0) * self.eta)


@dataclass(frozen=True)
class ConvolutionTail:
    log_exact: float
    log_asymptotic: float
    case: ConvolutionCase

    @property
    def exact(self) -> float:
        return math.exp(self.log_exact)

    @property
    def asymptotic(self) -> float:
        return math.exp(self.log_asymptotic)

    @property
    def ratio(self) -> float:
        """asymptotic / exact, computed in log space so it survives underflow."""
        return math.exp(self.log_asymptotic - self.log_exact)


def _log_normal_tail_leading(eta: float, x: float) -> float:
    # log of eta*exp(-x^2/(2 eta^2)) / (sqrt(2 pi) x), the Mills-ratio term
    return math.log(eta) - x * x / (2 * eta * eta) - LOG_SQRT_2PI - math.log(x)


def convolution_tail(spec: ConvolutionSpec) -> ConvolutionTail:
    """Exact tail of the convolution and its case-appropriate asymptotic form.

    Everything is carried in log space: in the regimes of interest both the
    normal and the exponential parts are far below double-precision range.
    The asymptotic form needs ``x > 0`` (its leading normal term has x in the
    denominator); for ``x <= 0`` it is reported as NaN.
    """
    eta, mu, x = spec.eta, spec.mu, spec.x
    delta = spec.delta
    expo = 0.5 * mu * (mu * eta * eta - 2 * x)
    # 1 + erf(delta) == 2 * Phi(sqrt(2) delta)
    log_conv = expo + float(special.log_ndtr(math.sqrt(2.0) * delta))
    log_normal = float(special.log_ndtr(-x / eta))
    log_exact = float(np.logaddexp(log_normal, log_conv))

    if spec.case_hint is not None:
        case = ConvolutionCase(spec.case_hint)
    elif delta > DELTA_CUT:
        case = ConvolutionCase.PLUS_INFINITY
    elif delta < -DELTA_CUT:
        case = ConvolutionCase.MINUS_INFINITY
    else:
        case = ConvolutionCase.FINITE_C

    if x <= 0:
        return ConvolutionTail(log_exact, math.nan, case)
    lead = _log_normal_tail_leading(eta, x)
    if case is ConvolutionCase.FINITE_C:
        second = expo + math.log1p(math.erf(delta)) - math.log(2.0) if delta > -5 else log_conv
    elif case is ConvolutionCase.PLUS_INFINITY:
        second = expo
    else:
        gap = mu * eta * eta - x
        if gap <= 0:
            return ConvolutionTail(log_exact, math.nan, case)
        second = -LOG_SQRT_2PI + expo + math.log(eta) - gap * gap / (2 * eta * eta) - math.log(gap)
    return ConvolutionTail(log_exact, float(np.logaddexp(lead, second)), case)


# ---------------------------------------------------------------------------
# first-passage densities


def first_passage_density(spec: FirstPassageSpec, t):
    """Density of the first time ``vol*B + drift*t`` exceeds ``level``.

    Defective when drift < 0: it integrates to exp(2*drift*level/vol**2).
    """
    t = np.asarray(t, dtype=float)
    L, nu, s = spec.level, spec.drift, spec.vol
    out = np.zeros_like(t)
    pos = t > 0
    tp = t[pos]
    out[pos] = L / (math.sqrt(2 * math.pi) * s * tp**1.5) * np.exp(-((L - nu * tp) ** 2) / (2 * s * s * tp))
    return float(out) if out.ndim == 0 else out


def first_passage_cdf(spec: FirstPassageSpec, t):
    """P(tau <= t), defective like the density when drift < 0."""
    t = np.asarray(t, dtype=float)
    L, nu, s = spec.level, spec.drift, spec.vol
    out = np.zeros_like(t)
    pos = t > 0
    tp = t[pos]
    rt = s * np.sqrt(tp)
    # second term carries exp(2 nu L / s^2); combine in log space so that
    # neither factor overflows for large levels
    first = special.ndtr((nu * tp - L) / rt)
    second = np.exp(2 * nu * L / (s * s) + special.log_ndtr((-nu * tp - L) / rt))
    out[pos] = first + second
    return float(out) if out.ndim == 0 else out


def scaled_passage_density_limit(params: ModelParams, a: float, r: float, k):
    """Limit of N sqrt(log N) f(T_N(a, k)) for the service hitting time of
    level (1 - lambda(a)) f_N(a) - r by W_i(t) - (1 - lambda(a)) beta t."""
    if a <= 0:
        raise DomainError(f"a must be positive, got {a!r}")
    s, b = params.sigma, params.beta
    q = 2 * a * b + s * s
    root = math.sqrt(q)
    k = np.asarray(k, dtype=float)
    num = b * (8 * a * a * b * b * r - b**3 * k * k * s * root + 8 * a * b * r * s * s + 2 * r * s**4)
    out = b * b * np.exp(num / (s * q**2.5)) / (SQRT_PI * q)
    return float(out) if out.ndim == 0 else out


def finite_scaled_passage_density(params: ModelParams, a: float, r: float, k):
    """N sqrt(log N) f(T_N(a, k)) at the model's finite N (0 where T_N(a, k) <= 0)."""
    n = params.n_queues
    if n < 2:
        raise DomainError("needs N >= 2")
    lam = lambda_fraction(params, a)
    ln = params.log_n
    f = level(params, a)
    spec = FirstPassageSpec(level=(1 - lam) * f - r, drift=-(1 - lam) * params.beta, vol=params.sigma)
    t = f / params.beta + np.asarray(k, dtype=float) * math.sqrt(ln)
    # N * density overflows nothing here; the density itself carries the 1/N
    return n * math.sqrt(ln) * first_passage_density(spec, t)


def arrival_density_limit(params: ModelParams, a: float, k):
    """Limit of N**gamma (log N)**kappa sqrt(log N) f_A(T_N(a, k)), the scaled
    density of the arrival hitting time of lambda(a) f_N(a) + r_N."""
    s, sa, b = params.sigma, params.sigma_a, params.beta
    q = 2 * a * b + s * s
    root = math.sqrt(q)
    k = np.asarray(k, dtype=float)
    out = (
        b * b * (s * (s - root) + 2 * a * b)
        * np.exp(-(b**4) * k * k * (s - root) ** 2 / (sa * sa * q * q))
        / (SQRT_PI * sa * q**1.5)
    )
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Gumbel limit of the typical service maximum


def gumbel_norming(n_queues: int) -> float:
    """b_N = sqrt(2 log N) - log(4 pi log N) / (2 sqrt(2 log N))."""
    ln = math.log(n_queues)
    return math.sqrt(2 * ln) - math.log(4 * math.pi * ln) / (2 * math.sqrt(2 * ln))


def gumbel_exceedance_limit(params: ModelParams, a: float, k):
    """Limit of P(max_i W_i(T) - (1-lambda) beta T > (1-lambda) f_N(a) - r_N), T = T_N(a, k)."""
    if a <= 0:
        raise DomainError(f"a must be positive, got {a!r}")
    q = 2 * a * params.beta + params.sigma**2
    k = np.asarray(k, dtype=float)
    out = -np.expm1(-np.exp(-(params.beta**4) * k * k / (q * q)) / (2 * SQRT_PI))
    return float(out) if out.ndim == 0 else out


def finite_gumbel_exceedance(params: ModelParams, a: float, k):
    """The same probability evaluated exactly at the model's N (N >= 3).

    NaN where T_N(a, k) <= 0.
    """
    from .model import r_shift

    lam = lambda_fraction(params, a)
    f = level(params, a)
    r = r_shift(params, a)
    t = f / params.beta + np.asarray(k, dtype=float) * math.sqrt(params.log_n)
    # only defined while T_N(a, k) > 0
    tp = np.where(t > 0, t, np.nan)
    z = ((1 - lam) * f - r + (1 - lam) * params.beta * tp) / (params.sigma * np.sqrt(tp))
    out = -np.expm1(params.n_queues * special.log_ndtr(z))
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# regime-level tail approximations


@dataclass(frozen=True)
class SubcriticalBracket:
    lower: float
    upper: float
    lower_error: float
    upper_error: float


def upper_bracket_integrand(params: ModelParams, a: float, k):
    """Integrand of the upper bracket constant (before adding 1)."""
    s, sa, b = params.sigma, params.sigma_a, params.beta
    q = 2 * a * b + s * s
    root = math.sqrt(q)
    k = np.asarray(k, dtype=float)
    k2 = k * k
    first = sa * np.exp(-(b**4) * k2 * (s - root) ** 2 / (sa * sa * q * q)) / (2 * SQRT_PI * (root - s))
    second = (
        sa * (s * s + sa * sa)
        * np.exp(-2 * b**4 * k2 * (s * s * (root - s) + a * b * (root - 2 * s)) / (sa * sa * q**2.5))
        / (2 * SQRT_PI * s * (s * (s - root) + sa * sa))
    )
    density = scaled_passage_density_limit(params, a, 0.0, k)
    out = (first + second) * density
    return float(out) if out.ndim == 0 else out


def _lower_bracket_integrand(params: ModelParams, a: float, k):
    return arrival_density_limit(params, a, k) * gumbel_exceedance_limit(params, a, k)


def subcritical_constants(params: ModelParams, a: float) -> SubcriticalBracket:
    """Lower and upper constants bracketing N**gamma (log N)**kappa P(M_N > f_N(a)).

    ``lower`` integrates the scaled arrival hitting-time density against the
    Gumbel exceedance limit; ``upper`` integrates the convolution prefactors
    against the scaled service hitting-time density and adds 1.
    """
    if a <= 0:
        raise DomainError(f"a must be positive, got {a!r}")
    if classify(params, a) is not Regime.SUBCRITICAL:
        raise RegimeError(f"subcritical constants need 0 < a < a_star = {params.a_star!r}, got a={a!r}")
    lower, lerr = integrate(lambda k: _lower_bracket_integrand(params, a, k), points=(0.0,))
    upper, uerr = integrate(lambda k: upper_bracket_integrand(params, a, k), points=(0.0,))
    return SubcriticalBracket(lower=lower, upper=upper + 1.0, lower_error=lerr, upper_error=uerr)


@dataclass(frozen=True)
class TailApproximation:
    regime: Regime
    gamma: float
    log_correction_exponent: float
    prefactor_low: float
    prefactor_high: float
    estimate_low: float
    estimate_high: float

    @property
    def point(self) -> float | None:
        """Point estimate where the theory gives one (a >= a_star)."""
        return self.estimate_low if self.prefactor_low == self.prefactor_high else None


def tail_estimate(params: ModelParams, a: float, regime: Regime | None = None) -> TailApproximation:
    """Sharp asymptotic approximation of P(M_N > f_N(a)) at the model's N.

    Above a_star the union bound N**-gamma is asymptotically exact, at a_star
    the constant is 1/2, and below a_star only a bracket
    [lower, upper] * N**-gamma * (log N)**-kappa is available. Pass
    ``regime=Regime.CRITICAL`` to force the boundary formula.
    """
    if params.n_queues < 3:
        raise DomainError(f"tail_estimate needs N >= 3, got N={params.n_queues}")
    regime = Regime(regime) if regime is not None else classify(params, a)
    g = gamma_exponent(params, a)
    if regime is Regime.CRITICAL:
        # at a_star both exponent formulas agree; use the linear one
        g = (2 * a * params.beta - params.sigma_a**2) / params.total_var
    base = params.n_queues ** (-g)
    if regime is Regime.SUPERCRITICAL:
        return TailApproximation(regime, g, 0.0, 1.0, 1.0, base, base)
    if regime is Regime.CRITICAL:
        return TailApproximation(regime, g, 0.0, 0.5, 0.5, 0.5 * base, 0.5 * base)
    kappa = log_correction_exponent(params, a)
    bracket = subcritical_constants(params, a)
    u = base * params.log_n ** (-kappa)
    return TailApproximation(
        regime, g, kappa, bracket.lower, bracket.upper, bracket.lower * u, bracket.upper * u
    )


def large_level_tail(params: ModelParams, y: float) -> float:
    """N P(Q_i > y) = N exp(-2 beta y / (sigma**2 + sigma_a**2)), sharp for y >> log N."""
    if not y > 0:
        raise DomainError(f"y must be positive, got {y!r}")
    return params.n_queues * math.exp(-2 * params.beta * y / params.total_var)
