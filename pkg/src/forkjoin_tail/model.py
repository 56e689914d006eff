"""Model parameters and the closed-form scalars of the Brownian fork-join
tail problem.

The backlog of queue ``i`` is ``sup_{s>0} (W_i(s) + W_A(s) - beta*s)`` with
``W_i`` (std ``sigma``) independent across queues and a single arrival term
``W_A`` (std ``sigma_a``) shared by all of them. ``M_N`` is the maximum over
``N`` queues and the rare event of interest is ``M_N > f_N(a)`` with
``f_N(a) = (sigma**2/(2*beta) + a) * log N``.
"""

from __future__ import annotations

import enum
import math
import numbers
from dataclasses import dataclass

from .numerics import normal_sf

REGIME_RTOL = 1e-12


class DomainError(ValueError):
    """An argument lies outside the domain where a quantity is defined."""


class Regime(str, enum.Enum):
    SUBCRITICAL = "subcritical"
    CRITICAL = "critical"
    SUPERCRITICAL = "supercritical"


@dataclass(frozen=True)
class ModelParams:
    sigma: float
    sigma_a: float
    beta: float
    n_queues: int = 1

    def __post_init__(self):
        for name in ("sigma", "sigma_a", "beta"):
            v = getattr(self, name)
            if isinstance(v, bool) or not (isinstance(v, numbers.Real) and math.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be a positive finite number, got {v!r}")
        if isinstance(self.n_queues, bool) or int(self.n_queues) != self.n_queues or self.n_queues < 1:
            raise DomainError(f"n_queues must be an integer >= 1, got {self.n_queues!r}")

    @property
    def total_var(self) -> float:
        """Variance rate of one queue's driving noise, sigma**2 + sigma_a**2."""
        return self.sigma**2 + self.sigma_a**2

    @property
    def a_star(self) -> float:
        return self.sigma_a**4 / (2 * self.beta * self.sigma**2) + self.sigma_a**2 / self.beta

    @property
    def log_n(self) -> float:
        return math.log(self.n_queues)

    def with_n(self, n_queues: int) -> "ModelParams":
        return ModelParams(self.sigma, self.sigma_a, self.beta, n_queues)


@dataclass(frozen=True)
class RegimeConstants:
    lam: float
    a_star: float
    regime: Regime

    @property
    def one_minus_lambda(self) -> float:
        return 1.0 - self.lam


@dataclass(frozen=True)
class LevelSchedule:
    f_n: float
    t_n: float
    r_n: float | None
    k: float


@dataclass(frozen=True)
class FirstPassageSpec:
    """First passage of ``vol*B(t) + drift*t`` above ``level`` (B standard)."""

    level: float
    drift: float
    vol: float

    def __post_init__(self):
        if not self.level > 0:
            raise DomainError(f"level must be positive, got {self.level!r}")
        if not self.vol > 0:
            raise DomainError(f"vol must be positive, got {self.vol!r}")

    @property
    def finite_probability(self) -> float:
        """P(tau < inf) = min(1, exp(2*drift*level/vol**2))."""
        if self.drift >= 0:
            return 1.0
        return math.exp(2 * self.drift * self.level / self.vol**2)


def _check_a(a: float, *, strict: bool) -> None:
    if not math.isfinite(a) or a < 0 or (strict and a == 0):
        bound = "> 0" if strict else ">= 0"
        raise DomainError(f"deviation parameter a must be {bound}, got {a!r}")


def lambda_fraction(params: ModelParams, a: float) -> float:
    """Share of the excess level carried by the arrival process."""
    _check_a(a, strict=False)
    return 1.0 - params.sigma / math.sqrt(2 * a * params.beta + params.sigma**2)


def classify(params: ModelParams, a: float, rtol: float = REGIME_RTOL) -> Regime:
    a_star = params.a_star
    if abs(a - a_star) <= rtol * a_star:
        return Regime.CRITICAL
    return Regime.SUBCRITICAL if a < a_star else Regime.SUPERCRITICAL


def derived_constants(params: ModelParams, a: float) -> RegimeConstants:
    lam = lambda_fraction(params, a)
    return RegimeConstants(lam=lam, a_star=params.a_star, regime=classify(params, a))


def gamma_branches(params: ModelParams, a: float) -> tuple[float, float]:
    """Both closed forms of the exponent, regardless of which one applies.

    The first (arrival-dominated) form is used below ``a_star``, the second
    (union-bound) form from ``a_star`` on; they touch at ``a_star``.
    """
    s, sa, b = params.sigma, params.sigma_a, params.beta
    root = math.sqrt(2 * a * b + s * s)
    # 2ab + 2s^2 - 2s*root == (root - s)**2 avoids cancellation for small a
    dependent = (root - s) ** 2 / (sa * sa)
    independent = (2 * a * b - sa * sa) / (s * s + sa * sa)
    return dependent, independent


def gamma_exponent(params: ModelParams, a: float) -> float:
    """Power-law exponent gamma(a): P(M_N > f_N(a)) = N**(-gamma(a) + o(1))."""
    _check_a(a, strict=True)
    dependent, independent = gamma_branches(params, a)
    return dependent if classify(params, a) is Regime.SUBCRITICAL else independent


def log_correction_exponent(params: ModelParams, a: float) -> float:
    """Exponent kappa of the (log N)**(-kappa) factor below a_star; 0 otherwise."""
    if classify(params, a) is not Regime.SUBCRITICAL:
        return 0.0
    lam = lambda_fraction(params, a)
    return lam / (1 - lam) * params.sigma**2 / (2 * params.sigma_a**2)


def level(params: ModelParams, a: float, *, log_n: float | None = None) -> float:
    """f_N(a) = (sigma**2/(2 beta) + a) log N.

    ``log_n`` overrides log N, e.g. to evaluate at a non-integer N.
    """
    ln = params.log_n if log_n is None else log_n
    return (params.sigma**2 / (2 * params.beta) + a) * ln


def r_shift(params: ModelParams, a: float, *, log_n: float | None = None) -> float:
    """r_N = sigma*sqrt(2 a beta + sigma**2)/(4 beta) * log log N; needs N >= 3."""
    ln = params.log_n if log_n is None else log_n
    if not ln > 1:
        raise DomainError(f"r_N needs log log N > 0, i.e. N >= 3; got log N={ln!r}")
    s, b = params.sigma, params.beta
    return s * math.sqrt(2 * a * b + s * s) / (4 * b) * math.log(ln)


def level_schedule(params: ModelParams, a: float, k: float = 0.0, *,
                   log_n: float | None = None) -> LevelSchedule:
    """Level f_N(a), time T_N(a, k) = f_N(a)/beta + k sqrt(log N) and shift r_N.

    ``r_n`` is ``None`` when log log N <= 0 (N = 2). ``log_n`` overrides
    log N for non-integer N.
    """
    _check_a(a, strict=False)
    if log_n is None:
        if params.n_queues < 2:
            raise DomainError(f"level_schedule needs N >= 2 (log N > 0), got N={params.n_queues}")
        log_n = params.log_n
    elif not log_n > 0:
        raise DomainError(f"log N must be positive, got {log_n!r}")
    f_n = level(params, a, log_n=log_n)
    t_n = f_n / params.beta + k * math.sqrt(log_n)
    r_n = r_shift(params, a, log_n=log_n) if log_n > 1 else None
    return LevelSchedule(f_n=f_n, t_n=t_n, r_n=r_n, k=k)


def sup_tail_exponential(spec: FirstPassageSpec, x: float) -> float:
    """P(sup_{s>0} (vol*B(s) + drift*s) > x) = exp(2*drift*x/vol**2) for drift < 0."""
    if spec.drift >= 0:
        raise DomainError(f"supremum is a.s. infinite unless drift < 0, got drift={spec.drift!r}")
    if x < 0:
        raise DomainError(f"x must be nonnegative, got {x!r}")
    return math.exp(2 * spec.drift * x / spec.vol**2)


def clt_tail(params: ModelParams, x: float) -> float:
    """Limit of P(M_N > sigma**2/(2 beta) log N + x sqrt(log N))."""
    scale = params.sigma * params.sigma_a / (math.sqrt(2.0) * params.beta)
    return normal_sf(x / scale)


def clt_variance(params: ModelParams) -> float:
    """Variance sigma**2 sigma_a**2 / (2 beta**2) of the standardized limit."""
    return (params.sigma * params.sigma_a) ** 2 / (2 * params.beta**2)


def moderate_scaling(params: ModelParams, x: float) -> float:
    """x**2 beta**2 / (sigma**2 sigma_a**2), the limit of log N * gamma(x/sqrt(log N))."""
    return x * x * params.beta**2 / (params.sigma**2 * params.sigma_a**2)


def moderate_scaling_finite_n(params: ModelParams, x: float) -> float:
    """log N * gamma(x / sqrt(log N)) at the model's N (x > 0, N >= 2)."""
    if params.n_queues < 2:
        raise DomainError("needs N >= 2")
    ln = params.log_n
    return ln * gamma_exponent(params, x / math.sqrt(ln))
