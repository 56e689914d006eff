"""Shared numerical substrate: normal special functions, quadrature, random
streams and summary statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import integrate as _integrate
from scipy import special

SQRT2 = math.sqrt(2.0)


def erf(x):
    """Error function; accepts scalars or arrays."""
    if np.ndim(x) == 0:
        return math.erf(float(x))
    return special.erf(x)


def normal_cdf(x):
    if np.ndim(x) == 0:
        return 0.5 * math.erfc(-float(x) / SQRT2)
    return special.ndtr(x)


def normal_sf(x):
    """Upper tail 1 - Phi(x), accurate far into the tail."""
    if np.ndim(x) == 0:
        return 0.5 * math.erfc(float(x) / SQRT2)
    return special.ndtr(-np.asarray(x))


def normal_pdf(x):
    x = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return float(out) if out.ndim == 0 else out


def log_normal_cdf(x):
    return special.log_ndtr(x)


class IntegrationError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""


def integrate(
    f: Callable[[float], float],
    lower: float = -math.inf,
    upper: float = math.inf,
    *,
    points: Sequence[float] = (),
    tol_abs: float = 1e-12,
    tol_rel: float = 1e-10,
    limit: int = 500,
) -> tuple[float, float]:
    """Integrate ``f`` over a finite interval, a half-line or the whole line.

    ``points`` are interior break points (peaks, kinks); the range is split
    there so that each piece is handled separately, which matters for sharply
    peaked integrands on infinite ranges.

    Returns ``(value, error_estimate)``. Raises :class:`IntegrationError` when
    a piece fails to converge within ``limit`` subdivisions.
    """
    cuts = sorted(p for p in points if lower < p < upper)
    edges = [lower, *cuts, upper]
    total = 0.0
    err_total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        if lo == hi:
            continue
        res = _integrate.quad(f, lo, hi, epsabs=tol_abs, epsrel=tol_rel, limit=limit, full_output=1)
        value, err = res[0], res[1]
        # quad appends a message only when it flags a problem; a roundoff
        # warning with an error estimate inside tolerance is still accepted
        flagged = len(res) > 3
        if not math.isfinite(value) or (flagged and err > 10 * max(tol_abs, tol_rel * abs(value))):
            msg = res[3] if flagged else "non-finite value"
            raise IntegrationError(f"quadrature on [{lo}, {hi}] did not converge ({msg!s:.120}): "
                                   f"value={value!r}, error={err!r}")
        total += value
        err_total += err
    return total, err_total


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream keyed by ``(master_seed, stream_index)``.

    Backed by the Philox counter-based generator with the pair used directly
    as its 128-bit key, so stream ``i`` is available without generating
    streams ``0..i-1`` and is identical on every platform.
    """

    master_seed: int
    stream_index: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_index"):
            v = getattr(self, name)
            if not (0 <= int(v) < 2**64):
                raise ValueError(f"{name} must fit in an unsigned 64-bit integer, got {v}")

    def generator(self, substream: int = 0) -> np.random.Generator:
        """Numpy generator for this stream.

        Substreams share the key and start at widely separated counter
        offsets (``substream * 2**192`` blocks), so they never overlap.
        """
        counter = [0, 0, 0, int(substream)]
        bitgen = np.random.Philox(key=[int(self.stream_index), int(self.master_seed)], counter=counter)
        return np.random.Generator(bitgen)

    def child(self, index: int) -> "RngStream":
        return RngStream(self.master_seed, index)


def gaussian_sample(stream: RngStream | np.random.Generator, size=None):
    """Standard normal draws (ziggurat) from ``stream``."""
    gen = stream.generator() if isinstance(stream, RngStream) else stream
    return gen.standard_normal(size)


@dataclass(frozen=True)
class SummaryStats:
    n: int
    mean: float
    stderr: float
    ci_low: float
    ci_high: float

    @property
    def sd(self) -> float:
        return self.stderr * math.sqrt(self.n)


Z95 = 1.959963984540054


def summarize(values: Iterable[float]) -> SummaryStats:
    """Mean, standard error ``sd/sqrt(n)`` and 95% normal-approximation CI.

    Sums are exactly rounded (``math.fsum``), so the result does not depend
    on how the values were produced or ordered.
    """
    x = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float).ravel()
    n = x.size
    if n == 0:
        raise ValueError("cannot summarize an empty sample")
    mean = math.fsum(x) / n
    if n > 1:
        var = math.fsum((x - mean) ** 2) / (n - 1)
    else:
        var = 0.0
    stderr = math.sqrt(var / n)
    half = Z95 * stderr
    return SummaryStats(n=n, mean=mean, stderr=stderr, ci_low=mean - half, ci_high=mean + half)
