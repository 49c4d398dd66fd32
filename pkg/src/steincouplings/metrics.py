"""Distances to the standard normal and the small smoothing/tail lemmas.

Only N(0,1) is supported as the reference law.  The normal CDF is evaluated
through the complementary error function (double-precision accurate, relative
error well below 1e-14 on |x| <= 8); beyond |x| = 10 the tails are treated as
exact 0/1.  The Wasserstein integrals use the closed-form antiderivative
  int Phi(x) dx = x*Phi(x) + phi(x),
so no quadrature error enters small distances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .core import DataError, InvalidParameterError

SQRT_2PI = math.sqrt(2.0 * math.pi)


def normal_cdf(x):
    """Standard normal CDF; tails beyond +-10 clipped to exact 0/1."""
    x = np.asarray(x, dtype=float)
    out = special.ndtr(x)
    out = np.where(x < -10.0, 0.0, out)
    out = np.where(x > 10.0, 1.0, out)
    return out if out.ndim else float(out)


def normal_pdf(x):
    x = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * x * x) / SQRT_2PI
    return out if out.ndim else float(out)


def normal_quantile(p):
    return special.ndtri(p)


def _phi_antideriv(x):
    """Antiderivative of Phi: x*Phi(x) + phi(x), with exact +-inf limits."""
    x = np.asarray(x, dtype=float)
    out = x * special.ndtr(x) + np.exp(-0.5 * x * x) / SQRT_2PI
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class DistanceEstimate:
    metric: str  # "kolmogorov" | "wasserstein"
    value: float
    n: int
    dkw_halfwidth: float | None = None

    def __post_init__(self):
        if self.value < 0:
            raise DataError("negative distance")
        if self.metric == "kolmogorov" and self.value > 1 + 1e-12:
            raise DataError("Kolmogorov distance above 1")


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finite support with probabilities (sorted by support point)."""

    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.support, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if s.ndim != 1 or s.shape != p.shape or s.size == 0:
            raise InvalidParameterError("support and probs must be 1-d, same length, non-empty")
        if np.any(p < -1e-15):
            raise InvalidParameterError("negative probability")
        if abs(math.fsum(p.tolist()) - 1.0) > 1e-12:
            raise InvalidParameterError("probabilities must sum to 1 within 1e-12")
        order = np.argsort(s, kind="stable")
        object.__setattr__(self, "support", s[order])
        object.__setattr__(self, "probs", p[order])

    @classmethod
    def from_samples_exact(cls, values, probs) -> "DiscreteDistribution":
        """Collapse duplicate support points (keyed on exact float equality)."""
        values = np.asarray(values, dtype=float)
        probs = np.asarray(probs, dtype=float)
        uniq, inv = np.unique(values, return_inverse=True)
        agg = np.zeros_like(uniq)
        np.add.at(agg, inv, probs)
        return cls(uniq, agg)

    def mean(self) -> float:
        return float(np.dot(self.support, self.probs))

    def var(self) -> float:
        m = self.mean()
        return float(np.dot((self.support - m) ** 2, self.probs))

    def cdf_right(self) -> np.ndarray:
        return np.cumsum(self.probs)

    def prob_interval(self, a: float, b: float) -> float:
        """P[a <= X <= b]."""
        mask = (self.support >= a) & (self.support <= b)
        return float(np.sum(self.probs[mask]))


def empirical_dk(samples) -> DistanceEstimate:
    """sup_x |F_n(x) - Phi(x)| over the sample points (exact for the ECDF)."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n < 1:
        raise InvalidParameterError("empirical_dk needs at least one sample")
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite sample values")
    cdf = normal_cdf(x)
    upper = np.arange(1, n + 1) / n - cdf
    lower = cdf - np.arange(0, n) / n
    value = float(max(upper.max(), lower.max(), 0.0))
    dkw = math.sqrt(math.log(2.0 / 0.01) / (2.0 * n))
    return DistanceEstimate("kolmogorov", value, n, dkw)


def exact_dk(dist: DiscreteDistribution) -> float:
    """sup |F - Phi| for a finite law, checking both one-sided limits."""
    cdf_right = dist.cdf_right()
    cdf_left = cdf_right - dist.probs
    phi = normal_cdf(dist.support)
    return float(
        max(np.max(np.abs(cdf_right - phi)), np.max(np.abs(cdf_left - phi)))
    )


def _integral_abs_cdf_gap(breaks: np.ndarray, levels: np.ndarray) -> float:
    """int |F - Phi| where F is the step function equal to levels[i] on
    (breaks[i], breaks[i+1]), levels[0]=0 before breaks[0], 1 after the end."""
    pieces = []
    # left tail: F = 0, integral of Phi from -inf to first break
    pieces.append(_phi_antideriv(breaks[0]))
    # right tail: F = 1, integral of (1 - Phi) from last break to +inf
    xn = breaks[-1]
    pieces.append(_phi_antideriv(xn) - xn)
    for i in range(len(breaks) - 1):
        a, b, c = breaks[i], breaks[i + 1], levels[i]
        if a == b:
            continue
        # int_a^b |c - Phi(x)| dx, Phi increasing: split at Phi^{-1}(c)
        if c <= normal_cdf(a):
            pieces.append((_phi_antideriv(b) - _phi_antideriv(a)) - c * (b - a))
        elif c >= normal_cdf(b):
            pieces.append(c * (b - a) - (_phi_antideriv(b) - _phi_antideriv(a)))
        else:
            xs = float(normal_quantile(c))
            left = c * (xs - a) - (_phi_antideriv(xs) - _phi_antideriv(a))
            right = (_phi_antideriv(b) - _phi_antideriv(xs)) - c * (b - xs)
            pieces.append(left + right)
    return math.fsum(pieces)


def empirical_dw(samples) -> DistanceEstimate:
    """int |F_n - Phi| dx computed piecewise in closed form."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n < 1:
        raise InvalidParameterError("empirical_dw needs at least one sample")
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite sample values")
    levels = np.arange(1, n + 1) / n
    value = _integral_abs_cdf_gap(x, levels[:-1] if n > 1 else levels[:0])
    return DistanceEstimate("wasserstein", max(value, 0.0), n)


def exact_dw(dist: DiscreteDistribution) -> float:
    """int |F - Phi| dx for a finite law (exact piecewise integration)."""
    levels = dist.cdf_right()
    return max(_integral_abs_cdf_gap(dist.support, levels[:-1]), 0.0)


def dk_from_dw(dw: float) -> float:
    """Kolmogorov bound 1.35*sqrt(d_W) from the Wasserstein distance."""
    if dw < 0:
        raise InvalidParameterError("d_W must be >= 0")
    return 1.35 * math.sqrt(dw)


def lemma8_bound(a: float, b: float, dk: float) -> float:
    """Upper bound (b-a)/sqrt(2 pi) + 2 d_K for P[a <= V <= b]."""
    if not a < b:
        raise InvalidParameterError("need a < b")
    if dk < 0:
        raise InvalidParameterError("d_K must be >= 0")
    return (b - a) / SQRT_2PI + 2.0 * dk


def chernoff_check(n: int, p: float, x: float) -> dict:
    """Binomial tail P[Bi(n,p) > x] against e^{-x/2}, valid when x > 5np.

    The exact tail is an explicit summation of pmf terms (in log space,
    accumulated from the largest term for accuracy).
    """
    if not (0.0 <= p <= 1.0) or n < 0:
        raise InvalidParameterError("need n >= 0 and 0 <= p <= 1")
    applicable = x > 5.0 * n * p
    bound = math.exp(-x / 2.0)
    k_min = math.floor(x) + 1
    if k_min > n or p == 0.0:
        tail = 0.0
    elif p == 1.0:
        tail = 1.0 if n > x else 0.0
    else:
        logs = []
        lp, lq = math.log(p), math.log1p(-p)
        for k in range(k_min, n + 1):
            logs.append(
                math.lgamma(n + 1)
                - math.lgamma(k + 1)
                - math.lgamma(n - k + 1)
                + k * lp
                + (n - k) * lq
            )
        peak = max(logs)
        tail = math.exp(peak) * math.fsum(math.exp(v - peak) for v in logs)
    return {"bound": bound, "exact_tail": min(tail, 1.0), "applicable": applicable}
