"""Reference implementations of the generic coupling constructions.

Each factory returns a :class:`~steincouplings.core.CouplingSampler`.  All
couplings that admit a finite outcome space expose ``enumerate`` so the
coupling identity can be checked exactly; the deliberately inexact variants
(``TwoRunsCoupling(g_variant="classic")`` and the approximate-W Curie-Weiss
sampler) carry ``exact = False``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import (
    CouplingSampler,
    EnumeratedOutcomes,
    InvalidParameterError,
    UnsupportedCouplingError,
    batch_from_arrays,
    check_enumeration_size,
)

# ---------------------------------------------------------------------------
# Summands and independent-sum specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscreteSummand:
    """Centered discrete summand distribution (shared by all coordinates)."""

    values: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != len(self.probs) or not self.values:
            raise InvalidParameterError("values/probs must be same nonzero length")
        if abs(math.fsum(self.probs) - 1.0) > 1e-12 or min(self.probs) < 0:
            raise InvalidParameterError("probs must be a probability vector")
        if abs(self.mean()) > 1e-12:
            raise InvalidParameterError("summand must be centered (E X = 0)")

    def mean(self) -> float:
        return math.fsum(v * p for v, p in zip(self.values, self.probs))

    def var(self) -> float:
        return math.fsum(v * v * p for v, p in zip(self.values, self.probs))

    def sample(self, rng, size) -> np.ndarray:
        cum = np.cumsum(self.probs)
        idx = np.searchsorted(cum, rng.random(size))
        return np.asarray(self.values, dtype=float)[idx]


def rademacher_summand(n: int) -> DiscreteSummand:
    """X_i = +-1/sqrt(n) equally likely, so Var X_i = 1/n and Var W = 1."""
    v = 1.0 / math.sqrt(n)
    return DiscreteSummand((-v, v), (0.5, 0.5))


@dataclass(frozen=True)
class IndependentSumSpec:
    """W = sum of n i.i.d. centered summands."""

    n: int
    summand: DiscreteSummand

    def __post_init__(self):
        if self.n < 1:
            raise InvalidParameterError("n must be >= 1")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.n * self.summand.var())

    def enumerate_configs(self, copies: int = 1):
        """All (prob, x-matrix) pairs over `copies` independent vectors."""
        k = len(self.summand.values)
        check_enumeration_size(k ** (self.n * copies) * self.n)
        vals = np.asarray(self.summand.values)
        out = []
        for combo in itertools.product(range(k), repeat=self.n * copies):
            p = 1.0
            for c in combo:
                p *= self.summand.probs[c]
            x = vals[np.array(combo)].reshape(copies, self.n)
            out.append((p, x))
        return out


class _IndependentSumBase(CouplingSampler):
    def __init__(self, spec: IndependentSumSpec, standardize: bool = True):
        self.spec = spec
        self.scale = spec.sigma if standardize else 1.0
        if self.scale <= 0:
            raise InvalidParameterError("degenerate summand (zero variance)")


class DeletionSumCoupling(_IndependentSumBase):
    """W' = W - X_I, G = -n X_I.

    ``w_dd="w_prime"`` sets the auxiliary W'' to W' (so D' = D), the choice
    used by the recursive Kolmogorov argument for i.i.d. sums.
    """

    name = "indep_sum_deletion"
    marginals_equal = False
    pair_exchangeable = False

    def __init__(self, spec, standardize=True, w_dd: str = "w"):
        super().__init__(spec, standardize)
        if w_dd not in ("w", "w_prime"):
            raise InvalidParameterError("w_dd must be 'w' or 'w_prime'")
        self.w_dd_mode = w_dd

    def draw_batch(self, rng, size):
        n, sc = self.spec.n, self.scale
        x = self.spec.summand.sample(rng, (size, n))
        i = rng.integers(0, n, size=size)
        w = x.sum(axis=1)
        xi = x[np.arange(size), i]
        wdd = (w - xi) if self.w_dd_mode == "w_prime" else w
        return batch_from_arrays(w / sc, (w - xi) / sc, -n * xi / sc, wdd / sc)

    def draw(self, rng):
        return self.draw_batch(rng, 1).row(0)

    def conditional_gd(self, rng):
        x = self.spec.summand.sample(rng, self.spec.n)
        return float(np.sum(x * x)) / self.scale**2

    def conditional_gd_batch(self, rng, size):
        x = self.spec.summand.sample(rng, (size, self.spec.n))
        return (x * x).sum(axis=1) / self.scale**2

    def component_draw(self, rng):
        x = self.spec.summand.sample(rng, self.spec.n)
        return -x / self.scale, -x / self.scale

    def enumerate(self):
        n, sc = self.spec.n, self.scale
        probs, w, wp, g = [], [], [], []
        for p, xm in self.spec.enumerate_configs(copies=1):
            x = xm[0]
            tot = x.sum()
            for i in range(n):
                probs.append(p / n)
                w.append(tot / sc)
                wp.append((tot - x[i]) / sc)
                g.append(-n * x[i] / sc)
        wdd = wp if self.w_dd_mode == "w_prime" else w
        return EnumeratedOutcomes(np.array(probs), batch_from_arrays(w, wp, g, list(wdd)))


class ReplacementSumCoupling(_IndependentSumBase):
    """W' = W - X_I + X'_I, G = (n/2)(X'_I - X_I); classic exchangeable pair."""

    name = "indep_sum_replacement"
    marginals_equal = True
    pair_exchangeable = True

    @property
    def lam(self) -> float:
        return 1.0 / self.spec.n

    def draw_batch(self, rng, size):
        n, sc = self.spec.n, self.scale
        x = self.spec.summand.sample(rng, (size, n))
        xp = self.spec.summand.sample(rng, (size, n))
        i = rng.integers(0, n, size=size)
        w = x.sum(axis=1)
        xi = x[np.arange(size), i]
        xpi = xp[np.arange(size), i]
        return batch_from_arrays(w / sc, (w - xi + xpi) / sc, 0.5 * n * (xpi - xi) / sc)

    def draw(self, rng):
        return self.draw_batch(rng, 1).row(0)

    def conditional_gd(self, rng):
        x = self.spec.summand.sample(rng, self.spec.n)
        xp = self.spec.summand.sample(rng, self.spec.n)
        return 0.5 * float(np.sum((xp - x) ** 2)) / self.scale**2

    def enumerate(self):
        n, sc = self.spec.n, self.scale
        vals = np.asarray(self.spec.summand.values)
        pr = self.spec.summand.probs
        probs, w, wp, g = [], [], [], []
        for p, xm in self.spec.enumerate_configs(copies=1):
            x = xm[0]
            tot = x.sum()
            for i in range(n):
                for v, q in zip(vals, pr):
                    probs.append(p * q / n)
                    w.append(tot / sc)
                    wp.append((tot - x[i] + v) / sc)
                    g.append(0.5 * n * (v - x[i]) / sc)
        return EnumeratedOutcomes(np.array(probs), batch_from_arrays(w, wp, g))


class DuplicationSumCoupling(_IndependentSumBase):
    """W' = W + X'_I, G = n(X'_I - X_I).

    W' has n+1 effective summands, so its marginal differs from W's; the
    sampler flags this through ``marginals_equal = False``.
    """

    name = "indep_sum_duplication"
    marginals_equal = False
    pair_exchangeable = False

    def draw_batch(self, rng, size):
        n, sc = self.spec.n, self.scale
        x = self.spec.summand.sample(rng, (size, n))
        xp = self.spec.summand.sample(rng, (size, n))
        i = rng.integers(0, n, size=size)
        w = x.sum(axis=1)
        xi = x[np.arange(size), i]
        xpi = xp[np.arange(size), i]
        return batch_from_arrays(w / sc, (w + xpi) / sc, n * (xpi - xi) / sc)

    def draw(self, rng):
        return self.draw_batch(rng, 1).row(0)

    def conditional_gd(self, rng):
        x = self.spec.summand.sample(rng, self.spec.n)
        xp = self.spec.summand.sample(rng, self.spec.n)
        return float(np.sum((xp - x) * xp)) / self.scale**2

    def enumerate(self):
        n, sc = self.spec.n, self.scale
        vals = np.asarray(self.spec.summand.values)
        pr = self.spec.summand.probs
        probs, w, wp, g = [], [], [], []
        for p, xm in self.spec.enumerate_configs(copies=1):
            x = xm[0]
            tot = x.sum()
            for i in range(n):
                for v, q in zip(vals, pr):
                    probs.append(p * q / n)
                    w.append(tot / sc)
                    wp.append((tot + v) / sc)
                    g.append(n * (v - x[i]) / sc)
        return EnumeratedOutcomes(np.array(probs), batch_from_arrays(w, wp, g))


def indep_sum_deletion(
    spec: IndependentSumSpec, standardize=True, w_dd: str = "w"
) -> DeletionSumCoupling:
    return DeletionSumCoupling(spec, standardize, w_dd)


def indep_sum_replacement(spec: IndependentSumSpec, standardize=True) -> ReplacementSumCoupling:
    return ReplacementSumCoupling(spec, standardize)


def indep_sum_duplication(spec: IndependentSumSpec, standardize=True) -> DuplicationSumCoupling:
    return DuplicationSumCoupling(spec, standardize)


# ---------------------------------------------------------------------------
# Classic exchangeable pairs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExchangeablePairSpec:
    """User-asserted exchangeable pair with linear regression constant lambda."""

    pair_draw: object  # callable rng -> (w, w')
    lam: float
    pair_enumerate: object | None = None  # callable -> list[(p, w, w')]
    pair_draw_batch: object | None = None  # callable (rng, size) -> (w, w') arrays

    def __post_init__(self):
        if not (math.isfinite(self.lam) and self.lam > 0):
            raise InvalidParameterError("lambda must be > 0 (degenerate pair rejected)")


class ExchangeablePairCoupling(CouplingSampler):
    """G = (W' - W)/(2 lambda) under the linear regression condition."""

    name = "exchangeable_pair_linear"
    marginals_equal = True
    pair_exchangeable = True

    def __init__(self, spec: ExchangeablePairSpec):
        self.spec = spec

    def draw(self, rng):
        w, wp = self.spec.pair_draw(rng)
        return batch_from_arrays([w], [wp], [(wp - w) / (2 * self.spec.lam)]).row(0)

    def draw_batch(self, rng, size):
        if self.spec.pair_draw_batch is None:
            return super().draw_batch(rng, size)
        w, wp = self.spec.pair_draw_batch(rng, size)
        w = np.asarray(w, dtype=float)
        wp = np.asarray(wp, dtype=float)
        return batch_from_arrays(w, wp, (wp - w) / (2 * self.spec.lam))

    def enumerate(self):
        if self.spec.pair_enumerate is None:
            return None
        rows = list(self.spec.pair_enumerate())
        check_enumeration_size(len(rows))
        probs = np.array([r[0] for r in rows])
        w = np.array([r[1] for r in rows])
        wp = np.array([r[2] for r in rows])
        return EnumeratedOutcomes(probs, batch_from_arrays(w, wp, (wp - w) / (2 * self.spec.lam)))


def exchangeable_pair_linear(spec: ExchangeablePairSpec) -> ExchangeablePairCoupling:
    return ExchangeablePairCoupling(spec)


def linearity_remainder(
    sampler: ExchangeablePairCoupling,
    n_samples: int | None = None,
    rng: np.random.Generator | None = None,
    max_groups: int = 10_000,
) -> dict:
    """Estimate the remainder R = E(W'-W | W) + lambda*W on discrete W.

    Returns the diagnostic bound r0 <= E|R|/lambda.  Exact under pair
    enumeration; otherwise groups MC draws by their exact W value and
    refuses when W looks continuous (too many distinct values).
    """
    lam = sampler.spec.lam
    enum = sampler.enumerate()
    if enum is not None and n_samples is None:
        w, wp, probs = enum.batch.w, enum.batch.w_prime, enum.probs
    else:
        if n_samples is None or rng is None:
            raise InvalidParameterError("n_samples and rng required without enumeration")
        batch = sampler.draw_batch(rng, n_samples)
        w, wp = batch.w, batch.w_prime
        probs = np.full(n_samples, 1.0 / n_samples)
    uniq, inv = np.unique(w, return_inverse=True)
    if uniq.size > max_groups:
        raise UnsupportedCouplingError(
            "remainder diagnostic supports discrete/enumerable W only "
            f"({uniq.size} distinct values observed)"
        )
    pw = np.zeros(uniq.size)
    mean_d = np.zeros(uniq.size)
    np.add.at(pw, inv, probs)
    np.add.at(mean_d, inv, probs * (wp - w))
    mean_d /= pw
    remainder = mean_d + lam * uniq
    e_abs_r = float(np.sum(pw * np.abs(remainder)))
    return {
        "lambda": lam,
        "e_abs_remainder": e_abs_r,
        "r0_bound": e_abs_r / lam,
        "w_values": uniq,
        "remainder": remainder,
    }


# ---------------------------------------------------------------------------
# 2-runs on a circle (multivariate exchangeable-pair coordinate coupling)
# ---------------------------------------------------------------------------


class TwoRunsCoupling(CouplingSampler):
    """Circular 2-runs count V = sum_i (xi_i xi_{i+1} - p^2) with one site
    resampled.

    ``g_variant``:
      * "27c"     simplified coordinate G (a Stein coupling),
      * "27d"     the embedded-pair coordinate G (also a Stein coupling),
      * "classic" G = (n/4)(V'-V), which is NOT a Stein coupling here: its
        residual equals the linearity remainder projection -p E[U f(W)]/sigma
        with U = sum_i (xi_i - p).
    """

    name = "two_runs"

    def __init__(self, n: int, p: float, g_variant: str = "27c", standardize: bool = True):
        if n < 3:
            raise InvalidParameterError("two-runs needs n >= 3")
        if not 0.0 < p < 1.0:
            raise InvalidParameterError("p must lie strictly in (0,1); V degenerates otherwise")
        if g_variant not in ("27c", "27d", "classic"):
            raise InvalidParameterError(f"unknown g_variant {g_variant!r}")
        self.n = n
        self.p = p
        self.g_variant = g_variant
        self.exact = g_variant != "classic"
        self.pair_exchangeable = True
        self.marginals_equal = True
        var = n * (p**2 - p**4) + 2 * n * (p**3 - p**4)
        self.sigma = math.sqrt(var)
        self.scale = self.sigma if standardize else 1.0

    def _g_raw(self, xi_prev, xi_i, xi_next, xip):
        n, p = self.n, self.p
        if self.g_variant == "27c":
            return 0.5 * n * (p * xip - p * xi_i + xip * xi_next - xi_i * xi_next)
        if self.g_variant == "27d":
            return 0.5 * n * (
                p * xip
                - p * xi_i
                + 0.5 * (xi_prev * xip + xip * xi_next - xi_prev * xi_i - xi_i * xi_next)
            )
        # classic: (n/4)(V' - V)
        dv = -xi_prev * xi_i - xi_i * xi_next + xi_prev * xip + xip * xi_next
        return 0.25 * n * dv

    def _build(self, xi, i, xip):
        n, p, sc = self.n, self.p, self.scale
        v = xi @ np.roll(xi, -1) - n * p * p
        prev_i, next_i = (i - 1) % n, (i + 1) % n
        dv = -xi[prev_i] * xi[i] - xi[i] * xi[next_i] + xi[prev_i] * xip + xip * xi[next_i]
        g = self._g_raw(xi[prev_i], xi[i], xi[next_i], xip)
        return v / sc, (v + dv) / sc, g / sc

    def draw(self, rng):
        xi = (rng.random(self.n) < self.p).astype(float)
        i = int(rng.integers(self.n))
        xip = float(rng.random() < self.p)
        w, wp, g = self._build(xi, i, xip)
        return batch_from_arrays([w], [wp], [g]).row(0)

    def draw_batch(self, rng, size):
        n, p, sc = self.n, self.p, self.scale
        xi = (rng.random((size, n)) < p).astype(float)
        i = rng.integers(0, n, size=size)
        xip = (rng.random(size) < p).astype(float)
        rows = np.arange(size)
        v = (xi * np.roll(xi, -1, axis=1)).sum(axis=1) - n * p * p
        prev = xi[rows, (i - 1) % n]
        cur = xi[rows, i]
        nxt = xi[rows, (i + 1) % n]
        dv = -prev * cur - cur * nxt + prev * xip + xip * nxt
        g = self._g_raw(prev, cur, nxt, xip)
        return batch_from_arrays(v / sc, (v + dv) / sc, g / sc)

    def enumerate(self):
        n = self.n
        check_enumeration_size(2**n * n * 2)
        probs, w, wp, g = [], [], [], []
        for bits in itertools.product((0.0, 1.0), repeat=n):
            xi = np.array(bits)
            p_cfg = self.p ** xi.sum() * (1 - self.p) ** (n - xi.sum())
            for i in range(n):
                for xip, q in ((0.0, 1 - self.p), (1.0, self.p)):
                    a, b, c = self._build(xi, i, xip)
                    probs.append(p_cfg * q / n)
                    w.append(a)
                    wp.append(b)
                    g.append(c)
        return EnumeratedOutcomes(np.array(probs), batch_from_arrays(w, wp, g))

    def conditional_gd(self, rng):
        """Exact average of G*D over (I, resampled bit) given the bit config."""
        n, p, sc = self.n, self.p, self.scale
        xi = (rng.random(n) < p).astype(float)
        tot = 0.0
        for i in range(n):
            prev_i, next_i = (i - 1) % n, (i + 1) % n
            for xip, q in ((0.0, 1 - p), (1.0, p)):
                dv = (
                    -xi[prev_i] * xi[i]
                    - xi[i] * xi[next_i]
                    + xi[prev_i] * xip
                    + xip * xi[next_i]
                )
                tot += q * self._g_raw(xi[prev_i], xi[i], xi[next_i], xip) * dv
        return tot / (n * sc * sc)

    def component_draw(self, rng):
        """Per-index (Y_i, D_i) with an independent resampled bit per site."""
        n = self.n
        xi = (rng.random(n) < self.p).astype(float)
        xips = (rng.random(n) < self.p).astype(float)
        y = np.empty(n)
        d = np.empty(n)
        for i in range(n):
            prev_i, next_i = (i - 1) % n, (i + 1) % n
            dv = (
                -xi[prev_i] * xi[i]
                - xi[i] * xi[next_i]
                + xi[prev_i] * xips[i]
                + xips[i] * xi[next_i]
            )
            y[i] = self._g_raw(xi[prev_i], xi[i], xi[next_i], xips[i]) / n
            d[i] = dv
        return y / self.scale, d / self.scale

    def classic_residual_reference(self, family) -> list[float]:
        """Exact -(p/sigma) E[U f(W)] for each family member: the value the
        classic-G residual must match (the remainder projection)."""
        n, p, sc = self.n, self.p, self.scale
        out = []
        terms_by_f = [[] for _ in family.members]
        for bits in itertools.product((0.0, 1.0), repeat=n):
            xi = np.array(bits)
            p_cfg = p ** xi.sum() * (1 - p) ** (n - xi.sum())
            u = xi.sum() - n * p
            v = (xi @ np.roll(xi, -1) - n * p * p) / sc
            for j, m in enumerate(family.members):
                terms_by_f[j].append(p_cfg * u * float(m(np.array([v]))[0]))
        for j in range(len(family.members)):
            out.append(-(p / sc) * math.fsum(terms_by_f[j]))
        return out


def two_runs_coupling(n: int, p: float, g_variant: str = "27c", standardize=True) -> TwoRunsCoupling:
    return TwoRunsCoupling(n, p, g_variant, standardize)


# ---------------------------------------------------------------------------
# Curie-Weiss antisymmetric construction
# ---------------------------------------------------------------------------


class CurieWeissCoupling(CouplingSampler):
    """Magnetization recentred by its conditional means, under Glauber dynamics.

    The Gibbs weights are exp{(beta/n) sum_{i<j} s_i s_j + beta*h sum_i s_i},
    matching the conditional mean tanh(beta*m_i + beta*h) used in W.  The
    "exact" variant W = m - (1/n) sum_i tanh(beta*m_i + beta*h) is a Stein
    coupling; the "approximate" variant W = m - tanh(beta*m + beta*h) has a
    residual bounded by beta/n times the test function's sup norm.
    """

    name = "curie_weiss"
    marginals_equal = True
    pair_exchangeable = True

    def __init__(
        self,
        n: int,
        beta: float,
        h: float = 0.0,
        mcmc_burnin: int | None = None,
        mcmc_thin: int | None = None,
        variant: str = "exact",
    ):
        if n < 2 or beta < 0:
            raise InvalidParameterError("need n >= 2 and beta >= 0")
        if variant not in ("exact", "approximate"):
            raise InvalidParameterError(f"unknown variant {variant!r}")
        self.n = n
        self.beta = beta
        self.h = h
        self.burnin = 100 * n if mcmc_burnin is None else int(mcmc_burnin)
        self.thin = 2 * n if mcmc_thin is None else int(mcmc_thin)
        self.variant = variant
        self.exact = variant == "exact"
        self.r0_bound = beta / n  # only meaningful for the approximate variant

    def _w_of(self, spins: np.ndarray) -> float:
        s_sum = spins.sum()
        m = s_sum / self.n
        if self.variant == "approximate":
            return m - math.tanh(self.beta * m + self.beta * self.h)
        fields = self.beta * (s_sum - spins) / self.n + self.beta * self.h
        return m - float(np.mean(np.tanh(fields)))

    def draw_batch(self, rng, size):
        n = self.n
        # burn-in before the first sample, `thin` updates before each later one
        total = self.burnin + self.thin * (size - 1)
        spins = np.where(rng.random(n) < 0.5, -1, 1).astype(np.int8)
        site_updates = rng.integers(0, n, size=max(total, 1)).astype(np.int64)
        u_updates = rng.random(max(total, 1))
        sample_sites = rng.integers(0, n, size=size).astype(np.int64)
        sample_unifs = rng.random(size)
        w = np.empty(size)
        wp = np.empty(size)
        g = np.empty(size)
        _kernels.glauber_curie_weiss(
            spins,
            float(self.beta),
            float(self.beta * self.h),
            site_updates,
            u_updates,
            self.burnin,
            self.thin,
            sample_sites,
            sample_unifs,
            self.variant == "approximate",
            w,
            wp,
            g,
        )
        self._convergence_warning(w)
        return batch_from_arrays(w, wp, g)

    def draw(self, rng):
        return self.draw_batch(rng, 1).row(0)

    def _convergence_warning(self, w: np.ndarray) -> None:
        m = w.shape[0]
        if m < 200:
            return
        half = m // 2
        a, b = w[:half], w[half:]
        se = math.sqrt(a.var() / half + b.var() / (m - half))
        if se > 0 and abs(a.mean() - b.mean()) > 6.0 * se:
            warnings.warn(
                "Curie-Weiss chain halves disagree; increase burn-in/thinning",
                RuntimeWarning,
                stacklevel=3,
            )

    def enumerate(self):
        n = self.n
        check_enumeration_size(2**n * n * 2)
        states = list(itertools.product((-1, 1), repeat=n))
        energies = []
        for s in states:
            tot = sum(s)
            pair_sum = (tot * tot - n) / 2.0
            energies.append(self.beta / n * pair_sum + self.beta * self.h * tot)
        energies = np.array(energies)
        weights = np.exp(energies - energies.max())
        weights /= weights.sum()
        probs, w, wp, g = [], [], [], []
        for s, pw in zip(states, weights):
            spins = np.array(s, dtype=float)
            w0 = self._w_of(spins)
            s_sum = spins.sum()
            for i in range(n):
                f_i = self.beta * (s_sum - spins[i]) / n + self.beta * self.h
                p_plus = 1.0 / (1.0 + math.exp(-2.0 * f_i))
                for new, q in ((1.0, p_plus), (-1.0, 1.0 - p_plus)):
                    sp = spins.copy()
                    sp[i] = new
                    probs.append(pw * q / n)
                    w.append(w0)
                    wp.append(self._w_of(sp))
                    g.append(-0.5 * (spins[i] - new))
        return EnumeratedOutcomes(np.array(probs), batch_from_arrays(w, wp, g))


def curie_weiss_coupling(
    n: int,
    beta: float,
    h: float = 0.0,
    mcmc_burnin: int | None = None,
    mcmc_thin: int | None = None,
    variant: str = "exact",
) -> CurieWeissCoupling:
    return CurieWeissCoupling(n, beta, h, mcmc_burnin, mcmc_thin, variant)


# ---------------------------------------------------------------------------
# Poisson-equation couplings on finite chains
# ---------------------------------------------------------------------------


@dataclass
class FiniteChainSpec:
    """Finite ergodic chain with centered reward phi (E_pi phi = 0)."""

    kernel: np.ndarray
    phi: np.ndarray
    t_max: int = 10_000
    auto_center: bool = False

    def __post_init__(self):
        p = np.asarray(self.kernel, dtype=float)
        phi = np.asarray(self.phi, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1] or p.shape[0] < 2:
            raise InvalidParameterError("kernel must be a square matrix, >= 2 states")
        if np.any(p < -1e-15) or np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-10:
            raise InvalidParameterError("kernel rows must be probability vectors")
        if phi.shape != (p.shape[0],):
            raise InvalidParameterError("phi must have one value per state")
        s = p.shape[0]
        reach = np.linalg.matrix_power(np.eye(s) + p, s)
        if np.any(reach <= 0):
            raise InvalidParameterError("kernel is not irreducible")
        if np.any(np.linalg.matrix_power(p, s * s + 1) <= 1e-300):
            raise InvalidParameterError("kernel is not aperiodic")
        # stationary law: solve (P^T - I) pi = 0 with sum pi = 1
        a = np.vstack([p.T - np.eye(s), np.ones(s)])
        b = np.zeros(s + 1)
        b[-1] = 1.0
        pi, *_ = np.linalg.lstsq(a, b, rcond=None)
        self.pi = pi
        mean_phi = float(pi @ phi)
        if abs(mean_phi) > 1e-10:
            if not self.auto_center:
                raise InvalidParameterError(
                    f"phi must be centered under stationarity (E phi = {mean_phi:.3e}); "
                    "pass auto_center=True to subtract it"
                )
            phi = phi - mean_phi
        self.kernel = p
        self.phi = phi
        self.reversible = bool(
            np.max(np.abs(pi[:, None] * p - (pi[:, None] * p).T)) < 1e-10
        )

    def solve_poisson(self) -> np.ndarray:
        """psi with (I - P) psi = phi and pi.psi = 0 (direct linear solve)."""
        s = self.kernel.shape[0]
        psi = np.linalg.solve(np.eye(s) - self.kernel + np.outer(np.ones(s), self.pi), self.phi)
        return psi

    def neumann_psi(self, tol: float = 1e-14, max_terms: int = 100_000) -> np.ndarray:
        """Truncated series sum_k P^k phi; retained as a test oracle only."""
        term = self.phi.copy()
        acc = term.copy()
        for _ in range(max_terms):
            term = self.kernel @ term
            acc += term
            if np.max(np.abs(term)) < tol:
                return acc
        raise InvalidParameterError("Neumann series did not converge")

    def g_bound_constant(self, tol: float = 1e-14, max_terms: int = 100_000) -> float:
        """C with sum_k |P^k phi(x) - P^k phi(y)| <= C for all x, y."""
        s = self.kernel.shape[0]
        acc = np.zeros((s, s))
        term = self.phi.copy()
        for _ in range(max_terms):
            acc += np.abs(term[:, None] - term[None, :])
            term = self.kernel @ term
            if np.max(np.abs(term)) < tol:
                return float(acc.max())
        raise InvalidParameterError("series for C did not converge")


class PoissonEquationCoupling(CouplingSampler):
    """(phi(X), phi(X'), (psi(X') - psi(X))/2) for an exchangeable step pair.

    The "coupling_time" variant instead simulates two independent copies of
    the chain from (X, X') until they meet at time T and uses
    G = T (phi(X'_I) - phi(X_I))/2 with I uniform on {0..T-1}.  Draws whose
    meeting time exceeds t_max are rejected, counted and redrawn.
    """

    name = "poisson_equation"
    marginals_equal = True

    def __init__(self, spec: FiniteChainSpec, variant: str = "linear_solve", standardize=True):
        if variant not in ("linear_solve", "coupling_time"):
            raise InvalidParameterError(f"unknown variant {variant!r}")
        self.spec = spec
        self.variant = variant
        self.pair_exchangeable = spec.reversible
        if not spec.reversible:
            warnings.warn(
                "chain is not reversible: (X, X') is not exchangeable and the "
                "construction is only approximate",
                RuntimeWarning,
                stacklevel=2,
            )
        var = float(spec.pi @ spec.phi**2)
        if var <= 0:
            raise InvalidParameterError("phi is degenerate under stationarity")
        self.sigma = math.sqrt(var)
        self.scale = self.sigma if standardize else 1.0
        self.psi = spec.solve_poisson()
        self.c_bound = spec.g_bound_constant()
        self.rejections = 0
        self._cum_pi = np.cumsum(spec.pi)
        self._cum_rows = np.cumsum(spec.kernel, axis=1)
        p, phi, psi = spec.kernel, spec.phi, self.psi
        self._cond_gd = (
            p * (0.5 * (psi[None, :] - psi[:, None]) * (phi[None, :] - phi[:, None]))
        ).sum(axis=1) / self.scale**2

    def _draw_pair(self, rng):
        x = int(np.searchsorted(self._cum_pi, rng.random()))
        y = int(np.searchsorted(self._cum_rows[x], rng.random()))
        return x, y

    def draw(self, rng):
        sc = self.scale
        phi = self.spec.phi
        x, y = self._draw_pair(rng)
        if self.variant == "linear_solve":
            g = 0.5 * (self.psi[y] - self.psi[x])
            return batch_from_arrays([phi[x] / sc], [phi[y] / sc], [g / sc]).row(0)
        while True:
            t, tx, ty = _kernels.pair_chain_coupling_time(
                x, y, self._cum_rows, rng.random(2 * self.spec.t_max), self.spec.t_max
            )
            if t > 0:
                break
            self.rejections += 1
            x, y = self._draw_pair(rng)
        i = int(rng.integers(t))
        g = 0.5 * t * (phi[ty[i]] - phi[tx[i]])
        return batch_from_arrays([phi[x] / sc], [phi[y] / sc], [g / sc]).row(0)

    def draw_batch(self, rng, size):
        if self.variant == "coupling_time":
            return super().draw_batch(rng, size)
        sc = self.scale
        phi, psi = self.spec.phi, self.psi
        x = np.searchsorted(self._cum_pi, rng.random(size))
        y_u = rng.random(size)
        y = np.empty(size, dtype=np.int64)
        for s_idx in range(self.spec.kernel.shape[0]):
            mask = x == s_idx
            if np.any(mask):
                y[mask] = np.searchsorted(self._cum_rows[s_idx], y_u[mask])
        g = 0.5 * (psi[y] - psi[x])
        return batch_from_arrays(phi[x] / sc, phi[y] / sc, g / sc)

    def conditional_gd(self, rng):
        x = int(np.searchsorted(self._cum_pi, rng.random()))
        return float(self._cond_gd[x])

    def enumerate(self):
        if self.variant != "linear_solve":
            return None
        s = self.spec.kernel.shape[0]
        check_enumeration_size(s * s)
        sc = self.scale
        probs, w, wp, g = [], [], [], []
        for x in range(s):
            for y in range(s):
                probs.append(self.spec.pi[x] * self.spec.kernel[x, y])
                w.append(self.spec.phi[x] / sc)
                wp.append(self.spec.phi[y] / sc)
                g.append(0.5 * (self.psi[y] - self.psi[x]) / sc)
        return EnumeratedOutcomes(np.array(probs), batch_from_arrays(w, wp, g))


def poisson_equation_coupling(
    spec: FiniteChainSpec, variant: str = "linear_solve", standardize=True
) -> PoissonEquationCoupling:
    return PoissonEquationCoupling(spec, variant, standardize)


# ---------------------------------------------------------------------------
# Local dependence, decomposable variables, quadratic forms
# ---------------------------------------------------------------------------


class VectorSource:
    """Joint law of the summand vector (X_1..X_n); may be dependent."""

    n: int
    cov: np.ndarray | None = None

    def sample(self, rng) -> np.ndarray:
        raise NotImplementedError

    def sample_batch(self, rng, size) -> np.ndarray:
        return np.stack([self.sample(rng) for _ in range(size)])

    def enumerate(self):
        """Optional list of (prob, x-vector)."""
        return None


class MovingProductSource(VectorSource):
    """1-dependent X_i = eps_i * eps_{i+1} / sqrt(n) from Rademacher eps.

    Pairwise uncorrelated, so cov = I/n and Var(sum) = 1.
    """

    def __init__(self, n: int):
        if n < 2:
            raise InvalidParameterError("need n >= 2")
        self.n = n
        self.cov = np.eye(n) / n

    def sample(self, rng):
        eps = np.where(rng.random(self.n + 1) < 0.5, -1.0, 1.0)
        return eps[:-1] * eps[1:] / math.sqrt(self.n)

    def sample_batch(self, rng, size):
        eps = np.where(rng.random((size, self.n + 1)) < 0.5, -1.0, 1.0)
        return eps[:, :-1] * eps[:, 1:] / math.sqrt(self.n)

    def enumerate(self):
        check_enumeration_size(2 ** (self.n + 1))
        out = []
        p = 2.0 ** -(self.n + 1)
        for bits in itertools.product((-1.0, 1.0), repeat=self.n + 1):
            eps = np.array(bits)
            out.append((p, eps[:-1] * eps[1:] / math.sqrt(self.n)))
        return out


class IndependentVectorSource(VectorSource):
    """Independent coordinates sharing one discrete summand law."""

    def __init__(self, n: int, summand: DiscreteSummand):
        self.n = n
        self.summand = summand
        self.cov = np.eye(n) * summand.var()

    def sample(self, rng):
        return self.summand.sample(rng, self.n)

    def sample_batch(self, rng, size):
        return self.summand.sample(rng, (size, self.n))

    def enumerate(self):
        k = len(self.summand.values)
        check_enumeration_size(k**self.n)
        vals = np.asarray(self.summand.values)
        out = []
        for combo in itertools.product(range(k), repeat=self.n):
            p = 1.0
            for c in combo:
                p *= self.summand.probs[c]
            out.append((p, vals[np.array(combo)]))
        return out


@dataclass
class DependencyNeighborhoods:
    """First/second-order neighborhoods A_i, B_i, and per-pair B_{i,j}."""

    a: list[tuple[int, ...]]
    b: list[tuple[int, ...]] | None = None
    b_pair: dict[tuple[int, int], tuple[int, ...]] | None = None
    sigma: np.ndarray | None = None  # sigma_{i,j} = E(X_i X_j)

    def __post_init__(self):
        n = len(self.a)
        for i, a_i in enumerate(self.a):
            if i not in a_i:
                raise InvalidParameterError(f"i={i} must belong to A_i")
            if self.b is not None and not set(a_i) <= set(self.b[i]):
                raise InvalidParameterError(f"A_{i} must be a subset of B_{i}")
        if self.b_pair is not None:
            for (i, j), bij in self.b_pair.items():
                if j not in self.a[i]:
                    raise InvalidParameterError(f"B_pair key ({i},{j}) needs j in A_i")
                if not set(self.a[i]) <= set(bij):
                    raise InvalidParameterError(f"A_{i} must be a subset of B_({i},{j})")
        if self.sigma is not None:
            self.sigma = np.asarray(self.sigma, dtype=float)
            if self.sigma.shape != (n, n):
                raise InvalidParameterError("sigma must be n x n")

    @staticmethod
    def m_dependent(n: int, m: int, sigma: np.ndarray | None = None) -> "DependencyNeighborhoods":
        a = [tuple(j for j in range(max(0, i - m), min(n, i + m + 1))) for i in range(n)]
        b = [tuple(j for j in range(max(0, i - 2 * m), min(n, i + 2 * m + 1))) for i in range(n)]
        b_pair = {}
        for i in range(n):
            for j in a[i]:
                lo = max(0, min(i, j) - m)
                hi = min(n, max(i, j) + m + 1)
                b_pair[(i, j)] = tuple(range(lo, hi))
        return DependencyNeighborhoods(a, b, b_pair, sigma)


class LocalDependenceCoupling(CouplingSampler):
    """Deletion of the first-order neighborhood: W' = W - sum_{A_I} X_j,
    G = -n X_I; W'' = W - sum_{B_I} X_j when B is provided (then independent
    of GD under the declared structure)."""

    name = "local_dependence"
    marginals_equal = False

    def __init__(
        self,
        source: VectorSource,
        hoods: DependencyNeighborhoods,
        standardize: bool = True,
        sigma2: float | None = None,
    ):
        if len(hoods.a) != source.n:
            raise InvalidParameterError("neighborhood count must match vector length")
        self.source = source
        self.hoods = hoods
        if sigma2 is None:
            if source.cov is None:
                raise InvalidParameterError("need sigma2 or a source with exact cov")
            sigma2 = float(source.cov.sum())
        self.sigma = math.sqrt(sigma2)
        self.scale = self.sigma if standardize else 1.0
        n = source.n
        self.mask_a = np.zeros((n, n), dtype=bool)
        for i, a_i in enumerate(hoods.a):
            self.mask_a[i, list(a_i)] = True
        self.mask_b = None
        if hoods.b is not None:
            self.mask_b = np.zeros((n, n), dtype=bool)
            for i, b_i in enumerate(hoods.b):
                self.mask_b[i, list(b_i)] = True

    def _build(self, x, i):
        sc = self.scale
        n = self.source.n
        w = x.sum()
        wp = w - x[self.mask_a[i]].sum()
        g = -n * x[i]
        wdd = w - x[self.mask_b[i]].sum() if self.mask_b is not None else w
        return w / sc, wp / sc, g / sc, wdd / sc

    def draw(self, rng):
        x = self.source.sample(rng)
        i = int(rng.integers(self.source.n))
        w, wp, g, wdd = self._build(x, i)
        return batch_from_arrays([w], [wp], [g], [wdd]).row(0)

    def draw_batch(self, rng, size):
        x = self.source.sample_batch(rng, size)
        i = rng.integers(0, self.source.n, size=size)
        sc = self.scale
        n = self.source.n
        w = x.sum(axis=1)
        wp = w - (x * self.mask_a[i]).sum(axis=1)
        g = -n * x[np.arange(size), i]
        wdd = w - (x * self.mask_b[i]).sum(axis=1) if self.mask_b is not None else w.copy()
        return batch_from_arrays(w / sc, wp / sc, g / sc, wdd / sc)

    def conditional_gd(self, rng):
        x = self.source.sample(rng)
        return float(np.einsum("i,ij,j->", x, self.mask_a, x)) / self.scale**2

    def conditional_gd_batch(self, rng, size):
        x = self.source.sample_batch(rng, size)
        return np.einsum("bi,ij,bj->b", x, self.mask_a, x) / self.scale**2

    def component_draw(self, rng):
        x = self.source.sample(rng)
        y = -x / self.scale
        d = -(self.mask_a @ x) / self.scale
        return y, d

    def enumerate(self):
        configs = self.source.enumerate()
        if configs is None:
            return None
        n = self.source.n
        check_enumeration_size(len(configs) * n)
        probs, w, wp, g, wdd = [], [], [], [], []
        for p, x in configs:
            for i in range(n):
                a, b, c, d = self._build(x, i)
                probs.append(p / n)
                w.append(a)
                wp.append(b)
                g.append(c)
                wdd.append(d)
        return EnumeratedOutcomes(np.array(probs), batch_from_arrays(w, wp, g, wdd))

    def spot_check_contracts(self, rng, n_samples: int = 20_000, z: float = 4.0) -> float:
        """Permutation-style independence probe of the declared neighborhoods.

        Checks corr(X_i, sum of complement-of-A_i coordinates) and, when B is
        declared, corr(sum over A_i, sum over complement of B_i) on a few
        random indices.  Violations warn (never raise): the contracts are
        trusted inputs and false positives are expected at scale.  Returns the
        largest |z-score| seen.
        """
        x = self.source.sample_batch(rng, n_samples)
        n = self.source.n
        worst = 0.0
        for i in rng.choice(n, size=min(n, 4), replace=False):
            comp = ~self.mask_a[i]
            if comp.any():
                worst = max(worst, abs(_corr_z(x[:, i], x[:, comp].sum(axis=1))))
            if self.mask_b is not None:
                comp_b = ~self.mask_b[i]
                if comp_b.any():
                    a_sum = x[:, self.mask_a[i]].sum(axis=1)
                    worst = max(worst, abs(_corr_z(a_sum, x[:, comp_b].sum(axis=1))))
        if worst > z:
            warnings.warn(
                f"declared neighborhoods look violated (|z| = {worst:.1f})",
                RuntimeWarning,
                stacklevel=2,
            )
        return worst


def _corr_z(u: np.ndarray, v: np.ndarray) -> float:
    su, sv = u.std(), v.std()
    if su == 0 or sv == 0:
        return 0.0
    corr = float(((u - u.mean()) * (v - v.mean())).mean() / (su * sv))
    return corr * math.sqrt(u.size)


def local_dependence_coupling(source, hoods, standardize=True, sigma2=None):
    return LocalDependenceCoupling(source, hoods, standardize, sigma2)


class DecomposableCoupling(CouplingSampler):
    """Refined local dependence with Dt = -K_I X_J, S = n K_I sigma_{I,J} and
    W'' = W - sum_{B_{I,J}} X_k, making r1 = r2 = r3 = 0 by construction.

    Note the sign of Dt: with G = -n X_I and D = -sum_{A_I} X_j, only
    Dt = -K_I X_J satisfies E^X(G Dt) = E^X(G D); the identity fails with the
    opposite sign.
    """

    name = "decomposable"
    marginals_equal = False

    def __init__(
        self,
        source: VectorSource,
        hoods: DependencyNeighborhoods,
        standardize: bool = True,
    ):
        if hoods.b_pair is None or hoods.sigma is None:
            raise InvalidParameterError("decomposable coupling needs b_pair and sigma")
        if len(hoods.a) != source.n:
            raise InvalidParameterError("neighborhood count must match vector length")
        self.source = source
        self.hoods = hoods
        sigma2 = 0.0
        for i, a_i in enumerate(hoods.a):
            for j in a_i:
                sigma2 += hoods.sigma[i, j]
        if sigma2 <= 0:
            raise InvalidParameterError("Var W derived from sigma must be positive")
        self.sigma = math.sqrt(sigma2)
        self.scale = self.sigma if standardize else 1.0

    def _build(self, x, i, j):
        sc = self.scale
        n = self.source.n
        k_i = len(self.hoods.a[i])
        w = x.sum()
        wp = w - sum(x[a] for a in self.hoods.a[i])
        g = -n * x[i]
        d_tilde = -k_i * x[j]
        s = n * k_i * self.hoods.sigma[i, j] / self.scale**2
        wdd = w - sum(x[b] for b in self.hoods.b_pair[(i, j)])
        return w / sc, wp / sc, g / sc, wdd / sc, d_tilde / sc, s

    def draw(self, rng):
        x = self.source.sample(rng)
        i = int(rng.integers(self.source.n))
        a_i = self.hoods.a[i]
        j = a_i[int(rng.integers(len(a_i)))]
        w, wp, g, wdd, dt, s = self._build(x, i, j)
        return batch_from_arrays([w], [wp], [g], [wdd], [dt], [s]).row(0)

    def conditional_gd(self, rng):
        x = self.source.sample(rng)
        tot = 0.0
        for i, a_i in enumerate(self.hoods.a):
            tot += x[i] * sum(x[j] for j in a_i)
        return tot / self.scale**2

    def conditional_gdtilde_s(self, rng):
        x = self.source.sample(rng)
        tot = 0.0
        s_tot = 0.0
        n = self.source.n
        for i, a_i in enumerate(self.hoods.a):
            tot += x[i] * sum(x[j] for j in a_i)
            s_tot += sum(self.hoods.sigma[i, j] for j in a_i)
        return tot / self.scale**2, n * s_tot / (n * self.scale**2)

    def enumerate(self):
        configs = self.source.enumerate()
        if configs is None:
            return None
        n = self.source.n
        count = sum(len(a) for a in self.hoods.a)
        check_enumeration_size(len(configs) * count)
        probs, w, wp, g, wdd, dt, s = [], [], [], [], [], [], []
        for p, x in configs:
            for i in range(n):
                a_i = self.hoods.a[i]
                for j in a_i:
                    row = self._build(x, i, j)
                    probs.append(p / (n * len(a_i)))
                    w.append(row[0])
                    wp.append(row[1])
                    g.append(row[2])
                    wdd.append(row[3])
                    dt.append(row[4])
                    s.append(row[5])
        return EnumeratedOutcomes(
            np.array(probs), batch_from_arrays(w, wp, g, wdd, dt, s)
        )


def decomposable_coupling(source, hoods, standardize=True):
    return DecomposableCoupling(source, hoods, standardize)


def estimate_sigma_matrix(source: VectorSource, n_samples: int, rng) -> np.ndarray:
    """Sample covariance matrix of the summand vector (for hoods.sigma when
    the exact pair covariances sigma_{i,j} are not known)."""
    if n_samples < 2:
        raise InvalidParameterError("need n_samples >= 2")
    x = source.sample_batch(rng, n_samples)
    return np.cov(x, rowvar=False, bias=True)


class QuadraticFormCoupling(CouplingSampler):
    """W = xi^T A xi - tr A for symmetric A and independent centered
    unit-variance xi; G = -n(xi_I Y_I - a_II), W' = W - (2 xi_I Y_I - a_II xi_I^2)
    with Y = A xi."""

    name = "quadratic_form"
    marginals_equal = False

    def __init__(
        self,
        matrix,
        summand: DiscreteSummand | None = None,
        standardize: bool = True,
    ):
        a = np.asarray(matrix, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidParameterError("matrix must be square")
        if np.max(np.abs(a - a.T)) > 1e-12:
            raise InvalidParameterError("matrix must be symmetric")
        self.a = a
        self.n = a.shape[0]
        self.summand = summand or DiscreteSummand((-1.0, 1.0), (0.5, 0.5))
        if abs(self.summand.var() - 1.0) > 1e-12:
            raise InvalidParameterError("xi must have unit variance")
        if set(self.summand.values) <= {-1.0, 1.0}:
            sigma2 = 4.0 * float(np.sum(np.triu(a, 1) ** 2))
        else:
            sigma2 = self._enumerated_var()
        self.degenerate = sigma2 <= 1e-15
        self.sigma = math.sqrt(sigma2) if not self.degenerate else 0.0
        self.scale = self.sigma if (standardize and not self.degenerate) else 1.0

    def _w_of(self, xi):
        return float(xi @ self.a @ xi - np.trace(self.a))

    def _enumerated_var(self):
        k = len(self.summand.values)
        check_enumeration_size(k**self.n)
        tot = 0.0
        tot2 = 0.0
        for combo in itertools.product(range(k), repeat=self.n):
            p = 1.0
            for c in combo:
                p *= self.summand.probs[c]
            xi = np.asarray(self.summand.values)[np.array(combo)]
            w = self._w_of(xi)
            tot += p * w
            tot2 += p * w * w
        return tot2 - tot * tot

    def _build(self, xi, i):
        sc = self.scale
        y_i = float(self.a[i] @ xi)
        w = self._w_of(xi)
        wp = w - (2.0 * xi[i] * y_i - self.a[i, i] * xi[i] ** 2)
        g = -self.n * (xi[i] * y_i - self.a[i, i])
        return w / sc, wp / sc, g / sc

    def draw(self, rng):
        xi = self.summand.sample(rng, self.n)
        i = int(rng.integers(self.n))
        w, wp, g = self._build(xi, i)
        return batch_from_arrays([w], [wp], [g]).row(0)

    def draw_batch(self, rng, size):
        sc = self.scale
        xi = self.summand.sample(rng, (size, self.n))
        i = rng.integers(0, self.n, size=size)
        y = xi @ self.a.T
        rows = np.arange(size)
        xii = xi[rows, i]
        yii = y[rows, i]
        aii = np.diag(self.a)[i]
        w = np.einsum("bi,bi->b", y, xi) - np.trace(self.a)
        wp = w - (2.0 * xii * yii - aii * xii**2)
        g = -self.n * (xii * yii - aii)
        return batch_from_arrays(w / sc, wp / sc, g / sc)

    def conditional_gd(self, rng):
        xi = self.summand.sample(rng, self.n)
        y = self.a @ xi
        aii = np.diag(self.a)
        return float(np.sum((xi * y - aii) * (2 * xi * y - aii * xi**2))) / self.scale**2

    def enumerate(self):
        k = len(self.summand.values)
        check_enumeration_size(k**self.n * self.n)
        vals = np.asarray(self.summand.values)
        probs, w, wp, g = [], [], [], []
        for combo in itertools.product(range(k), repeat=self.n):
            p = 1.0
            for c in combo:
                p *= self.summand.probs[c]
            xi = vals[np.array(combo)]
            for i in range(self.n):
                a, b, c2 = self._build(xi, i)
                probs.append(p / self.n)
                w.append(a)
                wp.append(b)
                g.append(c2)
        return EnumeratedOutcomes(np.array(probs), batch_from_arrays(w, wp, g))


def quadratic_form_coupling(matrix, summand=None, standardize=True) -> QuadraticFormCoupling:
    return QuadraticFormCoupling(matrix, summand, standardize)


# ---------------------------------------------------------------------------
# Size biasing
# ---------------------------------------------------------------------------


class SizeBiasCoupling(CouplingSampler):
    """(V - mu, V^s - mu, mu) for non-negative V with mean mu and V^s its
    size-biased version.  V and V^s are drawn independently (the identity
    only involves the marginal laws)."""

    name = "size_bias"
    marginals_equal = False
    pair_exchangeable = False

    def __init__(
        self,
        v_draw,
        vs_draw,
        mu: float,
        sigma: float,
        v_enum: DiscreteDist | None = None,
        vs_enum: DiscreteDist | None = None,
        standardize: bool = True,
    ):
        if mu <= 0:
            raise InvalidParameterError("mu must be > 0")
        if sigma <= 0:
            raise InvalidParameterError("sigma must be > 0")
        self.v_draw = v_draw
        self.vs_draw = vs_draw
        self.mu = float(mu)
        self.sigma = float(sigma)
        self.scale = self.sigma if standardize else 1.0
        self.v_enum = v_enum
        self.vs_enum = vs_enum

    def draw_batch(self, rng, size):
        sc = self.scale
        v = np.asarray(self.v_draw(rng, size), dtype=float)
        vs = np.asarray(self.vs_draw(rng, size), dtype=float)
        if np.any(v < 0):
            raise InvalidParameterError("V must be non-negative for size biasing")
        g = np.full(size, self.mu / sc)
        return batch_from_arrays((v - self.mu) / sc, (vs - self.mu) / sc, g)

    def draw(self, rng):
        return self.draw_batch(rng, 1).row(0)

    def conditional_gd(self, rng):
        """G D itself: the configuration here is the full pair (V, V^s)."""
        s = self.draw(rng)
        return s.g * s.d

    def enumerate(self):
        if self.v_enum is None or self.vs_enum is None:
            return None
        check_enumeration_size(len(self.v_enum[0]) * len(self.vs_enum[0]))
        sc = self.scale
        probs, w, wp = [], [], []
        for pv, v in zip(*self.v_enum):
            for ps, vs in zip(*self.vs_enum):
                probs.append(pv * ps)
                w.append((v - self.mu) / sc)
                wp.append((vs - self.mu) / sc)
        g = np.full(len(probs), self.mu / sc)
        return EnumeratedOutcomes(np.array(probs), batch_from_arrays(w, wp, g))


DiscreteDist = tuple  # (probs list, values list)


def _binom_pmf(n: int, p: float) -> tuple[list[float], list[float]]:
    probs = [math.comb(n, k) * p**k * (1 - p) ** (n - k) for k in range(n + 1)]
    return probs, [float(k) for k in range(n + 1)]


def size_bias_bernoulli(p: float, standardize=True) -> SizeBiasCoupling:
    """V ~ Be(p); its size-biased version is the constant 1."""
    if not 0 < p < 1:
        raise InvalidParameterError("need 0 < p < 1")
    return SizeBiasCoupling(
        v_draw=lambda rng, size: (rng.random(size) < p).astype(float),
        vs_draw=lambda rng, size: np.ones(size),
        mu=p,
        sigma=math.sqrt(p * (1 - p)),
        v_enum=([1 - p, p], [0.0, 1.0]),
        vs_enum=([1.0], [1.0]),
        standardize=standardize,
    )


def size_bias_binomial(n: int, p: float, standardize=True) -> SizeBiasCoupling:
    """V ~ Bi(n,p); V^s = 1 + Bi(n-1,p)."""
    if n < 1 or not 0 < p < 1:
        raise InvalidParameterError("need n >= 1 and 0 < p < 1")
    pv, vv = _binom_pmf(n, p)
    ps, vs = _binom_pmf(n - 1, p)
    return SizeBiasCoupling(
        v_draw=lambda rng, size: rng.binomial(n, p, size=size).astype(float),
        vs_draw=lambda rng, size: 1.0 + rng.binomial(n - 1, p, size=size).astype(float),
        mu=n * p,
        sigma=math.sqrt(n * p * (1 - p)),
        v_enum=(pv, vv),
        vs_enum=(ps, [v + 1.0 for v in vs]),
        standardize=standardize,
    )


def size_bias_coupling(v_draw, vs_draw, mu, sigma, **kw) -> SizeBiasCoupling:
    return SizeBiasCoupling(v_draw, vs_draw, mu, sigma, **kw)


def verify_size_bias_identity(v_enum, vs_enum, mu, family) -> float:
    """Max |E{V f(V)} - mu E f(V^s)| over the family (exact summation)."""
    worst = 0.0
    for m in family:
        lhs = math.fsum(p * v * float(m(np.array([v]))[0]) for p, v in zip(*v_enum))
        rhs = mu * math.fsum(p * float(m(np.array([v]))[0]) for p, v in zip(*vs_enum))
        worst = max(worst, abs(lhs - rhs))
    return worst


# ---------------------------------------------------------------------------
# Interpolation to independence
# ---------------------------------------------------------------------------


class InterpolationCoupling(CouplingSampler):
    """Telescoping interpolation between W = F(X) and an independent copy.

    V_i replaces the first i coordinates (in fixed or uniformly random order)
    by the independent copies; G = (n/2)(V_I - V_{I-1}) and W' replaces the
    single coordinate picked at step I.  F is centered by an exact
    enumeration mean when available, otherwise by a pilot estimate whose CI
    is reported as ``centering_halfwidth`` (it enters the residual budget).
    """

    name = "interpolation"
    marginals_equal = True
    pair_exchangeable = True

    def __init__(
        self,
        func,
        n: int,
        summand: DiscreteSummand | None = None,
        coord_draw=None,
        order: str = "fixed",
        pilot_samples: int = 1_000_000,
        pilot_seed: int = 20_250_808,
        standardize: bool = False,
        sigma: float | None = None,
    ):
        if order not in ("fixed", "random"):
            raise InvalidParameterError(f"unknown order {order!r}")
        if (summand is None) == (coord_draw is None):
            raise InvalidParameterError("provide exactly one of summand / coord_draw")
        self.func = func
        self.n = n
        self.summand = summand
        self.coord_draw = coord_draw
        self.order = order
        self.centering_halfwidth = 0.0
        if summand is not None:
            try:
                mean = self._enumerated_mean()
            except InvalidParameterError:
                mean = None
        else:
            mean = None
        if mean is None:
            rng = np.random.default_rng(pilot_seed)
            vals = np.array(
                [func(self._draw_coords(rng)) for _ in range(min(pilot_samples, 1_000_000))]
            )
            mean = float(vals.mean())
            self.centering_halfwidth = 2.5758 * float(vals.std()) / math.sqrt(vals.size)
        self.center = mean
        self.scale = 1.0
        if standardize:
            if sigma is None:
                raise InvalidParameterError("standardize=True needs sigma")
            self.scale = sigma

    def _draw_coords(self, rng):
        if self.summand is not None:
            return self.summand.sample(rng, self.n)
        return np.asarray(self.coord_draw(rng, self.n), dtype=float)

    def _enumerated_mean(self):
        k = len(self.summand.values)
        check_enumeration_size(k**self.n)
        vals = np.asarray(self.summand.values)
        tot = 0.0
        for combo in itertools.product(range(k), repeat=self.n):
            p = 1.0
            for c in combo:
                p *= self.summand.probs[c]
            tot += p * self.func(vals[np.array(combo)])
        return tot

    def _f(self, x):
        return (self.func(x) - self.center) / self.scale

    def _build(self, x, xp, perm, i):
        """i ranges over 1..n; perm is the replacement order."""
        n = self.n
        w = self._f(x)
        single = x.copy()
        single[perm[i - 1]] = xp[perm[i - 1]]
        wp = self._f(single)
        vi = x.copy()
        vi[perm[:i]] = xp[perm[:i]]
        v_i = self._f(vi)
        if i == 1:
            v_prev = w
        else:
            vprev = x.copy()
            vprev[perm[: i - 1]] = xp[perm[: i - 1]]
            v_prev = self._f(vprev)
        g = 0.5 * n * (v_i - v_prev)
        return w, wp, g

    def draw(self, rng):
        x = self._draw_coords(rng)
        xp = self._draw_coords(rng)
        perm = rng.permutation(self.n) if self.order == "random" else np.arange(self.n)
        i = int(rng.integers(1, self.n + 1))
        w, wp, g = self._build(x, xp, perm, i)
        return batch_from_arrays([w], [wp], [g]).row(0)

    def enumerate(self):
        if self.summand is None or self.order != "fixed":
            return None
        k = len(self.summand.values)
        check_enumeration_size(k ** (2 * self.n) * self.n)
        vals = np.asarray(self.summand.values)
        perm = np.arange(self.n)
        probs, w, wp, g = [], [], [], []
        for combo in itertools.product(range(k), repeat=2 * self.n):
            p = 1.0
            for c in combo:
                p *= self.summand.probs[c]
            arr = vals[np.array(combo)]
            x, xp = arr[: self.n], arr[self.n :]
            for i in range(1, self.n + 1):
                a, b, c2 = self._build(x, xp, perm, i)
                probs.append(p / self.n)
                w.append(a)
                wp.append(b)
                g.append(c2)
        return EnumeratedOutcomes(np.array(probs), batch_from_arrays(w, wp, g))


def interpolation_coupling(func, n, **kw) -> InterpolationCoupling:
    return InterpolationCoupling(func, n, **kw)


# ---------------------------------------------------------------------------
# Abstract telescoping G
# ---------------------------------------------------------------------------


class TelescopingCoupling(CouplingSampler):
    """G = -V + E(V|F') - E(E(V|F')|F) + ... truncated at ``depth`` terms.

    Built either from an enumerable outcome space (conditional expectations
    are exact group-by averages over sigma(W) and sigma(W')) or from
    user-supplied projection operators acting on config -> value callables.
    ``tail_magnitude`` reports the size of the last retained term.
    """

    name = "abstract_telescoping"

    def __init__(self, probs, configs, w_fn, wp_fn, v_fn, depth: int,
                 project_f=None, project_fp=None, key_decimals: int = 10):
        if depth < 0:
            raise InvalidParameterError("depth must be >= 0")
        self.probs = np.asarray(probs, dtype=float)
        check_enumeration_size(self.probs.size)
        if abs(math.fsum(self.probs.tolist()) - 1.0) > 1e-12:
            raise InvalidParameterError("outcome probabilities must sum to 1")
        self.configs = list(configs)
        self.key_decimals = key_decimals
        w = np.array([w_fn(c) for c in self.configs], dtype=float)
        wp = np.array([wp_fn(c) for c in self.configs], dtype=float)
        v = np.array([v_fn(c) for c in self.configs], dtype=float)
        ew_v = self._project(v, w)
        if np.max(np.abs(ew_v - w)) > 1e-9:
            raise InvalidParameterError("V must satisfy E(V | W) = W")
        if project_f is None:
            project_f = lambda vec: self._project(vec, w)  # noqa: E731
        if project_fp is None:
            project_fp = lambda vec: self._project(vec, wp)  # noqa: E731
        term = v.copy()
        g = -term
        sign = 1.0
        prev_tail = float(np.max(np.abs(term)))
        tail = prev_tail
        for k in range(1, depth + 1):
            term = project_fp(term) if k % 2 == 1 else project_f(term)
            g = g + sign * term
            sign = -sign
            prev_tail, tail = tail, float(np.max(np.abs(term)))
        self.tail_magnitude = tail
        if depth >= 2 and tail > prev_tail + 1e-12:
            warnings.warn(
                "telescoping terms are not contracting; G truncation unreliable",
                RuntimeWarning,
                stacklevel=2,
            )
        self._w, self._wp, self._g = w, wp, g
        self._cum = np.cumsum(self.probs)

    def _project(self, vec, keys):
        # round the grouping keys: sigma-algebra atoms must not be split by
        # summation-order float noise in the key values
        uniq, inv = np.unique(np.round(keys, self.key_decimals), return_inverse=True)
        tot = np.zeros(uniq.size)
        mass = np.zeros(uniq.size)
        np.add.at(tot, inv, self.probs * vec)
        np.add.at(mass, inv, self.probs)
        return (tot / mass)[inv]

    def draw(self, rng):
        i = int(np.searchsorted(self._cum, rng.random()))
        return batch_from_arrays([self._w[i]], [self._wp[i]], [self._g[i]]).row(0)

    def enumerate(self):
        return EnumeratedOutcomes(
            self.probs, batch_from_arrays(self._w.copy(), self._wp.copy(), self._g.copy())
        )


def abstract_telescoping_g(probs, configs, w_fn, wp_fn, v_fn, depth, **kw):
    return TelescopingCoupling(probs, configs, w_fn, wp_fn, v_fn, depth, **kw)
