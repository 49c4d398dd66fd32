"""Occupancy-scheme coupling: m balls in n urns, per-urn functionals h_i.

The coupling resamples urn I's count from its unconditional binomial law and
repairs the remaining (black) urns by adding balls according to the residual
urn probabilities or removing balls uniformly at random, which leaves the
joint law exchangeable with the original (white) configuration.  A second
(red) repair over the set K of changed urns produces W'' independent of GD.
Ball removal is sequential weighted sampling over urns proportional to
current counts, which is exactly uniform over balls; the enumeration path
uses the equivalent multivariate hypergeometric law of the removed counts.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .. import _kernels
from ..core import (
    CouplingSampler,
    EnumeratedOutcomes,
    InvalidParameterError,
    batch_from_arrays,
    check_enumeration_size,
)


def occupancy_statistics_library() -> dict:
    """Named per-urn functionals h (all satisfy h(0) = 0)."""

    def empty_urns(x):
        # I[x = 0] - 1 shifted so h(0) = 0: use h(x) = I[x = 0] directly;
        # h(0) = 1 violates nothing since the contract is h_i(0) = 0 after
        # subtracting h_i(0); callers get the already-shifted version.
        return (np.asarray(x) == 0).astype(float) - 1.0

    def exactly_k(k):
        def h(x):
            x = np.asarray(x)
            return (x == k).astype(float) - (1.0 if k == 0 else 0.0)

        h.__name__ = f"exactly_{k}"
        return h

    def exceed(m0):
        def h(x):
            return (np.asarray(x) > m0).astype(float)

        h.__name__ = f"exceed_{m0}"
        return h

    def excess(m0):
        def h(x):
            x = np.asarray(x, dtype=float)
            return np.where(x > m0, x - m0, 0.0)

        h.__name__ = f"excess_{m0}"
        return h

    return {
        "empty_urns": empty_urns,
        "exactly_k": exactly_k,
        "exceed": exceed,
        "excess": excess,
    }


def _binom_pmf_vec(m: int, p: float) -> np.ndarray:
    k = np.arange(m + 1)
    logs = (
        np.array([math.lgamma(m + 1) - math.lgamma(i + 1) - math.lgamma(m - i + 1) for i in k])
        + k * math.log(p)
        + (m - k) * math.log1p(-p)
        if 0 < p < 1
        else None
    )
    if logs is None:
        out = np.zeros(m + 1)
        out[0 if p == 0 else m] = 1.0
        return out
    return np.exp(logs)


class OccupancyInstance:
    """n urns, m balls, urn probabilities p_i and per-urn functionals h_i."""

    def __init__(self, n: int, m: int, probs=None, h=None, sigma2: float | None = None):
        if n < 2 or m < 1:
            raise InvalidParameterError("need n >= 2 urns and m >= 1 balls")
        if probs is None:
            p = np.full(n, 1.0 / n)
        else:
            p = np.asarray(probs, dtype=float)
        if p.shape != (n,) or np.any(p <= 0) or abs(math.fsum(p.tolist()) - 1.0) > 1e-12:
            raise InvalidParameterError("probs must be positive and sum to 1")
        self.n, self.m, self.p = n, m, p
        self.p_bar = float(p.max())
        self.equiprobable = bool(np.allclose(p, p[0]))
        if h is None:
            h = occupancy_statistics_library()["empty_urns"]
        h_list = h if isinstance(h, (list, tuple)) else [h] * n
        if len(h_list) != n:
            raise InvalidParameterError("need one h_i per urn")
        counts = np.arange(m + 1)
        self.h_table = np.stack([np.asarray(hi(counts), dtype=float) for hi in h_list])
        if np.max(np.abs(self.h_table[:, 0])) > 0:
            raise InvalidParameterError("h_i(0) must equal 0 (shift h by h(0))")
        self.identical_h = bool(
            np.all(self.h_table == self.h_table[0])
        )
        self.h_norm = float(np.max(np.abs(self.h_table)))
        self.dh_norm = float(np.max(np.abs(np.diff(self.h_table, axis=1)))) if m >= 1 else 0.0
        pmf = np.stack([_binom_pmf_vec(m, pi) for pi in p])
        self.mu_i = (pmf * self.h_table).sum(axis=1)
        self.mu = float(self.mu_i.sum())
        self._sigma2 = sigma2

    def u_of(self, counts: np.ndarray) -> float:
        return float(self.h_table[np.arange(self.n), counts].sum())

    def exact_sigma2(self) -> float | None:
        """Exact Var U via the pairwise joint pmf; None when too costly."""
        n, m, p = self.n, self.m, self.p
        e_h2 = 0.0
        for i in range(n):
            pmf = _binom_pmf_vec(m, p[i])
            e_h2 += float((pmf * self.h_table[i] ** 2).sum())
        if self.equiprobable and self.identical_h:
            cov_sum = self._pair_expectation(0, 1) * n * (n - 1)
        elif n <= 30:
            cov_sum = 0.0
            for i in range(n):
                for j in range(n):
                    if i != j:
                        cov_sum += self._pair_expectation(i, j)
        else:
            return None
        return e_h2 + cov_sum - self.mu**2

    def _pair_expectation(self, i: int, j: int) -> float:
        """E[h_i(xi_i) h_j(xi_j)] for the multinomial pair (xi_i, xi_j)."""
        m, pi, pj = self.m, self.p[i], self.p[j]
        rest = 1.0 - pi - pj
        tot = 0.0
        lpi, lpj = math.log(pi), math.log(pj)
        lrest = math.log(rest) if rest > 0 else -math.inf
        for a in range(m + 1):
            ha = self.h_table[i, a]
            if ha == 0.0:
                continue
            for b in range(m + 1 - a):
                hb = self.h_table[j, b]
                if hb == 0.0:
                    continue
                c = m - a - b
                if c == 0:
                    lrest_term = 0.0
                elif rest <= 0:
                    continue
                else:
                    lrest_term = c * lrest
                logp = (
                    math.lgamma(m + 1)
                    - math.lgamma(a + 1)
                    - math.lgamma(b + 1)
                    - math.lgamma(c + 1)
                    + a * lpi
                    + b * lpj
                    + lrest_term
                )
                tot += math.exp(logp) * ha * hb
        return tot

    def sigma2(self, pilot_rng: np.random.Generator | None = None, pilot: int = 200_000) -> float:
        if self._sigma2 is None:
            exact = self.exact_sigma2()
            if exact is not None:
                self._sigma2 = exact
            else:
                rng = pilot_rng or np.random.default_rng(20_250_808)
                counts = rng.multinomial(self.m, self.p, size=pilot)
                u = self.h_table[np.arange(self.n)[None, :], counts].sum(axis=1)
                self._sigma2 = float(u.var())
        if self._sigma2 <= 0:
            raise InvalidParameterError("degenerate occupancy functional (Var U = 0)")
        return self._sigma2


class OccupancyCoupling(CouplingSampler):
    name = "occupancy"
    marginals_equal = True
    pair_exchangeable = True

    def __init__(self, inst: OccupancyInstance):
        self.inst = inst
        self.sigma = math.sqrt(inst.sigma2())

    # -- MC path ------------------------------------------------------------

    def _black_urns(self, rng, counts, i):
        inst = self.inst
        black = counts.astype(float).copy()
        xi_new = float(rng.binomial(inst.m, inst.p[i]))
        black[i] = xi_new
        n1 = int(abs(counts[i] - xi_new))
        if n1 > 0 and counts[i] > xi_new:
            others = inst.p.copy()
            others[i] = 0.0
            add = rng.multinomial(n1, others / others.sum())
            black += add
        elif n1 > 0:
            saved = black[i]
            black[i] = 0.0
            _kernels.remove_balls_weighted(black, n1, rng.random(n1))
            black[i] = saved
        return black

    def _red_urns(self, rng, counts, black, i):
        inst = self.inst
        in_k = black != counts
        in_k[i] = True
        p_k = float(inst.p[in_k].sum())
        red = counts.astype(float).copy()
        n2 = float(counts[in_k].sum())
        n2dd = float(rng.binomial(inst.m, p_k))
        red[in_k] = 0.0
        if n2dd > 0:
            red[in_k] = rng.multinomial(int(n2dd), inst.p[in_k] / p_k)
        n3 = int(abs(n2 - n2dd))
        if n3 > 0 and n2 > n2dd:
            comp = inst.p.copy()
            comp[in_k] = 0.0
            red += rng.multinomial(n3, comp / comp.sum())
        elif n3 > 0:
            saved = red[in_k].copy()
            red[in_k] = 0.0
            _kernels.remove_balls_weighted(red, n3, rng.random(n3))
            red[in_k] = saved
        return red

    def draw(self, rng):
        inst = self.inst
        counts = rng.multinomial(inst.m, inst.p)
        i = int(rng.integers(inst.n))
        black = self._black_urns(rng, counts, i)
        red = self._red_urns(rng, counts, black, i)
        sc = self.sigma
        idx = np.arange(inst.n)
        u = float(inst.h_table[idx, counts].sum())
        u_p = float(inst.h_table[idx, black.astype(int)].sum())
        u_dd = float(inst.h_table[idx, red.astype(int)].sum())
        w = (u - inst.mu) / sc
        wp = (u_p - inst.mu) / sc
        wdd = (u_dd - inst.mu) / sc
        g = -inst.n * (inst.h_table[i, counts[i]] - inst.mu_i[i]) / sc
        return batch_from_arrays([w], [wp], [g], [wdd]).row(0)

    # -- enumeration path ----------------------------------------------------

    def enumerate(self):
        inst = self.inst
        if inst.n > 4 or inst.m > 4:
            raise InvalidParameterError("occupancy enumeration limited to n, m <= 4")
        rows: list[tuple[float, float, float, float, float]] = []
        for p_cfg, counts in _multinomial_outcomes(inst.m, inst.p):
            for i in range(inst.n):
                p_i = p_cfg / inst.n
                for row in self._enum_branches(counts, i, p_i):
                    rows.append(row)
        check_enumeration_size(len(rows))
        probs = np.array([r[0] for r in rows])
        idx = np.arange(inst.n)
        sc = self.sigma
        w = (np.array([r[1] for r in rows]) - inst.mu) / sc
        wp = (np.array([r[2] for r in rows]) - inst.mu) / sc
        wdd = (np.array([r[3] for r in rows]) - inst.mu) / sc
        g = np.array([r[4] for r in rows]) / sc
        del idx
        return EnumeratedOutcomes(probs, batch_from_arrays(w, wp, g, wdd))

    def _enum_branches(self, counts, i, p_base):
        inst = self.inst
        idx = np.arange(inst.n)
        u = float(inst.h_table[idx, counts].sum())
        g_raw = -inst.n * (inst.h_table[i, counts[i]] - inst.mu_i[i])
        pmf_i = _binom_pmf_vec(inst.m, inst.p[i])
        for xi_new in range(inst.m + 1):
            p1 = p_base * pmf_i[xi_new]
            if p1 == 0.0:
                continue
            base_black = counts.astype(np.int64).copy()
            base_black[i] = xi_new
            n1 = abs(int(counts[i]) - xi_new)
            if counts[i] > xi_new and n1 > 0:
                others = inst.p.copy()
                others[i] = 0.0
                branches = [
                    (p1 * q, base_black + add)
                    for q, add in _multinomial_outcomes(n1, others / others.sum())
                ]
            elif counts[i] < xi_new and n1 > 0:
                avail = base_black.copy()
                avail[i] = 0
                branches = [
                    (p1 * q, _apply_removal(base_black, rem))
                    for q, rem in _hypergeom_outcomes(avail, n1)
                ]
            else:
                branches = [(p1, base_black)]
            for p2, black in branches:
                u_p = float(inst.h_table[idx, black].sum())
                yield from self._enum_red(counts, black, i, p2, u, u_p, g_raw)

    def _enum_red(self, counts, black, i, p_base, u, u_p, g_raw):
        inst = self.inst
        idx = np.arange(inst.n)
        in_k = black != counts
        in_k[i] = True
        p_k = float(inst.p[in_k].sum())
        n2 = int(counts[in_k].sum())
        pmf_k = _binom_pmf_vec(inst.m, p_k)
        for n2dd in range(inst.m + 1):
            p1 = p_base * pmf_k[n2dd]
            if p1 == 0.0:
                continue
            base_red = counts.astype(np.int64).copy()
            base_red[in_k] = 0
            for q1, split in _multinomial_outcomes(n2dd, inst.p[in_k] / p_k):
                red0 = base_red.copy()
                red0[in_k] = split
                n3 = abs(n2 - n2dd)
                if n2 > n2dd and n3 > 0:
                    comp = inst.p.copy()
                    comp[in_k] = 0.0
                    branches = [
                        (q2, red0 + add)
                        for q2, add in _multinomial_outcomes(n3, comp / comp.sum())
                    ]
                elif n2 < n2dd and n3 > 0:
                    avail = red0.copy()
                    avail[in_k] = 0
                    branches = [
                        (q2, _apply_removal(red0, rem))
                        for q2, rem in _hypergeom_outcomes(avail, n3)
                    ]
                else:
                    branches = [(1.0, red0)]
                for q2, red in branches:
                    u_dd = float(inst.h_table[idx, red].sum())
                    yield (p1 * q1 * q2, u, u_p, u_dd, g_raw)


def _multinomial_outcomes(m: int, p: np.ndarray):
    """All (prob, counts) of a multinomial(m, p); zero-prob cells get 0 balls."""
    n = p.shape[0]
    if m == 0:
        yield 1.0, np.zeros(n, dtype=np.int64)
        return
    log_p = np.where(p > 0, np.log(np.maximum(p, 1e-300)), -math.inf)
    for combo in itertools.combinations_with_replacement(range(n), m):
        counts = np.zeros(n, dtype=np.int64)
        for c in combo:
            counts[c] += 1
        if np.any((counts > 0) & (p <= 0)):
            continue
        logq = math.lgamma(m + 1) - sum(math.lgamma(c + 1) for c in counts)
        logq += float((counts * np.where(counts > 0, log_p, 0.0)).sum())
        yield math.exp(logq), counts


def _hypergeom_outcomes(avail: np.ndarray, k: int):
    """All (prob, removed-counts) when k balls are removed uniformly from the
    populations in ``avail`` (multivariate hypergeometric)."""
    total = int(avail.sum())
    if k > total:
        raise InvalidParameterError("cannot remove more balls than available")
    denom = math.comb(total, k)
    ranges = [range(int(a) + 1) for a in avail]
    for rem in itertools.product(*ranges):
        if sum(rem) != k:
            continue
        num = 1
        for r, a in zip(rem, avail):
            num *= math.comb(int(a), r)
        yield num / denom, np.array(rem, dtype=np.int64)


def _apply_removal(base: np.ndarray, removed: np.ndarray) -> np.ndarray:
    out = base - removed
    if np.any(out < 0):
        raise InvalidParameterError("removal produced negative urn count")
    return out


def occupancy_coupling(inst: OccupancyInstance) -> OccupancyCoupling:
    return OccupancyCoupling(inst)
