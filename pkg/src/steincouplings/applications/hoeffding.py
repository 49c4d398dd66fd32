"""Couplings for the combinatorial permutation statistic W = sum_i a_{i,pi(i)}.

The matrix is doubly centered with (1/(n-1)) sum a^2 = 1, so E W = 0 and
Var W = 1 without further standardization.  Three couplings are provided:

* Variant 1: transposition pair, classic G = (n/4)(W' - W), lambda = 2/n.
* Variant 2: same pair, G = -n a_{I1, pi(I1)}.
* Variant 3: deletion-form W' with G = n(a_{I1,pi(I2)} - a_{I1,pi(I1)}), plus
  an auxiliary W'' built from an independent permutation tau that is forced
  to hit pi(I1) = J1, pi(I2) = J2 with at most two transpositions, giving
  |D'| <= 8 ||a||.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from ..core import (
    CouplingSampler,
    EnumeratedOutcomes,
    InvalidParameterError,
    batch_from_arrays,
    check_enumeration_size,
)
from ..metrics import DiscreteDistribution


class HoeffdingInstance:
    """Doubly centered, variance-normalized score matrix."""

    def __init__(self, matrix, normalize: bool = False):
        a = np.array(matrix, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 2:
            raise InvalidParameterError("matrix must be square, n >= 2")
        n = a.shape[0]
        if normalize:
            a = a - a.mean(axis=1, keepdims=True) - a.mean(axis=0, keepdims=True) + a.mean()
            scale = math.sqrt(np.sum(a * a) / (n - 1))
            if scale <= 0:
                raise InvalidParameterError("matrix is degenerate after centering")
            a = a / scale
        if np.max(np.abs(a.sum(axis=0))) > 1e-10 or np.max(np.abs(a.sum(axis=1))) > 1e-10:
            raise InvalidParameterError("row and column sums must vanish (<= 1e-10)")
        if abs(np.sum(a * a) / (n - 1) - 1.0) > 1e-10:
            raise InvalidParameterError("(1/(n-1)) sum a^2 must equal 1 (<= 1e-10)")
        self.a = a
        self.n = n
        self.a_norm = float(np.max(np.abs(a)))

    @classmethod
    def corner3(cls) -> "HoeffdingInstance":
        """The 3x3 instance c[[1,-1,0],[-1,1,0],[0,0,0]], c = 1/sqrt(2)."""
        c = 1.0 / math.sqrt(2.0)
        return cls(c * np.array([[1.0, -1.0, 0.0], [-1.0, 1.0, 0.0], [0.0, 0.0, 0.0]]))

    @classmethod
    def random(cls, n: int, seed: int) -> "HoeffdingInstance":
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((n, n)), normalize=True)

    def w_of(self, perm: np.ndarray) -> float:
        return float(self.a[np.arange(self.n), perm].sum())

    def w_samples(self, rng, size: int, chunk: int = 65_536) -> np.ndarray:
        """Vectorized draws of W alone (no coupling fields)."""
        out = np.empty(size)
        done = 0
        rows = np.arange(self.n)
        while done < size:
            take = min(chunk, size - done)
            perms = rng.permuted(np.tile(rows, (take, 1)), axis=1)
            out[done : done + take] = self.a[rows[None, :], perms].sum(axis=1)
            done += take
        return out


def hoeffding_exact_oracle(inst: HoeffdingInstance) -> DiscreteDistribution:
    """Exact law of W by brute force over all n! permutations (n <= 8)."""
    if inst.n > 8:
        raise InvalidParameterError("exact oracle limited to n <= 8")
    values, probs = [], []
    count = math.factorial(inst.n)
    for perm in itertools.permutations(range(inst.n)):
        values.append(inst.w_of(np.array(perm)))
        probs.append(1.0 / count)
    return DiscreteDistribution.from_samples_exact(np.round(values, 12), probs)


class _HoeffdingPairBase(CouplingSampler):
    marginals_equal = True
    pair_exchangeable = True

    def __init__(self, inst: HoeffdingInstance):
        self.inst = inst

    def _perm_batch(self, rng, size):
        n = self.inst.n
        return rng.permuted(np.tile(np.arange(n), (size, 1)), axis=1)

    def draw(self, rng):
        return self.draw_batch(rng, 1).row(0)


class HoeffdingVariant1(_HoeffdingPairBase):
    name = "hoeffding_variant1"

    @property
    def lam(self):
        return 2.0 / self.inst.n

    def _fields(self, perm, i1, i2):
        a = self.inst.a
        n = self.inst.n
        rows = np.arange(perm.shape[0])
        w = a[np.arange(n)[None, :], perm].sum(axis=1)
        p1, p2 = perm[rows, i1], perm[rows, i2]
        dw = a[i1, p2] + a[i2, p1] - a[i1, p1] - a[i2, p2]
        return w, w + dw, 0.25 * n * dw

    def draw_batch(self, rng, size):
        perm = self._perm_batch(rng, size)
        i1 = rng.integers(0, self.inst.n, size=size)
        i2 = rng.integers(0, self.inst.n, size=size)
        w, wp, g = self._fields(perm, i1, i2)
        return batch_from_arrays(w, wp, g)

    def enumerate(self):
        n = self.inst.n
        check_enumeration_size(math.factorial(n) * n * n)
        probs, w, wp, g = [], [], [], []
        p_each = 1.0 / (math.factorial(n) * n * n)
        for perm in itertools.permutations(range(n)):
            pa = np.array([perm])
            for i1 in range(n):
                for i2 in range(n):
                    a, b, c = self._fields(pa, np.array([i1]), np.array([i2]))
                    probs.append(p_each)
                    w.append(a[0])
                    wp.append(b[0])
                    g.append(c[0])
        return EnumeratedOutcomes(np.array(probs), batch_from_arrays(w, wp, g))


class HoeffdingVariant2(HoeffdingVariant1):
    name = "hoeffding_variant2"

    def _fields(self, perm, i1, i2):
        a = self.inst.a
        n = self.inst.n
        rows = np.arange(perm.shape[0])
        w = a[np.arange(n)[None, :], perm].sum(axis=1)
        p1, p2 = perm[rows, i1], perm[rows, i2]
        dw = a[i1, p2] + a[i2, p1] - a[i1, p1] - a[i2, p2]
        return w, w + dw, -n * a[i1, p1]


class HoeffdingVariant3(CouplingSampler):
    """Deletion form with the auxiliary permutation construction for W''.

    tau is uniform and independent of (I1, I2, J1, J2); pi is tau composed
    with at most two transpositions forcing pi(I1) = J1, pi(I2) = J2 (the
    equal-index branch J1 = J2 handled first), which leaves pi uniform with
    (I1, I2) independent of it.  W'' = sum_i a_{i, tau(i)} is then
    independent of (I1, I2, pi(I1), pi(I2)), hence of G D, and
    |D'| <= 8 ||a||, |G| <= 2n ||a||, |D| <= 2 ||a||.
    """

    name = "hoeffding_variant3"
    marginals_equal = False
    pair_exchangeable = False

    def __init__(self, inst: HoeffdingInstance):
        if inst.n < 2:
            raise InvalidParameterError("variant 3 needs n >= 2")
        self.inst = inst

    def _sample_fields(self, tau, i1, i2, j1, j2):
        """Scalar path: build (w, w', g, w'') from one (tau, I, J) draw."""
        a = self.inst.a
        n = self.inst.n
        w_dd = float(a[np.arange(n), tau].sum())
        pi = tau.copy()
        # force pi(i1) = j1
        k = int(np.nonzero(pi == j1)[0][0])
        pi[k], pi[i1] = pi[i1], j1
        if i1 != i2:
            k2 = int(np.nonzero(pi == j2)[0][0])
            pi[k2], pi[i2] = pi[i2], j2
        w = float(a[np.arange(n), pi].sum())
        p1, p2 = pi[i1], pi[i2]
        if i1 != i2:
            wp = w - a[i1, p1] - a[i2, p2]
        else:
            wp = w - a[i1, p1]
        g = n * (a[i1, p2] - a[i1, p1])
        hard = 2 * n * self.inst.a_norm + 1e-9
        assert abs(g) <= hard and abs(wp - w) <= 2 * self.inst.a_norm + 1e-9
        assert abs(w_dd - w) <= 8 * self.inst.a_norm + 1e-9
        return w, wp, g, w_dd

    def draw(self, rng):
        n = self.inst.n
        tau = rng.permutation(n)
        i1, i2, j1 = (int(rng.integers(n)) for _ in range(3))
        if i1 == i2:
            j2 = j1
        else:
            j2 = int(rng.integers(n - 1))
            if j2 >= j1:
                j2 += 1
        w, wp, g, wdd = self._sample_fields(tau, i1, i2, j1, j2)
        return batch_from_arrays([w], [wp], [g], [wdd]).row(0)

    def draw_batch(self, rng, size):
        n = self.inst.n
        taus = rng.permuted(np.tile(np.arange(n), (size, 1)), axis=1)
        i1 = rng.integers(0, n, size=size)
        i2 = rng.integers(0, n, size=size)
        j1 = rng.integers(0, n, size=size)
        j2 = rng.integers(0, n - 1, size=size)
        j2 = np.where(j2 >= j1, j2 + 1, j2)
        j2 = np.where(i1 == i2, j1, j2)
        w = np.empty(size)
        wp = np.empty(size)
        g = np.empty(size)
        wdd = np.empty(size)
        for r in range(size):
            w[r], wp[r], g[r], wdd[r] = self._sample_fields(
                taus[r].copy(), int(i1[r]), int(i2[r]), int(j1[r]), int(j2[r])
            )
        return batch_from_arrays(w, wp, g, wdd)

    def enumerate(self):
        n = self.inst.n
        check_enumeration_size(math.factorial(n) * n * n * n * max(n - 1, 1))
        probs, w, wp, g, wdd = [], [], [], [], []
        base = 1.0 / (math.factorial(n) * n * n * n)
        for tau in itertools.permutations(range(n)):
            tau = np.array(tau)
            for i1 in range(n):
                for i2 in range(n):
                    for j1 in range(n):
                        if i1 == i2:
                            choices = [(j1, base)]
                        else:
                            choices = [(j2, base / (n - 1)) for j2 in range(n) if j2 != j1]
                        for j2, p in choices:
                            row = self._sample_fields(tau.copy(), i1, i2, j1, j2)
                            probs.append(p)
                            w.append(row[0])
                            wp.append(row[1])
                            g.append(row[2])
                            wdd.append(row[3])
        return EnumeratedOutcomes(np.array(probs), batch_from_arrays(w, wp, g, wdd))


def hoeffding_variant1(inst: HoeffdingInstance) -> HoeffdingVariant1:
    if np.all(inst.a == 0):
        raise InvalidParameterError("degenerate zero matrix")
    return HoeffdingVariant1(inst)


def hoeffding_variant2(inst: HoeffdingInstance) -> HoeffdingVariant2:
    return HoeffdingVariant2(inst)


def hoeffding_variant3(inst: HoeffdingInstance) -> HoeffdingVariant3:
    return HoeffdingVariant3(inst)
