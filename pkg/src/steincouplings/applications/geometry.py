"""Neighbourhood statistics of n uniform points on the d-torus [0, n^{1/d})^d.

The functional psi(x, X) must be translation invariant with influence radius
rho (psi depends on X only through X intersected with the rho-ball at x) and
centered, E psi(X_1, X) = 0.  The perturbation removes point I and resamples
its rho-neighbourhood outside the ball; the auxiliary W'' redraws a
Bi(n, Vol(M)/n) number of fresh uniform points on the double-enlarged
influence region M and completes the complement by adding or removing
points, so the redrawn set has the law of X independently of (G, D).
Binomial-region draws are realized by keeping the in-region points of n
fresh torus uniforms, so no region volume is ever computed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import CouplingSampler, InvalidParameterError, batch_from_arrays
from ..estimation import min_geometry_radius


def torus_distance(a: np.ndarray, b: np.ndarray, side: float) -> np.ndarray:
    """Componentwise minimal-image Euclidean distance on [0, side)^d.

    ``a`` may be a single point (d,) against points ``b`` (k, d).
    """
    delta = np.abs(np.asarray(a) - np.asarray(b))
    delta = np.minimum(delta, side - delta)
    return np.sqrt((delta * delta).sum(axis=-1))


def sphere_volume(rho: float, d: int) -> float:
    """kappa_rho = rho^d pi^{d/2} / Gamma(1 + d/2)."""
    return rho**d * math.pi ** (d / 2.0) / math.gamma(1.0 + d / 2.0)


@dataclass
class GeometryInstance:
    """Point-count n, dimension d, influence radius rho and functional psi.

    ``psi(x, pts, side)`` receives the full current point set (including x).
    """

    d: int
    n: int
    rho: float
    psi: object
    psi_norm: float
    sigma2: float | None = None
    pilot: int = 20_000
    pilot_seed: int = 20_250_808

    def __post_init__(self):
        if self.d < 1 or self.n < 2:
            raise InvalidParameterError("need d >= 1 and n >= 2")
        self.side = self.n ** (1.0 / self.d)
        if not self.rho < 0.5 * self.side:
            raise InvalidParameterError("need rho < side/2 to avoid self-overlaps")
        if self.rho < min_geometry_radius(self.d):
            raise InvalidParameterError(
                f"rho below the admissible minimum {min_geometry_radius(self.d):.6f}"
            )

    def sample_points(self, rng) -> np.ndarray:
        return rng.random((self.n, self.d)) * self.side

    def u_of(self, pts: np.ndarray) -> float:
        return math.fsum(float(self.psi(pts[i], pts, self.side)) for i in range(pts.shape[0]))

    def locality_check(self, rng, trials: int = 20) -> float:
        """Max |psi(x, X) - psi(x, X cap B_rho(x))| over random configurations."""
        worst = 0.0
        for _ in range(trials):
            pts = self.sample_points(rng)
            x = pts[int(rng.integers(self.n))]
            near = pts[torus_distance(x, pts, self.side) <= self.rho]
            worst = max(worst, abs(self.psi(x, pts, self.side) - self.psi(x, near, self.side)))
        return worst


def isolation_indicator(rho: float):
    """psi(x, X) = I[some other point within rho] - c with the exact centering
    constant c = 1 - (1 - kappa_rho/n)^{n-1} (points are uniform on volume n)."""

    def make(inst: GeometryInstance):
        c = 1.0 - (1.0 - sphere_volume(rho, inst.d) / inst.n) ** (inst.n - 1)

        def psi(x, pts, side):
            dist = torus_distance(x, pts, side)
            return float(np.sum((dist <= rho) & (dist > 0)) > 0) - c

        return psi

    return make


class GeometryCoupling(CouplingSampler):
    """``include_wdd=False`` skips the auxiliary redraw (W'' defaults to W),
    halving the per-draw cost when only (W, W', G) are consumed."""

    name = "geometry"
    marginals_equal = False
    pair_exchangeable = False

    def __init__(self, inst: GeometryInstance, include_wdd: bool = True):
        self.include_wdd = include_wdd
        self.inst = inst
        if inst.sigma2 is None:
            rng = np.random.default_rng(inst.pilot_seed)
            u = np.array([inst.u_of(inst.sample_points(rng)) for _ in range(inst.pilot)])
            inst.sigma2 = float(u.var())
        if inst.sigma2 <= 0:
            raise InvalidParameterError("degenerate functional (Var U = 0)")
        self.sigma = math.sqrt(inst.sigma2)

    def _uniform_outside(self, rng, count, centers, radius):
        """count fresh uniform points with no center within `radius`."""
        inst = self.inst
        out = np.empty((count, inst.d))
        filled = 0
        while filled < count:
            cand = rng.random((max(count - filled, 4), inst.d)) * inst.side
            ok = np.ones(cand.shape[0], dtype=bool)
            for c in centers:
                ok &= torus_distance(c, cand, inst.side) > radius
            take = cand[ok][: count - filled]
            out[filled : filled + take.shape[0]] = take
            filled += take.shape[0]
        return out

    def _in_m2(self, pts: np.ndarray, x_i: np.ndarray, n2: np.ndarray) -> np.ndarray:
        inst = self.inst
        mask = torus_distance(x_i, pts, inst.side) <= 3.0 * inst.rho
        for y in n2:
            mask |= torus_distance(y, pts, inst.side) <= 2.0 * inst.rho
        return mask

    def draw(self, rng):
        inst = self.inst
        sc = self.sigma
        pts = inst.sample_points(rng)
        u = inst.u_of(pts)
        i = int(rng.integers(inst.n))
        x_i = pts[i]
        dist = torus_distance(x_i, pts, inst.side)
        near = (dist <= inst.rho) & (np.arange(inst.n) != i)
        k1 = int(near.sum())
        n2 = (
            self._uniform_outside(rng, k1, [x_i], inst.rho)
            if k1
            else np.empty((0, inst.d))
        )
        x_prime = np.concatenate([pts[~near & (np.arange(inst.n) != i)], n2])
        if x_prime.shape[0] != inst.n - 1:
            raise InvalidParameterError("perturbed set must have n-1 points")
        u_p = inst.u_of(x_prime)
        g = -inst.n * float(inst.psi(x_i, pts, inst.side))
        if not self.include_wdd:
            return batch_from_arrays([u / sc], [u_p / sc], [g / sc]).row(0)
        # W'': fresh binomial points on M2 via keep-in-region of n torus uniforms
        fresh = rng.random((inst.n, inst.d)) * inst.side
        n4 = fresh[self._in_m2(fresh, x_i, n2)]
        rest = pts[~self._in_m2(pts, x_i, n2)]
        deficit = inst.n - n4.shape[0] - rest.shape[0]
        if deficit > 0:
            add = np.empty((deficit, inst.d))
            filled = 0
            while filled < deficit:
                cand = rng.random((max(deficit - filled, 4), inst.d)) * inst.side
                keep = cand[~self._in_m2(cand, x_i, n2)][: deficit - filled]
                add[filled : filled + keep.shape[0]] = keep
                filled += keep.shape[0]
            rest = np.concatenate([rest, add])
        elif deficit < 0:
            drop = rng.choice(rest.shape[0], size=-deficit, replace=False)
            rest = np.delete(rest, drop, axis=0)
        x_dd = np.concatenate([n4, rest])
        if x_dd.shape[0] != inst.n:
            raise InvalidParameterError("redrawn set must have n points")
        u_dd = inst.u_of(x_dd)
        return batch_from_arrays([u / sc], [u_p / sc], [g / sc], [u_dd / sc]).row(0)


    def detailed_draw(self, rng) -> dict:
        """One draw plus the perturbation bookkeeping.

        Returns the removed neighbours N1, their replacements N2, the fixed
        points with affected values N3, the four-term split of
        Delta = U' - U (replacement gains, neighbour changes, removed-point
        losses, the deleted point itself), and membership predicates for the
        nested regions M1..M4 (M4 is empty unless the completion removed or
        added points P).
        """
        inst = self.inst
        pts = inst.sample_points(rng)
        i = int(rng.integers(inst.n))
        x_i = pts[i]
        dist = torus_distance(x_i, pts, inst.side)
        near = (dist <= inst.rho) & (np.arange(inst.n) != i)
        n1 = pts[near]
        n2 = (
            self._uniform_outside(rng, int(near.sum()), [x_i], inst.rho)
            if near.any()
            else np.empty((0, inst.d))
        )
        keep = ~near & (np.arange(inst.n) != i)
        x_prime = np.concatenate([pts[keep], n2])

        def in_region(level, y):
            y = np.atleast_2d(np.asarray(y, dtype=float))
            base = torus_distance(x_i, y, inst.side) <= (level + 1) * inst.rho
            for c in n2:
                base |= torus_distance(c, y, inst.side) <= level * inst.rho
            return base

        in_m1 = lambda y: in_region(1, y)  # noqa: E731
        in_m2 = lambda y: in_region(2, y)  # noqa: E731
        in_m3 = lambda y: in_region(3, y)  # noqa: E731
        n3_mask = keep & in_m1(pts) & (dist > inst.rho)
        n3 = pts[n3_mask]
        term_new = math.fsum(float(inst.psi(x, x_prime, inst.side)) for x in n2)
        term_changed = math.fsum(
            float(inst.psi(x, x_prime, inst.side)) - float(inst.psi(x, pts, inst.side))
            for x in n3
        )
        term_removed = -math.fsum(float(inst.psi(x, pts, inst.side)) for x in n1)
        term_self = -float(inst.psi(x_i, pts, inst.side))
        delta = inst.u_of(x_prime) - inst.u_of(pts)
        # the W'' redraw over M2: fresh in-region points N4, completion P
        fresh = rng.random((inst.n, inst.d)) * inst.side
        n4 = fresh[in_m2(fresh)]
        rest = pts[~in_m2(pts)]
        deficit = inst.n - n4.shape[0] - rest.shape[0]
        if deficit > 0:
            p_new = np.empty((deficit, inst.d))
            filled = 0
            while filled < deficit:
                cand = rng.random((max(deficit - filled, 4), inst.d)) * inst.side
                kept = cand[~in_m2(cand)][: deficit - filled]
                p_new[filled : filled + kept.shape[0]] = kept
                filled += kept.shape[0]
            p_points = p_new
        elif deficit < 0:
            drop = rng.choice(rest.shape[0], size=-deficit, replace=False)
            p_points = rest[drop]
        else:
            p_points = np.empty((0, inst.d))

        def in_m4(y):
            y = np.atleast_2d(np.asarray(y, dtype=float))
            mask = np.zeros(y.shape[0], dtype=bool)
            for c in p_points:
                mask |= torus_distance(c, y, inst.side) <= inst.rho
            return mask

        return {
            "points": pts,
            "index": i,
            "n1": n1,
            "n2": n2,
            "n3": n3,
            "n4": n4,
            "p": p_points,
            "delta": delta,
            "delta_terms": (term_new, term_changed, term_removed, term_self),
            "in_m1": in_m1,
            "in_m2": in_m2,
            "in_m3": in_m3,
            "in_m4": in_m4,
        }


def geometry_coupling(inst: GeometryInstance, include_wdd: bool = True) -> GeometryCoupling:
    return GeometryCoupling(inst, include_wdd)
