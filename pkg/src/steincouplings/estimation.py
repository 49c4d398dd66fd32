"""Error-term estimators and closed-form bound evaluators.

The error terms are plug-in expectations of the expressions appearing in the
Wasserstein/Kolmogorov theorems (truncation at the constant 1 exactly as
written).  Conditional terms are never estimated by regressing on W: the
configuration-conditional hook gives an exact average over the randomization
index, and conditioning on the configuration refines conditioning on W, so
the resulting variance is a valid upper proxy for Var E^W(GD).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma as gamma_fn

from .core import (
    ChunkedRunner,
    CouplingSampler,
    InvalidParameterError,
    MeanCI,
    TruncationParams,
    UnsupportedCouplingError,
    Z99,
    mc_means,
)


@dataclass
class ErrorTermReport:
    """Point estimates (with CI half-widths) for the error terms.

    Fields left at None were not estimated; the bound evaluators raise on
    missing required inputs.  ``exact_coupling`` marks r1 = r2 = r3 = 0 by
    construction instead of estimation.
    """

    r0_lower: float | None = None
    r1: float | None = None
    r2: float | None = None
    r3: float | None = None
    r4: float | None = None
    r5: float | None = None
    r4p: float | None = None
    r5p: float | None = None
    r6: float | None = None
    r6p: float | None = None
    r7: float | None = None
    r8: float | None = None
    r9: float | None = None
    r10: float | None = None
    r11: float | None = None
    r12: float | None = None
    epsilon: float | None = None
    var_cond_gd: float | None = None
    r3_hat: float | None = None  # E|E^W(GD) - 1| proxy
    e_abs_w: float | None = None
    e_w1_sq: float | None = None  # E (|W|+1)^2
    e_abs_gd2: float | None = None  # E|G D^2|
    e_gdtilde_dprime: float | None = None  # E|G Dt D'|
    e_s_dprime: float | None = None  # E|S D'|
    ci: dict = field(default_factory=dict)
    exact_coupling: bool = False
    flags: list = field(default_factory=list)

    def require(self, *names: str) -> list[float]:
        out = []
        for n in names:
            v = getattr(self, n)
            if v is None:
                raise InvalidParameterError(f"error-term report is missing {n!r}")
            out.append(v)
        return out


@dataclass
class BoundReport:
    theorem: str
    value: float
    inputs: dict
    flags: list = field(default_factory=list)

    def __post_init__(self):
        if self.value < 0:
            raise InvalidParameterError("bound must be >= 0")


@dataclass
class ConditionalConcentration:
    """Small-interval concentration theta_eps(X) = sup_a P[a<=W<=a+eps | X].

    ``theta`` maps a SampleBatch to per-sample values in [0, 1]; the trivial
    bound theta = 1 is always valid.  ``from_conditional_dk`` applies the
    smoothing lemma eps*scale/sqrt(2 pi) + 2 d_K(conditional law), capped
    at 1.
    """

    epsilon: float
    theta: object = None  # callable SampleBatch -> ndarray

    def __post_init__(self):
        if self.epsilon <= 0:
            raise InvalidParameterError("epsilon must be > 0")
        if self.theta is None:
            self.theta = lambda batch: np.ones(len(batch))

    @staticmethod
    def bound_from_conditional_dk(eps: float, dk: float, scale: float = 1.0) -> float:
        return min(1.0, eps * scale / math.sqrt(2 * math.pi) + 2.0 * dk)


def _unconditional_fns() -> dict:
    return {
        "r4": lambda b: np.abs(b.g * b.d) * (np.abs(b.d) > 1.0),
        "r5": lambda b: np.abs(b.g * np.minimum(b.d**2, 1.0)),
        "r4p": lambda b: np.abs(b.g * b.d_tilde - b.s) * (np.abs(b.d_prime) > 1.0),
        "r5p": lambda b: np.abs((b.g * b.d_tilde - b.s) * np.minimum(np.abs(b.d_prime), 1.0)),
        "r9": lambda b: np.abs(
            (b.s - b.g * b.d_tilde) * (np.abs(b.w) + 1.0) * np.minimum(np.abs(b.d_prime), 1.0)
        ),
        "r10": lambda b: np.abs(b.g * (np.abs(b.w) + 1.0) * np.minimum(b.d**2, 1.0)),
        "e_abs_w": lambda b: np.abs(b.w),
        "e_w1_sq": lambda b: (np.abs(b.w) + 1.0) ** 2,
        "e_abs_gd2": lambda b: np.abs(b.g * b.d**2),
        "e_gdtilde_dprime": lambda b: np.abs(b.g * b.d_tilde * b.d_prime),
        "e_s_dprime": lambda b: np.abs(b.s * b.d_prime),
    }


def _estimate_fns(
    fns: dict,
    sampler: CouplingSampler,
    n_samples: int | None,
    runner: ChunkedRunner | None,
) -> tuple[dict[str, float], dict[str, float]]:
    enum = sampler.enumerate() if n_samples is None else None
    if enum is not None:
        vals = {k: enum.expectation(f(enum.batch)) for k, f in fns.items()}
        return vals, {k: 0.0 for k in fns}
    if n_samples is None or n_samples < 2:
        raise InvalidParameterError("n_samples >= 2 required without enumerate()")
    cis = mc_means(fns, sampler, n_samples, runner or ChunkedRunner(seed=0))
    return {k: c.mean for k, c in cis.items()}, {k: c.halfwidth for k, c in cis.items()}


def estimate_unconditional_terms(
    sampler: CouplingSampler,
    n_samples: int | None = None,
    runner: ChunkedRunner | None = None,
    report: ErrorTermReport | None = None,
) -> ErrorTermReport:
    """r4, r5, r4', r5', r9, r10 plus the moment helpers E|W|, E(|W|+1)^2."""
    vals, hws = _estimate_fns(_unconditional_fns(), sampler, n_samples, runner)
    rep = report or ErrorTermReport()
    for k, v in vals.items():
        setattr(rep, k, v)
        rep.ci[k] = hws[k]
    if sampler.exact:
        rep.exact_coupling = True
        rep.r0_lower = rep.r0_lower or 0.0
        rep.r1 = rep.r1 if rep.r1 is not None else 0.0
        rep.r2 = rep.r2 if rep.r2 is not None else 0.0
        rep.r3 = rep.r3 if rep.r3 is not None else 0.0
    return rep


def estimate_truncated_terms(
    sampler: CouplingSampler,
    trunc: TruncationParams,
    n_samples: int | None = None,
    runner: ChunkedRunner | None = None,
    report: ErrorTermReport | None = None,
) -> ErrorTermReport:
    """r6 and r6' for the given truncation constants."""
    fns = {
        "r6": lambda b: np.abs(b.g * b.d)
        * ((np.abs(b.g) > trunc.alpha) | (np.abs(b.d) > trunc.beta)),
        "r6p": lambda b: np.abs(b.g * b.d_tilde - b.s)
        * (
            (np.abs(b.g) > trunc.alpha)
            | (np.abs(b.d_tilde) > trunc.beta_tilde)
            | (np.abs(b.d_prime) > trunc.beta_prime)
            | (np.abs(b.s) > trunc.gamma)
        ),
    }
    vals, hws = _estimate_fns(fns, sampler, n_samples, runner)
    rep = report or ErrorTermReport()
    rep.r6, rep.r6p = vals["r6"], vals["r6p"]
    rep.ci.update({k: hws[k] for k in vals})
    return rep


def estimate_conditional_terms(
    sampler: CouplingSampler,
    n_samples: int,
    runner: ChunkedRunner | None = None,
    report: ErrorTermReport | None = None,
) -> ErrorTermReport:
    """var_cond_gd (upper proxy for Var E^W(GD)), r3_hat, and the r3 proxy.

    Requires the configuration-conditional hook; refuses otherwise rather
    than regressing on a continuous W.
    """
    runner = runner or ChunkedRunner(seed=0)
    probe_rng = np.random.default_rng(0)
    if sampler.conditional_gd(probe_rng) is None:
        raise UnsupportedCouplingError(
            f"{sampler.name} does not expose the conditional_gd hook"
        )

    def one_chunk(rng, size):
        vals = sampler.conditional_gd_batch(rng, size)
        parts = [
            math.fsum(vals.tolist()),
            math.fsum((vals**2).tolist()),
            math.fsum(np.abs(vals - 1.0).tolist()),
        ]
        pair = sampler.conditional_gdtilde_s(rng)
        if pair is not None:
            diffs = [abs(pair[0] - pair[1])]
            for _ in range(size - 1):
                gdt, s = sampler.conditional_gdtilde_s(rng)
                diffs.append(abs(gdt - s))
            parts.append(math.fsum(diffs))
        else:
            parts.append(None)
        return parts, size

    chunks = runner.map_chunks(one_chunk, n_samples)
    n = sum(c[1] for c in chunks)
    tot = math.fsum(c[0][0] for c in chunks)
    tot2 = math.fsum(c[0][1] for c in chunks)
    tot_dev = math.fsum(c[0][2] for c in chunks)
    mean = tot / n
    rep = report or ErrorTermReport()
    rep.var_cond_gd = max(0.0, tot2 / n - mean * mean)
    rep.r3_hat = tot_dev / n
    if chunks[0][0][3] is not None:
        rep.r3 = math.fsum(c[0][3] for c in chunks) / n
        rep.ci["r3"] = 0.0
    elif sampler.exact:
        rep.r3 = rep.r3 if rep.r3 is not None else 0.0
        rep.flags.append("r3=0 assumed: exact coupling without gdtilde_s hook")
    return rep


def estimate_r7_r8(
    sampler: CouplingSampler,
    n_pairs: int,
    runner: ChunkedRunner | None = None,
    t_grid: np.ndarray | None = None,
    report: ErrorTermReport | None = None,
    refinement_warning: bool = True,
) -> ErrorTermReport:
    """r7 = int Var K^W(t) dt and r8 = sqrt(int |t| Var K^W(t) dt) on |t|<=1.

    Uses the per-index component representation G = n Y_I, D = D_I: with
    S(t) = sum_i Y_i I[0<=t<D_i] - Y_i I[D_i<=t<0] (the index-conditional
    mean of K-hat) and an independent copy S*(t), E[S(t)^2 - S(t)S*(t)]
    estimates Var S(t) >= Var K^W(t).  Trapezoid integration on the grid
    (default 201 equispaced points); doubling the grid must move r7 by < 1%
    or a warning flag is recorded.
    """
    probe_rng = np.random.default_rng(0)
    if sampler.component_draw(probe_rng) is None:
        raise UnsupportedCouplingError(
            f"{sampler.name} does not expose per-index components"
        )
    if t_grid is None:
        t_grid = np.linspace(-1.0, 1.0, 201)
    runner = runner or ChunkedRunner(seed=0)

    def s_of(rng, grid):
        y, d = sampler.component_draw(rng)
        pos = (grid[None, :] >= 0) & (grid[None, :] < d[:, None])
        neg = (d[:, None] <= grid[None, :]) & (grid[None, :] < 0)
        return y @ (pos.astype(float) - neg.astype(float))

    fine = np.linspace(-1.0, 1.0, 2 * (t_grid.size - 1) + 1)

    def one_chunk(rng, size):
        # per-pair trapezoid integrals so the merged means carry honest CIs
        sums = np.zeros(6)  # r7, r7^2, r8sq, r8sq^2, r7_fine, r7_fine^2
        for _ in range(size):
            s1 = s_of(rng, t_grid)
            s2 = s_of(rng, t_grid)
            v = s1 * s1 - s1 * s2
            i7 = float(np.trapezoid(v, t_grid))
            i8 = float(np.trapezoid(np.abs(t_grid) * v, t_grid))
            f1 = s_of(rng, fine)
            f2 = s_of(rng, fine)
            i7f = float(np.trapezoid(f1 * f1 - f1 * f2, fine))
            sums += (i7, i7 * i7, i8, i8 * i8, i7f, i7f * i7f)
        return sums, size

    chunks = runner.map_chunks(one_chunk, n_pairs)
    n = sum(c[1] for c in chunks)
    s = np.sum([c[0] for c in chunks], axis=0) / n
    rep = report or ErrorTermReport()
    rep.r7 = max(s[0], 0.0)
    rep.ci["r7"] = Z99 * math.sqrt(max(s[1] - s[0] ** 2, 0.0) / n)
    r8sq = max(s[2], 0.0)
    rep.r8 = math.sqrt(r8sq)
    hw8 = Z99 * math.sqrt(max(s[3] - s[2] ** 2, 0.0) / n)
    rep.ci["r8"] = math.sqrt(r8sq + hw8) - rep.r8 if r8sq + hw8 > 0 else 0.0
    r7_fine = max(s[4], 0.0)
    hw_f = Z99 * math.sqrt(max(s[5] - s[4] ** 2, 0.0) / n)
    if (
        refinement_warning
        and rep.r7 > 0
        and abs(r7_fine - rep.r7) > 0.01 * rep.r7 + rep.ci["r7"] + hw_f
    ):
        rep.flags.append("r7 grid refinement moved the estimate by > 1%")
        warnings.warn(
            "doubling the r7 grid moved the estimate by more than 1%",
            RuntimeWarning,
            stacklevel=2,
        )
    return rep


def estimate_r11_r12(
    sampler: CouplingSampler,
    concentration: ConditionalConcentration,
    n_samples: int | None = None,
    runner: ChunkedRunner | None = None,
    report: ErrorTermReport | None = None,
) -> ErrorTermReport:
    """r11(eps), r12(eps) with a user-supplied conditional-concentration map."""
    theta = concentration.theta
    fns = {
        "r11": lambda b: np.abs((b.s - b.g * b.d_tilde) * b.d_prime * theta(b)),
        "r12": lambda b: np.abs(b.g * b.d**2 * theta(b)),
    }
    vals, hws = _estimate_fns(fns, sampler, n_samples, runner)
    rep = report or ErrorTermReport()
    rep.r11, rep.r12 = vals["r11"], vals["r12"]
    rep.epsilon = concentration.epsilon
    rep.ci.update({k: hws[k] for k in vals})
    return rep


# ---------------------------------------------------------------------------
# Bound evaluators (pure arithmetic of the stated formulas)
# ---------------------------------------------------------------------------


def bound_theorem1(report: ErrorTermReport) -> BoundReport:
    """Wasserstein: 2 r0 + 0.8(r1+r2+r3) + 1.6 r4 + r5 + 1.6 r4' + 2 r5'."""
    r0, r1, r2, r3, r4, r5, r4p, r5p = report.require(
        "r0_lower", "r1", "r2", "r3", "r4", "r5", "r4p", "r5p"
    )
    value = 2 * r0 + 0.8 * (r1 + r2 + r3) + 1.6 * r4 + r5 + 1.6 * r4p + 2 * r5p
    flags = list(report.flags)
    if r0 == 0.0 and not report.exact_coupling:
        flags.append("r0 is a family lower bound, not the supremum")
    return BoundReport(
        "theorem1",
        value,
        {"r0": r0, "r1": r1, "r2": r2, "r3": r3, "r4": r4, "r5": r5, "r4p": r4p, "r5p": r5p},
        flags,
    )


def bound_corollary1(var_cond_gd: float, e_abs_gd2: float) -> BoundReport:
    """Wasserstein: 0.8 sqrt(Var E^W(GD)) + E|G D^2|."""
    if var_cond_gd < 0 or e_abs_gd2 < 0:
        raise InvalidParameterError("inputs must be >= 0")
    return BoundReport(
        "corollary1",
        0.8 * math.sqrt(var_cond_gd) + e_abs_gd2,
        {"var_cond_gd": var_cond_gd, "e_abs_gd2": e_abs_gd2},
    )


def bound_corollary2(e_gd2: float, e_gdtilde_dprime: float, e_s_dprime: float) -> BoundReport:
    """Wasserstein: E|G D^2| + 2 E|G Dt D'| + 2 E|S D'|."""
    if min(e_gd2, e_gdtilde_dprime, e_s_dprime) < 0:
        raise InvalidParameterError("inputs must be >= 0")
    return BoundReport(
        "corollary2",
        e_gd2 + 2 * e_gdtilde_dprime + 2 * e_s_dprime,
        {
            "e_gd2": e_gd2,
            "e_gdtilde_dprime": e_gdtilde_dprime,
            "e_s_dprime": e_s_dprime,
        },
    )


def bound_corollary3(a: float, b: float) -> BoundReport:
    """Wasserstein: 5 A^2 B from third-moment bounds A, B."""
    if a < 0 or b < 0:
        raise InvalidParameterError("A and B must be >= 0")
    return BoundReport("corollary3", 5.0 * a * a * b, {"A": a, "B": b})


def bound_theorem2(
    report: ErrorTermReport, trunc: TruncationParams, e_abs_w: float | None = None
) -> BoundReport:
    """Kolmogorov: 2(r0+r1+r2+r3+r6+r6' + (a*bt+g)(E|W|+5)b' + (E|W|+3)a*b^2)."""
    r0, r1, r2, r3, r6, r6p = report.require("r0_lower", "r1", "r2", "r3", "r6", "r6p")
    if e_abs_w is None:
        (e_abs_w,) = report.require("e_abs_w")
    tail = (trunc.alpha * trunc.beta_tilde + trunc.gamma) * (e_abs_w + 5.0) * trunc.beta_prime
    tail += (e_abs_w + 3.0) * trunc.alpha * trunc.beta**2
    value = 2.0 * (r0 + r1 + r2 + r3 + r6 + r6p + tail)
    return BoundReport(
        "theorem2",
        value,
        {
            "r0": r0,
            "r1": r1,
            "r2": r2,
            "r3": r3,
            "r6": r6,
            "r6p": r6p,
            "e_abs_w": e_abs_w,
            "trunc": trunc,
        },
        list(report.flags),
    )


def bound_corollary4(var_cond_gd: float, alpha: float, beta: float) -> BoundReport:
    """Kolmogorov: 2 sqrt(Var E^W(GD)) + 8 alpha beta^2 for bounded G, D."""
    if min(var_cond_gd, alpha, beta) < 0:
        raise InvalidParameterError("inputs must be >= 0")
    return BoundReport(
        "corollary4",
        2.0 * math.sqrt(var_cond_gd) + 8.0 * alpha * beta**2,
        {"var_cond_gd": var_cond_gd, "alpha": alpha, "beta": beta},
    )


def bound_corollary5(trunc: TruncationParams) -> BoundReport:
    """Kolmogorov: 8 a b^2 + 12 a bt b' + 12 g b' for a.s.-bounded couplings."""
    value = (
        8.0 * trunc.alpha * trunc.beta**2
        + 12.0 * trunc.alpha * trunc.beta_tilde * trunc.beta_prime
        + 12.0 * trunc.gamma * trunc.beta_prime
    )
    return BoundReport("corollary5", value, {"trunc": trunc})


def bound_theorem3(
    report: ErrorTermReport,
    e_abs_w: float | None = None,
    e_w1_sq: float | None = None,
) -> BoundReport:
    """Kolmogorov: 2r0 + 2r3_hat + 2r4 + 2(E|W|+2.4)r5 + 1.4r7
    + 2(sqrt(E(|W|+1)^2)+1.1)r8."""
    r0, r3h, r4, r5, r7, r8 = report.require("r0_lower", "r3_hat", "r4", "r5", "r7", "r8")
    if e_abs_w is None:
        (e_abs_w,) = report.require("e_abs_w")
    if e_w1_sq is None:
        (e_w1_sq,) = report.require("e_w1_sq")
    value = (
        2 * r0
        + 2 * r3h
        + 2 * r4
        + 2 * (e_abs_w + 2.4) * r5
        + 1.4 * r7
        + 2 * (math.sqrt(e_w1_sq) + 1.1) * r8
    )
    return BoundReport(
        "theorem3",
        value,
        {
            "r0": r0,
            "r3_hat": r3h,
            "r4": r4,
            "r5": r5,
            "r7": r7,
            "r8": r8,
            "e_abs_w": e_abs_w,
            "e_w1_sq": e_w1_sq,
        },
        list(report.flags),
    )


def bound_theorem4(report: ErrorTermReport, epsilon: float | None = None) -> BoundReport:
    """Kolmogorov: r0+r1+r2+r3+r9+0.5r10 + (r11 + 0.5 r12)/eps + 0.4 eps.

    r11 and r12 must have been estimated at the same eps.
    """
    r0, r1, r2, r3, r9, r10, r11, r12 = report.require(
        "r0_lower", "r1", "r2", "r3", "r9", "r10", "r11", "r12"
    )
    if epsilon is None:
        epsilon = report.epsilon
    if epsilon is None or epsilon <= 0:
        raise InvalidParameterError("need epsilon > 0 matching the r11/r12 estimates")
    if report.epsilon is not None and abs(epsilon - report.epsilon) > 1e-12:
        raise InvalidParameterError("epsilon differs from the one used for r11/r12")
    value = r0 + r1 + r2 + r3 + r9 + 0.5 * r10 + (r11 + 0.5 * r12) / epsilon + 0.4 * epsilon
    return BoundReport(
        "theorem4",
        value,
        {
            "r0": r0,
            "r1": r1,
            "r2": r2,
            "r3": r3,
            "r9": r9,
            "r10": r10,
            "r11": r11,
            "r12": r12,
            "epsilon": epsilon,
        },
        list(report.flags),
    )


def minimize_theorem4_epsilon(
    estimate_at,
    grid: np.ndarray | None = None,
) -> tuple[float, BoundReport]:
    """Minimize the theorem-4 value over a log-grid of eps in [1e-4, 1].

    ``estimate_at(eps)`` must return an ErrorTermReport with all theorem-4
    inputs (r11/r12 estimated at that eps).
    """
    if grid is None:
        grid = np.logspace(-4, 0, 25)
    best = None
    for eps in grid:
        rep = estimate_at(float(eps))
        br = bound_theorem4(rep, float(eps))
        if best is None or br.value < best[1].value:
            best = (float(eps), br)
    return best


def hoeffding_bound(n: int, a_norm: float) -> BoundReport:
    """Kolmogorov: 448 n ||a||^3 + 96 ||a|| for the combinatorial statistic."""
    if n < 1 or a_norm < 0:
        raise InvalidParameterError("need n >= 1 and ||a|| >= 0")
    return BoundReport(
        "hoeffding", 448.0 * n * a_norm**3 + 96.0 * a_norm, {"n": n, "a_norm": a_norm}
    )


def occupancy_bound(
    n: int, sigma: float, h_norm: float, dh_norm: float, m: int, p_bar: float
) -> BoundReport:
    """Kolmogorov bound for occupancy functionals, with the log-window check
    1 + 10 m p_bar <= 4 ln(n ||h||) <= (2 p_bar)^{-1/2}."""
    if min(n, m) < 1 or sigma <= 0 or not (0 <= p_bar <= 1):
        raise InvalidParameterError("invalid occupancy bound inputs")
    flags = []
    if h_norm < 1 or dh_norm < 1:
        flags.append("requires ||h|| >= 1 and ||dh|| >= 1: bound not applicable")
    ln = math.log(n * h_norm)
    lhs = 1.0 + 10.0 * m * p_bar
    mid = 4.0 * ln
    rhs = (2.0 * p_bar) ** -0.5 if p_bar > 0 else math.inf
    condition_ok = lhs <= mid <= rhs
    value = (
        409600.0 * n * dh_norm**3 * ln**6 * (1.0 + sigma**2 / n) / sigma**3
        + 3888.0 * ln**2 / sigma**2
    )
    if not condition_ok:
        flags.append("condition (log-window) violated")
    return BoundReport(
        "occupancy",
        value,
        {
            "n": n,
            "sigma": sigma,
            "h_norm": h_norm,
            "dh_norm": dh_norm,
            "m": m,
            "p_bar": p_bar,
            "condition_ok": condition_ok,
            "condition": (lhs, mid, rhs),
        },
        flags,
    )


def min_geometry_radius(d: int) -> float:
    """Smallest admissible influence radius: pi^{-1/2} Gamma(1+d/2)^{1/d}."""
    return math.pi**-0.5 * float(gamma_fn(1.0 + d / 2.0)) ** (1.0 / d)


def geometry_bound(
    n: int, sigma: float, psi_norm: float, rho: float, d: int, c_d: float = 1.0
) -> BoundReport:
    """Wasserstein: C_d ||psi||^3 rho^{6d} n / sigma^3, modulo the universal
    constant C_d (an explicit input, default 1)."""
    if n < 1 or sigma <= 0 or psi_norm < 0 or d < 1 or c_d <= 0:
        raise InvalidParameterError("invalid geometry bound inputs")
    if rho < min_geometry_radius(d):
        raise InvalidParameterError(
            f"rho must be >= {min_geometry_radius(d):.6f} in dimension {d}"
        )
    value = c_d * psi_norm**3 * rho ** (6 * d) * n / sigma**3
    return BoundReport(
        "geometry",
        value,
        {"n": n, "sigma": sigma, "psi_norm": psi_norm, "rho": rho, "d": d, "C_d": c_d},
        ["modulo universal constant C_d"],
    )


def graph_log_gap(lam: float) -> float:
    """a = lambda - 1 - log(lambda), the sub-critical tail exponent."""
    if not 0 < lam < 1:
        raise InvalidParameterError("need 0 < lambda < 1 (sub-critical)")
    return lam - 1.0 - math.log(lam)


def graph_bound(
    n: int,
    sigma: float,
    lam: float,
    h_norm: float,
    dh_norm: float,
    k_const: float = 1.0,
) -> BoundReport:
    """Kolmogorov bound for component functionals of a sub-critical random
    graph, modulo the universal constant K (explicit input, default 1)."""
    if n < 2 or sigma <= 0 or h_norm < 0 or dh_norm < 0 or k_const <= 0:
        raise InvalidParameterError("invalid graph bound inputs")
    a = graph_log_gap(lam)
    ln = math.log(n * h_norm)
    condition_ok = a <= 4.0 * ln
    value = k_const * (
        n * ln**11 * dh_norm**3 * (1.0 + 1.0 / a**2 + sigma**2 / n) / (lam * a**11 * sigma**3)
        + math.exp(a) * ln**2 / (lam * a**2 * sigma**2)
    )
    flags = ["modulo universal constant K"]
    if h_norm < 1 or dh_norm < 1:
        flags.append("requires ||h|| >= 1 and ||dh|| >= 1: bound not applicable")
    if not condition_ok:
        flags.append("condition a <= 4 ln(n||h||) violated")
    return BoundReport(
        "graph",
        value,
        {
            "n": n,
            "sigma": sigma,
            "lambda": lam,
            "h_norm": h_norm,
            "dh_norm": dh_norm,
            "K": k_const,
            "a": a,
            "condition_ok": condition_ok,
        },
        flags,
    )


# ---------------------------------------------------------------------------
# Diagnostics shared by couplings/applications
# ---------------------------------------------------------------------------


def independence_probe(
    pairs_fn,
    n_samples: int,
    runner: ChunkedRunner,
    transform=np.tanh,
) -> MeanCI:
    """CI for corr(transform(U), V) from draws (U, V); contains 0 under
    independence.  ``pairs_fn(rng, size)`` returns two aligned arrays."""

    def one_chunk(rng, size):
        u, v = pairs_fn(rng, size)
        tu = transform(np.asarray(u, dtype=float))
        v = np.asarray(v, dtype=float)
        cols = np.stack([tu, v, tu * v, tu * tu, v * v])
        return cols.sum(axis=1), size

    chunks = runner.map_chunks(one_chunk, n_samples)
    n = sum(c[1] for c in chunks)
    s = np.sum([c[0] for c in chunks], axis=0) / n
    mu, mv, muv, mu2, mv2 = s
    cov = muv - mu * mv
    vu = max(mu2 - mu * mu, 1e-300)
    vv = max(mv2 - mv * mv, 1e-300)
    corr = cov / math.sqrt(vu * vv)
    hw = Z99 / math.sqrt(n)  # asymptotic null sd of the sample correlation
    return MeanCI(float(corr), float(hw), n)
