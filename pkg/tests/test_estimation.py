import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from steincouplings import couplings as cpl
from steincouplings.core import (
    ChunkedRunner,
    CouplingSampler,
    InvalidParameterError,
    TruncationParams,
    UnsupportedCouplingError,
    batch_from_arrays,
)
from steincouplings.estimation import (
    ConditionalConcentration,
    ErrorTermReport,
    bound_corollary1,
    bound_corollary2,
    bound_corollary3,
    bound_corollary4,
    bound_corollary5,
    bound_theorem1,
    bound_theorem2,
    bound_theorem3,
    bound_theorem4,
    estimate_conditional_terms,
    estimate_r7_r8,
    estimate_r11_r12,
    estimate_truncated_terms,
    estimate_unconditional_terms,
    geometry_bound,
    graph_bound,
    graph_log_gap,
    hoeffding_bound,
    min_geometry_radius,
    minimize_theorem4_epsilon,
    occupancy_bound,
)
from steincouplings.metrics import DiscreteDistribution, exact_dk, exact_dw

from conftest import enumerated_law


def _deletion(n=2, **kw):
    return cpl.indep_sum_deletion(cpl.IndependentSumSpec(n, cpl.rademacher_summand(n)), **kw)


def _enum_dist(sampler):
    law = enumerated_law(sampler.enumerate(), lambda s: s.w)
    return DiscreteDistribution(np.array(list(law)), np.array(list(law.values())))


# ---------------------------------------------------------------------------
# Term estimators
# ---------------------------------------------------------------------------


def test_unconditional_terms_deletion_exact():
    rep = estimate_unconditional_terms(_deletion(2))
    assert rep.r4 == 0.0  # |D| = 1/sqrt(2) <= 1 always
    assert abs(rep.r5 - 1 / math.sqrt(2)) < 1e-12  # E|G D^2| = 1/sqrt(2)
    assert rep.r4p == rep.r5p == rep.r9 == 0.0  # W'' = W so D' = 0
    assert rep.exact_coupling and rep.r1 == rep.r2 == rep.r3 == 0.0


class _ZeroG(CouplingSampler):
    def draw_batch(self, rng, size):
        w = np.where(rng.random(size) < 0.5, -1.0, 1.0)
        return batch_from_arrays(w, w + 1.0, np.zeros(size))

    def draw(self, rng):
        return self.draw_batch(rng, 1).row(0)

    def component_draw(self, rng):
        return np.zeros(3), np.ones(3)


def test_degenerate_g_zero_terms():
    rep = estimate_unconditional_terms(_ZeroG(), n_samples=500)
    assert rep.r4 == rep.r5 == rep.r10 == 0.0


def test_truncated_terms():
    trunc_loose = TruncationParams(2 * math.sqrt(2), 1.0, 1.0, 1.0, 1.0)
    rep = estimate_truncated_terms(_deletion(2), trunc_loose)
    assert rep.r6 == 0.0  # |G| = sqrt(2) <= 2 sqrt(2), |D| = 1/sqrt(2) <= 1
    trunc_zero = TruncationParams(0.0, 0.0, 0.0, 0.0, 0.0)
    rep0 = estimate_truncated_terms(_deletion(2), trunc_zero)
    uncond = estimate_unconditional_terms(_deletion(2))
    e_abs_gd = 1.0  # |G D| = 1 always for the n=2 Rademacher deletion
    assert abs(rep0.r6 - e_abs_gd) < 1e-12
    del uncond


def test_conditional_terms_deletion_constant():
    # conditional E(GD | config) = sum X_i^2 = 1 identically for +-1/sqrt(n)
    runner = ChunkedRunner(seed=3, chunk_size=1024)
    rep = estimate_conditional_terms(_deletion(3), 5000, runner)
    assert rep.var_cond_gd < 1e-28
    assert rep.r3_hat < 1e-14


def test_conditional_terms_enumeration_identity_n3():
    # algebraic identity: conditional_gd = sum_i X_i^2 over all 8 configs
    sampler = _deletion(3)
    v = 1 / math.sqrt(3)
    for bits in itertools.product((-v, v), repeat=3):
        assert abs(sum(b * b for b in bits) - 1.0) < 1e-12


def test_conditional_terms_requires_hook():
    with pytest.raises(UnsupportedCouplingError):
        estimate_conditional_terms(_ZeroG(), 100)


def test_conditional_variance_dominates_enumerated_w_conditional():
    # Var of the config-conditional mean >= Var of E(GD | W) (refinement)
    tr = cpl.two_runs_coupling(8, 0.5)
    enum = tr.enumerate()
    law = {}
    num = {}
    for p, s in enum.pairs():
        k = round(s.w, 12)
        law[k] = law.get(k, 0.0) + p
        num[k] = num.get(k, 0.0) + p * s.g * s.d
    cond_w = {k: num[k] / law[k] for k in law}
    mean = sum(law[k] * cond_w[k] for k in law)
    var_w_cond = sum(law[k] * (cond_w[k] - mean) ** 2 for k in law)
    runner = ChunkedRunner(seed=9, chunk_size=4096)
    rep = estimate_conditional_terms(tr, 40_000, runner)
    assert rep.var_cond_gd >= var_w_cond - 0.02


def test_size_bias_conditional_r3_hat():
    sb = cpl.size_bias_bernoulli(0.3)
    runner = ChunkedRunner(seed=5, chunk_size=4096)
    rep = estimate_conditional_terms(sb, 20_000, runner)
    # E|GD - 1| is positive for the Bernoulli coupling (GD is two-valued)
    assert rep.r3_hat > 0.1


def test_r7_r8_zero_for_zero_g():
    runner = ChunkedRunner(seed=1, chunk_size=256)
    rep = estimate_r7_r8(_ZeroG(), 500, runner)
    assert rep.r7 == 0.0 and rep.r8 == 0.0


def test_r7_r8_requires_components():
    with pytest.raises(UnsupportedCouplingError):
        estimate_r7_r8(cpl.size_bias_bernoulli(0.2), 100)


def test_r7_r8_matches_enumeration_oracle_two_runs():
    # independent oracle: exact Var S(t) by enumerating the bit configuration
    # and the per-site resampled bit
    tr = cpl.two_runs_coupling(8, 0.5)
    n, p, sc = tr.n, tr.p, tr.scale
    grid = np.linspace(-1, 1, 201)
    e_s = np.zeros(grid.size)
    e_s2 = np.zeros(grid.size)
    for bits in itertools.product((0.0, 1.0), repeat=n):
        xi = np.array(bits)
        pc = p ** xi.sum() * (1 - p) ** (n - xi.sum())
        s_mean = np.zeros(grid.size)
        s_var = np.zeros(grid.size)
        for i in range(n):
            prev_i, next_i = (i - 1) % n, (i + 1) % n
            t_m = np.zeros(grid.size)
            t_m2 = np.zeros(grid.size)
            for xip, q in ((0.0, 1 - p), (1.0, p)):
                dv = (
                    -xi[prev_i] * xi[i]
                    - xi[i] * xi[next_i]
                    + xi[prev_i] * xip
                    + xip * xi[next_i]
                )
                y = tr._g_raw(xi[prev_i], xi[i], xi[next_i], xip) / n / sc
                d = dv / sc
                ind = ((grid >= 0) & (grid < d)).astype(float) - (
                    (d <= grid) & (grid < 0)
                ).astype(float)
                val = y * ind
                t_m += q * val
                t_m2 += q * val * val
            s_mean += t_m
            s_var += t_m2 - t_m**2
        e_s += pc * s_mean
        e_s2 += pc * (s_var + s_mean**2)
    var_s = e_s2 - e_s**2
    r7_exact = float(np.trapezoid(var_s, grid))
    r8_exact = math.sqrt(float(np.trapezoid(np.abs(grid) * var_s, grid)))
    runner = ChunkedRunner(seed=31, chunk_size=512)
    rep = estimate_r7_r8(tr, n_pairs=20_000, runner=runner)
    assert abs(rep.r7 - r7_exact) <= rep.ci["r7"]
    assert abs(rep.r8 - r8_exact) <= rep.ci["r8"] + 1e-3


def test_r7_r8_matches_enumeration_oracle_deletion():
    sampler = _deletion(3)
    grid = np.linspace(-1, 1, 201)
    v = 1 / math.sqrt(3)
    e_s = np.zeros(grid.size)
    e_s2 = np.zeros(grid.size)
    for bits in itertools.product((-v, v), repeat=3):
        x = np.array(bits)
        s = np.zeros(grid.size)
        for i in range(3):
            d = -x[i]
            ind = ((grid >= 0) & (grid < d)).astype(float) - (
                (d <= grid) & (grid < 0)
            ).astype(float)
            s += -x[i] * ind
        e_s += 0.125 * s
        e_s2 += 0.125 * s * s
    var_s = e_s2 - e_s**2
    r7_exact = float(np.trapezoid(var_s, grid))
    runner = ChunkedRunner(seed=13, chunk_size=1024)
    rep = estimate_r7_r8(sampler, n_pairs=20_000, runner=runner)
    assert abs(rep.r7 - r7_exact) <= rep.ci["r7"]


# ---------------------------------------------------------------------------
# Bound evaluator arithmetic
# ---------------------------------------------------------------------------


def _zero_report(**kw):
    rep = ErrorTermReport(
        r0_lower=0.0, r1=0.0, r2=0.0, r3=0.0, r4=0.0, r5=0.0, r4p=0.0, r5p=0.0,
        r6=0.0, r6p=0.0, r7=0.0, r8=0.0, r9=0.0, r10=0.0, r11=0.0, r12=0.0,
        r3_hat=0.0, e_abs_w=0.0, e_w1_sq=1.0,
    )
    for k, v in kw.items():
        setattr(rep, k, v)
    return rep


def test_theorem1_arithmetic():
    assert bound_theorem1(_zero_report()).value == 0.0
    rep = _zero_report(r4=0.01, r5=0.02, r4p=0.005, r5p=0.003)
    assert abs(bound_theorem1(rep).value - 0.05) < 1e-15


def test_theorem1_deletion_exact_terms():
    rep = estimate_unconditional_terms(_deletion(2))
    rep.r0_lower = 0.0
    br = bound_theorem1(rep)
    assert abs(br.value - 1 / math.sqrt(2)) < 1e-12


def test_theorem1_missing_field_raises():
    with pytest.raises(InvalidParameterError):
        bound_theorem1(ErrorTermReport(r0_lower=0.0))


def test_corollary1_arithmetic():
    assert bound_corollary1(0.0, 0.0).value == 0.0
    assert abs(bound_corollary1(0.01, 0.1).value - 0.18) < 1e-15


def test_corollary1_iid_enumeration():
    # +-1/sqrt(n) deletion at n = 9: var term 0, bound = E|G D^2| = 1/3
    sampler = _deletion(9)
    runner = ChunkedRunner(seed=2, chunk_size=2048)
    crep = estimate_conditional_terms(sampler, 4000, runner)
    # E|G D^2| = n |X|^3 = 9 / 27^(1/2)... exact: |G D^2| = n |X_I|^3 = 9/(9 sqrt 9) = 1/3
    urep = estimate_unconditional_terms(sampler)
    assert abs(urep.e_abs_gd2 - 1.0 / 3.0) < 1e-12
    br = bound_corollary1(crep.var_cond_gd, urep.e_abs_gd2)
    assert abs(br.value - 1.0 / 3.0) < 1e-10


def test_corollary2_arithmetic():
    assert bound_corollary2(0.0, 0.0, 0.0).value == 0.0
    assert abs(bound_corollary2(0.1, 0.02, 0.01).value - 0.16) < 1e-15


def test_corollary2_ld2_cross_check():
    # each factor estimated by MC on the 1-dependent coupling equals the
    # plug-in combination evaluated on the same stream
    src = cpl.MovingProductSource(8)
    hoods = cpl.DependencyNeighborhoods.m_dependent(8, 1, sigma=np.eye(8) / 8)
    ld = cpl.local_dependence_coupling(src, hoods)
    runner = ChunkedRunner(seed=6, chunk_size=4096)
    rep = estimate_unconditional_terms(ld, 30_000, runner)
    direct = bound_corollary2(rep.e_abs_gd2, rep.e_gdtilde_dprime, rep.e_s_dprime)
    assert direct.value == rep.e_abs_gd2 + 2 * rep.e_gdtilde_dprime + 2 * rep.e_s_dprime


def test_corollary3_arithmetic():
    assert bound_corollary3(0.0, 2.0).value == 0.0
    assert abs(bound_corollary3(0.1, 2.0).value - 0.1) < 1e-15


def test_theorem2_arithmetic():
    trunc0 = TruncationParams(0.0, 0.0, 0.0, 0.0, 0.0)
    assert bound_theorem2(_zero_report(), trunc0).value == 0.0
    trunc = TruncationParams(1.0, 0.1, 0.1, 0.1, 1.0)
    val = bound_theorem2(_zero_report(e_abs_w=0.8), trunc).value
    assert abs(val - 1.352) < 1e-12


def test_corollary4_arithmetic():
    assert bound_corollary4(0.0, 1.0, 0.0).value == 0.0
    assert abs(bound_corollary4(0.0025, 1.0, 0.1).value - 0.18) < 1e-15


def test_corollary4_bounded_local_dependence():
    src = cpl.MovingProductSource(6)
    hoods = cpl.DependencyNeighborhoods.m_dependent(6, 1, sigma=np.eye(6) / 6)
    ld = cpl.local_dependence_coupling(src, hoods)
    enum = ld.enumerate()
    alpha = float(np.max(np.abs(enum.batch.g)))
    beta = float(np.max(np.abs(enum.batch.d)))
    runner = ChunkedRunner(seed=12, chunk_size=4096)
    crep = estimate_conditional_terms(ld, 30_000, runner)
    br = bound_corollary4(crep.var_cond_gd, alpha, beta)
    law = enumerated_law(enum, lambda s: s.w)
    dist = DiscreteDistribution(np.array(list(law)), np.array(list(law.values())))
    assert br.value >= exact_dk(dist)


def test_corollary5_arithmetic():
    assert bound_corollary5(TruncationParams(0, 0, 0, 0, 0)).value == 0.0
    val = bound_corollary5(TruncationParams(1.0, 0.1, 0.1, 0.1, 1.0)).value
    assert abs(val - 1.4) < 1e-12


def test_theorem3_arithmetic():
    assert bound_theorem3(_zero_report()).value == 0.0
    rep = _zero_report(r4=0.1, r5=0.2, r7=0.3, r8=0.4, r3_hat=0.05, e_abs_w=0.6, e_w1_sq=2.0)
    expected = 2 * 0.05 + 2 * 0.1 + 2 * (0.6 + 2.4) * 0.2 + 1.4 * 0.3 + 2 * (math.sqrt(2.0) + 1.1) * 0.4
    assert abs(bound_theorem3(rep).value - expected) < 1e-12


def test_theorem4_arithmetic():
    rep = _zero_report()
    rep.epsilon = 0.05
    assert abs(bound_theorem4(rep).value - 0.02) < 1e-15  # 0.4 * eps
    with pytest.raises(InvalidParameterError):
        bound_theorem4(_zero_report(), None)


def test_theorem4_epsilon_minimizer_trivial():
    def estimate_at(eps):
        rep = _zero_report()
        rep.epsilon = eps
        return rep

    eps, br = minimize_theorem4_epsilon(estimate_at)
    assert eps == pytest.approx(1e-4)
    assert br.value == pytest.approx(0.4e-4)


@settings(max_examples=50, deadline=None)
@given(
    st.sampled_from(["r0_lower", "r1", "r2", "r3", "r4", "r5", "r4p", "r5p"]),
    st.floats(0.001, 2.0),
)
def test_theorem1_monotone_in_each_term(field, bump):
    rng = np.random.default_rng(0)
    base = _zero_report(**{f: float(v) for f, v in zip(
        ("r1", "r2", "r3", "r4", "r5", "r4p", "r5p"), rng.random(7))})
    b0 = bound_theorem1(base).value
    setattr(base, field, getattr(base, field) + bump)
    assert bound_theorem1(base).value >= b0 - 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 3.0), st.floats(0.0, 3.0), st.floats(0.001, 1.0))
def test_corollary1_monotone(a, b, bump):
    b0 = bound_corollary1(a, b).value
    assert bound_corollary1(a + bump, b).value >= b0
    assert bound_corollary1(a, b + bump).value >= b0


# ---------------------------------------------------------------------------
# Dominance over exact distances
# ---------------------------------------------------------------------------


def test_theorem1_dominates_exact_dw():
    for n in (2, 3):
        sampler = _deletion(n)
        rep = estimate_unconditional_terms(sampler)
        assert bound_theorem1(rep).value >= exact_dw(_enum_dist(sampler))


def test_theorem2_dominates_exact_dk():
    for n in (2, 3):
        sampler = _deletion(n)
        enum = sampler.enumerate()
        alpha = float(np.max(np.abs(enum.batch.g)))
        beta = float(np.max(np.abs(enum.batch.d)))
        trunc = TruncationParams(alpha, beta, beta, 0.0, 1.0)
        rep = estimate_unconditional_terms(sampler)
        estimate_truncated_terms(sampler, trunc, report=rep)
        br = bound_theorem2(rep, trunc)
        assert br.value >= exact_dk(_enum_dist(sampler))


def test_theorem3_dominates_exact_dk():
    cases = [_deletion(3), cpl.two_runs_coupling(8, 0.5)]
    for sampler in cases:
        rep = estimate_unconditional_terms(sampler)
        runner = ChunkedRunner(seed=77, chunk_size=2048)
        estimate_conditional_terms(sampler, 20_000, runner, rep)
        estimate_r7_r8(sampler, 10_000, runner, report=rep)
        br = bound_theorem3(rep)
        dk = exact_dk(_enum_dist(sampler))
        assert br.value + rep.ci.get("r7", 0) + rep.ci.get("r8", 0) >= dk


def test_theorem4_dominates_exact_dk_with_trivial_theta():
    sampler = _deletion(3)
    rep = estimate_unconditional_terms(sampler)
    best = None
    for eps in np.logspace(-3, 0, 10):
        estimate_r11_r12(sampler, ConditionalConcentration(eps), report=rep)
        val = bound_theorem4(rep, float(eps)).value
        best = val if best is None else min(best, val)
    assert best >= exact_dk(_enum_dist(sampler))


def test_theorem4_iid_recursive_example():
    # deletion coupling with W'' = W', theta bounded by eps + 2 kappa_{n-1}
    n = 15
    sampler = _deletion(n, w_dd="w_prime")
    sub = _deletion(n - 1)
    kappa_prev = exact_dk(_enum_dist(sub))
    eps = 0.4
    theta_cap = min(1.0, eps + 2 * kappa_prev)
    conc = ConditionalConcentration(eps, lambda b: np.full(len(b), theta_cap))
    rep = estimate_unconditional_terms(sampler)
    estimate_r11_r12(sampler, conc, report=rep)
    br = bound_theorem4(rep, eps)
    # gamma = E|X|^3 = 1 for Rademacher: paper-form caps on the error terms
    assert rep.r9 <= 6.0 / math.sqrt(n) + 1e-12
    assert rep.r10 <= 3.0 / math.sqrt(n) + 1e-12
    assert rep.r11 <= 2.0 * (eps + 2 * kappa_prev) / math.sqrt(n) + 1e-12
    assert rep.r12 <= (eps + 2 * kappa_prev) / math.sqrt(n) + 1e-12
    assert br.value >= exact_dk(_enum_dist(sampler))


# ---------------------------------------------------------------------------
# Application-specific bounds
# ---------------------------------------------------------------------------


def test_hoeffding_bound_values():
    assert hoeffding_bound(5, 0.0).value == 0.0
    val = hoeffding_bound(3, 1 / math.sqrt(2)).value
    assert abs(val - (448 * 3 * 2 ** -1.5 + 96 / math.sqrt(2))) < 1e-12
    assert abs(val - 543.0) < 0.1


def test_occupancy_bound_condition_cases():
    ok = occupancy_bound(10**5, math.sqrt(10**5), 1.0, 1.0, 10**3, 1e-5)
    assert ok.inputs["condition_ok"]
    lhs, mid, rhs = ok.inputs["condition"]
    assert abs(lhs - 1.1) < 1e-12 and abs(mid - 46.05) < 0.01 and abs(rhs - 223.6) < 0.1
    bad = occupancy_bound(10**3, math.sqrt(10**3), 1.0, 1.0, 10**2, 1e-3)
    assert not bad.inputs["condition_ok"]
    lhs, mid, rhs = bad.inputs["condition"]
    assert abs(mid - 27.63) < 0.01 and abs(rhs - 22.36) < 0.01


def test_occupancy_bound_value_spot_check():
    n = 100
    br = occupancy_bound(n, math.sqrt(n), 1.0, 1.0, 10, 1e-3)
    ln = math.log(n)
    expected = 409600 * n * ln**6 * 2 / n**1.5 + 3888 * ln**2 / n
    assert abs(br.value - expected) < 1e-9


def test_geometry_bound():
    assert geometry_bound(10, 1.0, 0.0, 1.0, 2).value == 0.0
    assert abs(min_geometry_radius(2) - math.pi**-0.5) < 1e-15
    with pytest.raises(InvalidParameterError):
        geometry_bound(10, 1.0, 1.0, 0.5, 2)
    br = geometry_bound(10, 2.0, 1.0, 1.0, 2, c_d=3.0)
    assert "modulo universal constant C_d" in br.flags
    assert abs(br.value - 3.0 * 10 / 8.0) < 1e-12


def test_graph_bound():
    assert abs(graph_log_gap(0.5) - 0.19314718055994532) < 1e-15
    br = graph_bound(2000, math.sqrt(32 * 2000), 0.5, 1.0, 1.0)
    assert br.inputs["condition_ok"]  # 4 ln 2000 > 0.193
    assert "modulo universal constant K" in br.flags
    with pytest.raises(InvalidParameterError):
        graph_bound(2000, 1.0, 1.5, 1.0, 1.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 2.0), st.floats(0.0, 1.0), st.floats(0.001, 1.0))
def test_theorem2_and_corollary5_monotone(alpha, beta, bump):
    trunc = TruncationParams(alpha, beta, beta, beta, 1.0)
    bigger = TruncationParams(alpha + bump, beta, beta, beta, 1.0)
    rep = _zero_report(e_abs_w=0.5)
    assert bound_theorem2(rep, bigger).value >= bound_theorem2(rep, trunc).value - 1e-12
    assert bound_corollary5(bigger).value >= bound_corollary5(trunc).value - 1e-12
    rep2 = _zero_report(e_abs_w=0.5, r6=0.1)
    assert bound_theorem2(rep2, trunc).value >= bound_theorem2(rep, trunc).value


@settings(max_examples=40, deadline=None)
@given(
    st.sampled_from(["r3_hat", "r4", "r5", "r7", "r8"]),
    st.floats(0.001, 2.0),
)
def test_theorem3_monotone(field, bump):
    rng = np.random.default_rng(1)
    base = _zero_report(
        e_abs_w=0.5,
        e_w1_sq=2.0,
        **{f: float(v) for f, v in zip(("r3_hat", "r4", "r5", "r7", "r8"), rng.random(5))},
    )
    b0 = bound_theorem3(base).value
    setattr(base, field, getattr(base, field) + bump)
    assert bound_theorem3(base).value >= b0 - 1e-12


@settings(max_examples=40, deadline=None)
@given(
    st.sampled_from(["r9", "r10", "r11", "r12"]),
    st.floats(0.001, 2.0),
)
def test_theorem4_monotone(field, bump):
    rng = np.random.default_rng(2)
    base = _zero_report(
        **{f: float(v) for f, v in zip(("r9", "r10", "r11", "r12"), rng.random(4))}
    )
    base.epsilon = 0.3
    b0 = bound_theorem4(base).value
    setattr(base, field, getattr(base, field) + bump)
    assert bound_theorem4(base).value >= b0 - 1e-12
