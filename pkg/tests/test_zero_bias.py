import math

import numpy as np
import pytest

from steincouplings import couplings as cpl
from steincouplings.core import (
    ChunkedRunner,
    CouplingSampler,
    InvalidParameterError,
    UnsupportedCouplingError,
    batch_from_arrays,
)
from steincouplings.metrics import normal_pdf
from steincouplings.zero_bias import (
    default_grid,
    density_to_csv,
    first_moment_probe,
    zero_bias_density,
    zero_bias_sampler,
)


def rademacher_pair_coupling():
    """W uniform +-1, W' an independent copy, G = (W'-W)/2."""

    def pair_batch(rng, size):
        w = np.where(rng.random(size) < 0.5, -1.0, 1.0)
        wp = np.where(rng.random(size) < 0.5, -1.0, 1.0)
        return w, wp

    def pair_enum():
        return [(0.25, a, b) for a in (-1.0, 1.0) for b in (-1.0, 1.0)]

    return cpl.exchangeable_pair_linear(
        cpl.ExchangeablePairSpec(None, 1.0, pair_enum, pair_batch)
    )


def test_rademacher_density_is_uniform():
    sampler = rademacher_pair_coupling()
    runner = ChunkedRunner(seed=42, chunk_size=1 << 15)
    dens = zero_bias_density(sampler, n_samples=200_000, runner=runner)
    inside = (dens.grid >= -1) & (dens.grid < 1)
    assert np.all(np.abs(dens.rho_hat[inside] - 0.5) <= 3 * dens.ci[inside] + 1e-12)
    assert np.all(dens.rho_hat[~inside] == 0.0)
    assert abs(dens.integral() - 1.0) <= 0.01
    assert not dens.degenerate


def test_density_grid_validation():
    sampler = rademacher_pair_coupling()
    with pytest.raises(InvalidParameterError):
        zero_bias_density(sampler, grid=np.array([0.0]), n_samples=10)
    with pytest.raises(InvalidParameterError):
        zero_bias_density(sampler, grid=np.array([1.0, 0.5]), n_samples=10)


class _Degenerate(CouplingSampler):
    def draw_batch(self, rng, size):
        w = np.where(rng.random(size) < 0.5, -1.0, 1.0)
        return batch_from_arrays(w, w.copy(), np.ones(size))

    def draw(self, rng):
        return self.draw_batch(rng, 1).row(0)


def test_degenerate_coupling_flagged():
    dens = zero_bias_density(_Degenerate(), n_samples=2000, runner=ChunkedRunner(seed=1))
    assert dens.degenerate
    assert np.all(dens.rho_hat == 0.0)
    with pytest.raises(InvalidParameterError):
        zero_bias_sampler(_Degenerate(), 100, np.random.default_rng(0))


def test_constant_weights_resample_uniformly():
    # deletion on +-1/sqrt(n): G D = n X_I^2 = 1 identically
    spec = cpl.IndependentSumSpec(4, cpl.rademacher_summand(4))
    sampler = cpl.indep_sum_deletion(spec)
    batch = sampler.draw_batch(np.random.default_rng(0), 1000)
    assert np.allclose(batch.g * batch.d, 1.0)
    zb = zero_bias_sampler(sampler, 5000, np.random.default_rng(1))
    assert zb.negative_weight_count == 0


def test_wz_law_for_rademacher_is_uniform():
    sampler = rademacher_pair_coupling()
    zb = zero_bias_sampler(sampler, 200_000, np.random.default_rng(7))
    x = np.sort(zb.values)
    n = x.size
    grid_cdf = np.clip((x + 1) / 2, 0.0, 1.0)
    dk = max(
        float(np.max(np.arange(1, n + 1) / n - grid_cdf)),
        float(np.max(grid_cdf - np.arange(0, n) / n)),
    )
    assert dk < 0.01


def test_eq72_probe_quadratic():
    probe = first_moment_probe(rademacher_pair_coupling(), 200_000, np.random.default_rng(3))
    assert probe["ok"]


def test_signed_weights_refused_with_count():
    class NegWeight(CouplingSampler):
        def draw_batch(self, rng, size):
            w = rng.standard_normal(size)
            return batch_from_arrays(w, w + 1.0, np.full(size, -1.0))

        def draw(self, rng):
            return self.draw_batch(rng, 1).row(0)

    with pytest.raises(UnsupportedCouplingError, match="negative"):
        zero_bias_sampler(NegWeight(), 100, np.random.default_rng(0))


def test_iid_sum_density_close_to_exact_zero_bias():
    # n = 30 Rademacher sum: rho_hat tracks the exact zero-bias density
    # rho(u) = E[W I[W > u]] of the enumerable scaled-binomial law, and is
    # within 0.05 of the standard normal density
    n = 30
    spec = cpl.IndependentSumSpec(n, cpl.rademacher_summand(n))
    sampler = cpl.indep_sum_deletion(spec)
    runner = ChunkedRunner(seed=11, chunk_size=1 << 15)
    grid = default_grid()
    dens = zero_bias_density(sampler, grid, n_samples=400_000, runner=runner)
    # exact W law: W = (2k - n)/sqrt(n), k ~ Bi(n, 1/2)
    ks = np.arange(n + 1)
    from math import comb

    probs = np.array([comb(n, int(k)) for k in ks], dtype=float) / 2.0**n
    w_vals = (2 * ks - n) / math.sqrt(n)
    rho_exact = np.array([np.sum(probs * w_vals * (w_vals > u)) for u in grid])
    assert float(np.max(np.abs(dens.rho_hat - rho_exact))) < 0.05
    assert float(np.max(np.abs(dens.rho_hat - normal_pdf(grid)))) < 0.05
    # for couplings with GD >= 0 the estimate stays above -3 CI pointwise
    assert np.all(dens.rho_hat >= -3 * dens.ci)
    assert abs(dens.integral() - 1.0) <= 0.01 + 3 * dens.integral_ci()


def test_density_csv_output(tmp_path):
    dens = zero_bias_density(
        rademacher_pair_coupling(), n_samples=5000, runner=ChunkedRunner(seed=2)
    )
    path = tmp_path / "rho.csv"
    density_to_csv(dens, str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "u,rho_hat,ci"
    assert len(lines) == dens.grid.size + 1
