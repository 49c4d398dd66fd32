"""Coupling abstraction, sample records, probes and the deterministic runner.

A coupling here is a joint draw of six scalars (W, W', G, W'', Dtilde, S)
whose defining property is the identity E{G f(W') - G f(W)} = E{W f(W)} for
admissible test functions f.  The auxiliary fields default to W'' = W,
Dtilde = W' - W and S = 1, and the derived differences are D = W' - W and
D' = W'' - W.  Samplers are immutable descriptions; all randomness comes
from externally supplied NumPy generators, so N workers can each own an
independent seeded sub-stream (see :class:`ChunkedRunner`).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

Z99 = 2.5758293035489004  # two-sided 99% normal quantile

ENUMERATION_LIMIT = 10**6

WORKERS_ENV = "STEINCOUPLINGS_WORKERS"


class InvalidParameterError(ValueError):
    """Inputs violate an operation's contract."""


class DataError(ValueError):
    """Sample data is unusable (non-finite values, empty input)."""


class UnsupportedCouplingError(TypeError):
    """The coupling does not expose the capability an estimator needs."""


# ---------------------------------------------------------------------------
# Sample records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CouplingSample:
    """One realization of (W, W', G, W'', Dtilde, S)."""

    w: float
    w_prime: float
    g: float
    w_dd: float
    d_tilde: float
    s: float = 1.0

    @property
    def d(self) -> float:
        return self.w_prime - self.w

    @property
    def d_prime(self) -> float:
        return self.w_dd - self.w


def make_sample(
    w: float,
    w_prime: float,
    g: float,
    w_dd: float | None = None,
    d_tilde: float | None = None,
    s: float = 1.0,
) -> CouplingSample:
    """Build a sample, filling the first-reading defaults W''=W, Dt=D, S=1."""
    if w_dd is None:
        w_dd = w
    if d_tilde is None:
        d_tilde = w_prime - w
    smp = CouplingSample(float(w), float(w_prime), float(g), float(w_dd), float(d_tilde), float(s))
    for v in (smp.w, smp.w_prime, smp.g, smp.w_dd, smp.d_tilde, smp.s):
        if not math.isfinite(v):
            raise DataError(f"non-finite coupling sample field: {smp}")
    return smp


@dataclass
class SampleBatch:
    """Column-wise batch of coupling samples (one NumPy array per field)."""

    w: np.ndarray
    w_prime: np.ndarray
    g: np.ndarray
    w_dd: np.ndarray
    d_tilde: np.ndarray
    s: np.ndarray

    @property
    def d(self) -> np.ndarray:
        return self.w_prime - self.w

    @property
    def d_prime(self) -> np.ndarray:
        return self.w_dd - self.w

    def __len__(self) -> int:
        return int(self.w.shape[0])

    def validate_finite(self) -> None:
        for name in ("w", "w_prime", "g", "w_dd", "d_tilde", "s"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DataError(f"non-finite values in batch field {name!r}")

    def row(self, i: int) -> CouplingSample:
        return CouplingSample(
            float(self.w[i]),
            float(self.w_prime[i]),
            float(self.g[i]),
            float(self.w_dd[i]),
            float(self.d_tilde[i]),
            float(self.s[i]),
        )


def batch_from_arrays(
    w,
    w_prime,
    g,
    w_dd=None,
    d_tilde=None,
    s=None,
) -> SampleBatch:
    w = np.asarray(w, dtype=float)
    w_prime = np.asarray(w_prime, dtype=float)
    g = np.asarray(g, dtype=float)
    w_dd = w.copy() if w_dd is None else np.asarray(w_dd, dtype=float)
    d_tilde = (w_prime - w) if d_tilde is None else np.asarray(d_tilde, dtype=float)
    s = np.ones_like(w) if s is None else np.asarray(s, dtype=float)
    return SampleBatch(w, w_prime, g, w_dd, d_tilde, s)


@dataclass
class EnumeratedOutcomes:
    """Exhaustive outcome space: probabilities plus the aligned batch."""

    probs: np.ndarray
    batch: SampleBatch

    def __post_init__(self) -> None:
        tot = math.fsum(self.probs.tolist())
        if abs(tot - 1.0) > 1e-12:
            raise InvalidParameterError(f"enumeration probabilities sum to {tot!r}, not 1")
        if np.any(self.probs < -1e-15):
            raise InvalidParameterError("negative enumeration probability")

    def __len__(self) -> int:
        return int(self.probs.shape[0])

    def pairs(self) -> Iterator[tuple[float, CouplingSample]]:
        for i in range(len(self)):
            yield float(self.probs[i]), self.batch.row(i)

    def expectation(self, values: np.ndarray) -> float:
        """Exact expectation of per-outcome values (compensated summation)."""
        return math.fsum((self.probs * np.asarray(values, dtype=float)).tolist())


# ---------------------------------------------------------------------------
# Sampler interface
# ---------------------------------------------------------------------------


class CouplingSampler:
    """Base class for coupling constructions.

    Subclasses implement ``draw`` and may override ``draw_batch`` with a
    vectorized version, ``enumerate`` when the outcome space is finite and
    small, and the conditional hooks used by the error-term estimators.
    Instances are immutable after construction and ``draw`` is re-entrant
    given distinct RNG streams.
    """

    name: str = "coupling"
    #: True/False when the W' marginal provably equals/differs from W's.
    marginals_equal: bool | None = None
    #: Exchangeability of (W, W'); None when unknown. Never asserted blindly.
    pair_exchangeable: bool | None = None
    #: Set False for deliberate approximate couplings (nonzero residual).
    exact: bool = True

    def draw(self, rng: np.random.Generator) -> CouplingSample:
        raise NotImplementedError

    def draw_batch(self, rng: np.random.Generator, size: int) -> SampleBatch:
        samples = [self.draw(rng) for _ in range(size)]
        return SampleBatch(
            np.array([s.w for s in samples]),
            np.array([s.w_prime for s in samples]),
            np.array([s.g for s in samples]),
            np.array([s.w_dd for s in samples]),
            np.array([s.d_tilde for s in samples]),
            np.array([s.s for s in samples]),
        )

    def enumerate(self) -> EnumeratedOutcomes | None:
        """Full outcome space, or None when unsupported.

        Implementations must raise InvalidParameterError instead of building
        more than ENUMERATION_LIMIT outcomes.
        """
        return None

    def conditional_gd(self, rng: np.random.Generator) -> float | None:
        """E(G D | configuration): exact average over the randomization index."""
        return None

    def conditional_gd_batch(self, rng: np.random.Generator, size: int) -> np.ndarray | None:
        first = self.conditional_gd(rng)
        if first is None:
            return None
        out = np.empty(size)
        out[0] = first
        for i in range(1, size):
            out[i] = self.conditional_gd(rng)  # type: ignore[assignment]
        return out

    def conditional_gdtilde_s(self, rng: np.random.Generator) -> tuple[float, float] | None:
        """(E(G Dt | configuration), E(S | configuration)), when available."""
        return None

    def component_draw(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray] | None:
        """Per-index arrays (Y_i, D_i) with G = n Y_I, D = D_I, when available."""
        return None


def check_enumeration_size(count: int) -> None:
    if count > ENUMERATION_LIMIT:
        raise InvalidParameterError(
            f"enumeration would produce {count} outcomes (limit {ENUMERATION_LIMIT})"
        )


def try_enumerate(sampler: CouplingSampler) -> EnumeratedOutcomes | None:
    """enumerate(), or None when unsupported or over the outcome cap."""
    try:
        return sampler.enumerate()
    except InvalidParameterError:
        return None


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------


def standardize(raw_mean: float, raw_sd: float, raw: CouplingSample) -> CouplingSample:
    """Affine standardization (x - mu)/sigma of location fields; G, Dt scale by 1/sigma.

    S is left unchanged; couplings that carry a non-trivial S are expected to
    build it on the standardized scale.
    """
    if raw_sd <= 0:
        raise InvalidParameterError(f"raw_sd must be > 0, got {raw_sd}")
    mu, sd = float(raw_mean), float(raw_sd)
    return CouplingSample(
        (raw.w - mu) / sd,
        (raw.w_prime - mu) / sd,
        raw.g / sd,
        (raw.w_dd - mu) / sd,
        raw.d_tilde / sd,
        raw.s,
    )


def standardize_batch(raw_mean: float, raw_sd: float, batch: SampleBatch) -> SampleBatch:
    if raw_sd <= 0:
        raise InvalidParameterError(f"raw_sd must be > 0, got {raw_sd}")
    mu, sd = float(raw_mean), float(raw_sd)
    return SampleBatch(
        (batch.w - mu) / sd,
        (batch.w_prime - mu) / sd,
        batch.g / sd,
        (batch.w_dd - mu) / sd,
        batch.d_tilde / sd,
        batch.s.copy(),
    )


class StandardizedSampler(CouplingSampler):
    """Wrap a sampler, applying ``standardize`` to every draw and hook."""

    def __init__(self, base: CouplingSampler, raw_mean: float, raw_sd: float):
        if raw_sd <= 0:
            raise InvalidParameterError(f"raw_sd must be > 0, got {raw_sd}")
        self.base = base
        self.raw_mean = float(raw_mean)
        self.raw_sd = float(raw_sd)
        self.name = base.name + "_standardized"
        self.marginals_equal = base.marginals_equal
        self.pair_exchangeable = base.pair_exchangeable
        self.exact = base.exact

    def draw(self, rng):
        return standardize(self.raw_mean, self.raw_sd, self.base.draw(rng))

    def draw_batch(self, rng, size):
        return standardize_batch(self.raw_mean, self.raw_sd, self.base.draw_batch(rng, size))

    def enumerate(self):
        enum = self.base.enumerate()
        if enum is None:
            return None
        return EnumeratedOutcomes(
            enum.probs, standardize_batch(self.raw_mean, self.raw_sd, enum.batch)
        )

    def conditional_gd(self, rng):
        val = self.base.conditional_gd(rng)
        return None if val is None else val / self.raw_sd**2

    def conditional_gd_batch(self, rng, size):
        vals = self.base.conditional_gd_batch(rng, size)
        return None if vals is None else vals / self.raw_sd**2

    def conditional_gdtilde_s(self, rng):
        val = self.base.conditional_gdtilde_s(rng)
        if val is None:
            return None
        return val[0] / self.raw_sd**2, val[1]

    def component_draw(self, rng):
        val = self.base.component_draw(rng)
        if val is None:
            return None
        y, d = val
        return y / self.raw_sd, d / self.raw_sd


# ---------------------------------------------------------------------------
# Truncation constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TruncationParams:
    """Non-negative truncation levels (alpha, beta, beta_tilde, beta_prime, gamma)."""

    alpha: float
    beta: float
    beta_tilde: float
    beta_prime: float
    gamma: float

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "beta_tilde", "beta_prime", "gamma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise InvalidParameterError(f"truncation parameter {name}={v} must be >= 0")


# ---------------------------------------------------------------------------
# Test function family
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    #: probes are the unnormalized f=1 and f=x diagnostics
    is_probe: bool = False
    #: whether this member counts toward the r0 lower bound (needs sup|f|<=1, Lip<=1)
    admissible: bool = True

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=float))


def _smoothed_indicator(x):
    return np.clip(0.5 - x, 0.0, 1.0)


def default_family() -> "TestFunctionFamily":
    """Constants, identity, scaled sinusoids and a smoothed half-line indicator.

    The sup over all bounded-Lipschitz f is not computable; this finite family
    yields a reported lower bound for the worst residual.  For exact couplings
    the residual vanishes identically, so the family acts as a falsifier.
    """
    members = [
        TestFunction("const_1", lambda x: np.ones_like(x), is_probe=True, admissible=True),
        TestFunction("identity", lambda x: x, is_probe=True, admissible=False),
    ]
    for k in (1, 2, 4, 8):
        for phase, tag in ((0.0, "0"), (math.pi / 2, "pi2")):
            members.append(
                TestFunction(
                    f"sin_k{k}_{tag}",
                    (lambda k=k, phase=phase: lambda x: np.sin(k * x + phase) / max(1.0, k))(),
                )
            )
    members.append(TestFunction("smoothed_indicator", _smoothed_indicator))
    return TestFunctionFamily(tuple(members))


@dataclass(frozen=True)
class TestFunctionFamily:
    members: tuple[TestFunction, ...]

    def __iter__(self) -> Iterator[TestFunction]:
        return iter(self.members)

    def check_admissible(self, lo: float = -10.0, hi: float = 10.0, n_grid: int = 4001) -> None:
        """Grid check: each non-probe member has sup|f| <= 1 and Lipschitz <= 1."""
        x = np.linspace(lo, hi, n_grid)
        dx = x[1] - x[0]
        for m in self.members:
            if m.is_probe:
                continue
            y = m(x)
            if np.max(np.abs(y)) > 1.0 + 1e-12:
                raise InvalidParameterError(f"family member {m.name} exceeds sup-norm 1")
            if np.max(np.abs(np.diff(y))) > dx * (1.0 + 1e-9):
                raise InvalidParameterError(f"family member {m.name} exceeds Lipschitz 1")


# ---------------------------------------------------------------------------
# Deterministic chunked Monte Carlo
# ---------------------------------------------------------------------------


def worker_count() -> int:
    env = os.environ.get(WORKERS_ENV, "")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass
class ChunkedRunner:
    """Deterministic map-reduce over chunk-keyed RNG streams.

    Chunk c draws from Philox seeded by SeedSequence(seed).spawn()[c], and
    per-chunk partial results are merged in chunk order, so the output is
    bit-identical for a fixed (seed, chunk_size) regardless of worker count.
    """

    seed: int
    chunk_size: int = 1 << 14
    workers: int | None = None

    def chunk_rngs(self, n_chunks: int) -> list[np.random.Generator]:
        root = np.random.SeedSequence(self.seed)
        return [np.random.Generator(np.random.Philox(child)) for child in root.spawn(n_chunks)]

    def map_chunks(self, fn: Callable[[np.random.Generator, int], object], n_total: int) -> list:
        """Apply fn(rng, chunk_len) per chunk; results returned in chunk order."""
        if n_total < 1:
            raise InvalidParameterError("n_total must be >= 1")
        sizes = []
        left = n_total
        while left > 0:
            take = min(self.chunk_size, left)
            sizes.append(take)
            left -= take
        rngs = self.chunk_rngs(len(sizes))
        nw = self.workers if self.workers is not None else worker_count()
        if nw <= 1 or len(sizes) == 1:
            return [fn(rngs[i], sizes[i]) for i in range(len(sizes))]
        out: list = [None] * len(sizes)
        with ThreadPoolExecutor(max_workers=nw) as pool:
            futures = {pool.submit(fn, rngs[i], sizes[i]): i for i in range(len(sizes))}
            for fut, i in futures.items():
                out[i] = fut.result()
        return out


@dataclass(frozen=True)
class MeanCI:
    """Normal-theory mean estimate: approximate CI from the sample variance."""

    mean: float
    halfwidth: float
    n: int

    def contains(self, x: float) -> bool:
        return abs(self.mean - x) <= self.halfwidth


def _merge_mean_ci(partials: Sequence[tuple[float, float, int]], level_z: float) -> MeanCI:
    n = sum(p[2] for p in partials)
    total = math.fsum(p[0] for p in partials)
    total_sq = math.fsum(p[1] for p in partials)
    mean = total / n
    var = max(0.0, total_sq / n - mean * mean)
    hw = level_z * math.sqrt(var / n) if n > 1 else math.inf
    return MeanCI(mean, hw, n)


def mc_means(
    value_fns: dict[str, Callable[[SampleBatch], np.ndarray]],
    sampler: CouplingSampler,
    n_samples: int,
    runner: ChunkedRunner,
    level_z: float = Z99,
) -> dict[str, MeanCI]:
    """Chunked MC estimates of several per-sample statistics in one pass.

    All statistics are evaluated on the same sample stream; merge order is
    fixed by chunk index, so results are bit-identical for a given
    (seed, chunk_size) whatever the worker count.
    """
    keys = list(value_fns)

    def one_chunk(rng, size):
        batch = sampler.draw_batch(rng, size)
        batch.validate_finite()
        out = {}
        for k in keys:
            vals = np.asarray(value_fns[k](batch), dtype=float)
            if not np.all(np.isfinite(vals)):
                raise DataError(f"non-finite statistic values for {k!r}")
            out[k] = (math.fsum(vals.tolist()), math.fsum((vals * vals).tolist()), size)
        return out

    chunks = runner.map_chunks(one_chunk, n_samples)
    return {k: _merge_mean_ci([c[k] for c in chunks], level_z) for k in keys}


def mc_mean(
    value_fn: Callable[[SampleBatch], np.ndarray],
    sampler: CouplingSampler,
    n_samples: int,
    runner: ChunkedRunner,
    level_z: float = Z99,
) -> MeanCI:
    """Chunked MC estimate of E[value_fn(sample)] with a normal-theory CI."""
    return mc_means({"v": value_fn}, sampler, n_samples, runner, level_z)["v"]


# ---------------------------------------------------------------------------
# Residual and moment probes
# ---------------------------------------------------------------------------


@dataclass
class ResidualReport:
    """Per-function residuals E[G f(W') - G f(W) - W f(W)]."""

    names: list[str]
    estimates: list[float]
    halfwidths: list[float]
    exact: bool
    n_samples: int

    @property
    def r0_lower(self) -> float:
        """Max |residual| over the admissible members: a lower bound for the
        worst-case residual over all bounded-Lipschitz test functions."""
        vals = [
            abs(e)
            for e, name in zip(self.estimates, self.names)
            if name in self._admissible_names
        ]
        return max(vals) if vals else 0.0

    _admissible_names: set = field(default_factory=set)

    def by_name(self, name: str) -> tuple[float, float]:
        i = self.names.index(name)
        return self.estimates[i], self.halfwidths[i]

    @property
    def max_abs(self) -> float:
        return max(abs(e) for e in self.estimates)


def _residual_values(batch: SampleBatch, f: TestFunction) -> np.ndarray:
    return batch.g * f(batch.w_prime) - batch.g * f(batch.w) - batch.w * f(batch.w)


def stein_residual(
    sampler: CouplingSampler,
    family: TestFunctionFamily | None = None,
    n_samples: int | None = None,
    runner: ChunkedRunner | None = None,
) -> ResidualReport:
    """Residual of the coupling identity for each family member.

    With an enumerable sampler and ``n_samples=None`` the residuals are exact
    (compensated summation over the full outcome space); otherwise they are
    chunked MC means with 99% normal-theory CIs.
    """
    family = family or default_family()
    enum = sampler.enumerate() if n_samples is None else None
    names = [m.name for m in family]
    admissible = {m.name for m in family if m.admissible}
    if enum is not None:
        enum.batch.validate_finite()
        est = [enum.expectation(_residual_values(enum.batch, m)) for m in family]
        rep = ResidualReport(names, est, [0.0] * len(est), True, len(enum))
    else:
        if n_samples is None or n_samples < 1:
            raise InvalidParameterError("n_samples >= 1 required without enumerate()")
        runner = runner or ChunkedRunner(seed=0)
        fns = {m.name: (lambda b, m=m: _residual_values(b, m)) for m in family}
        cis = mc_means(fns, sampler, n_samples, runner)
        est = [cis[n].mean for n in names]
        hws = [cis[n].halfwidth for n in names]
        rep = ResidualReport(names, est, hws, False, n_samples)
    rep._admissible_names = admissible
    return rep


@dataclass
class MomentReport:
    e_w: MeanCI
    var_w: float
    e_gd: MeanCI
    e_abs_w: MeanCI
    e_w1_sq: MeanCI  # E (|W|+1)^2
    exact: bool

    def remark1_ok(self, slack: float = 0.0) -> bool:
        """E W = 0 and E(GD) = Var W, within CIs (exactly when enumerated)."""
        if self.exact:
            return abs(self.e_w.mean) <= 1e-12 + slack and abs(
                self.e_gd.mean - self.var_w
            ) <= 1e-12 + slack
        ok_mean = abs(self.e_w.mean) <= self.e_w.halfwidth + slack
        # conservative combined halfwidth for E(GD) - Var W
        hw = self.e_gd.halfwidth + 2.0 * self.e_w1_sq.halfwidth + self.e_w.halfwidth
        return ok_mean and abs(self.e_gd.mean - self.var_w) <= hw + slack


def moment_probe(
    sampler: CouplingSampler,
    n_samples: int | None = None,
    runner: ChunkedRunner | None = None,
) -> MomentReport:
    """E W, Var W, E(GD), E|W| and E(|W|+1)^2; exact under enumeration."""
    enum = sampler.enumerate() if n_samples is None else None
    if enum is not None:
        b = enum.batch
        e_w = enum.expectation(b.w)
        e_w2 = enum.expectation(b.w**2)
        var_w = e_w2 - e_w**2
        e_gd = enum.expectation(b.g * b.d)
        e_abs = enum.expectation(np.abs(b.w))
        e_w1 = enum.expectation((np.abs(b.w) + 1.0) ** 2)
        z = [MeanCI(v, 0.0, len(enum)) for v in (e_w, e_gd, e_abs, e_w1)]
        return MomentReport(z[0], var_w, z[1], z[2], z[3], True)
    if n_samples is None or n_samples < 2:
        raise InvalidParameterError("n_samples >= 2 required without enumerate()")
    runner = runner or ChunkedRunner(seed=0)
    cis = mc_means(
        {
            "w": lambda b: b.w,
            "w2": lambda b: b.w**2,
            "gd": lambda b: b.g * b.d,
            "abs_w": lambda b: np.abs(b.w),
            "w1_sq": lambda b: (np.abs(b.w) + 1.0) ** 2,
        },
        sampler,
        n_samples,
        runner,
    )
    var_w = max(0.0, cis["w2"].mean - cis["w"].mean ** 2)
    return MomentReport(cis["w"], var_w, cis["gd"], cis["abs_w"], cis["w1_sq"], False)
