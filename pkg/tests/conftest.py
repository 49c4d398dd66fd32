import collections

import pytest

from steincouplings.core import ChunkedRunner


@pytest.fixture
def runner():
    def make(seed, chunk_size=8192, workers=None):
        return ChunkedRunner(seed=seed, chunk_size=chunk_size, workers=workers)

    return make


def joint_factorization_error(enum, key_a, key_b, digits=10):
    """Max |P(A,B) - P(A)P(B)| over the joint law of two enumerated statistics."""
    joint = collections.defaultdict(float)
    pa = collections.defaultdict(float)
    pb = collections.defaultdict(float)
    for p, smp in enum.pairs():
        ka = round(key_a(smp), digits)
        kb = round(key_b(smp), digits)
        joint[(ka, kb)] += p
        pa[ka] += p
        pb[kb] += p
    return max(abs(joint.get((ka, kb), 0.0) - pa[ka] * pb[kb]) for ka in pa for kb in pb)


def enumerated_law(enum, value_fn, digits=12):
    """Collapse an enumeration to the exact law of a statistic."""
    law = collections.defaultdict(float)
    for p, smp in enum.pairs():
        law[round(value_fn(smp), digits)] += p
    return dict(law)


def laws_equal(law_a, law_b, tol=1e-12):
    keys = set(law_a) | set(law_b)
    return all(abs(law_a.get(k, 0.0) - law_b.get(k, 0.0)) <= tol for k in keys)


def assert_exact_stein(sampler, tol=1e-12):
    from steincouplings.core import default_family, stein_residual

    rep = stein_residual(sampler, default_family())
    assert rep.exact
    assert rep.max_abs < tol, f"{sampler.name}: residual {rep.max_abs}"
    return rep
