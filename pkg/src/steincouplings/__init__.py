"""Stein-coupling simulation, error-term estimation and normal bounds."""

__version__ = "0.1.0"

from .core import (
    ChunkedRunner,
    CouplingSample,
    CouplingSampler,
    DataError,
    InvalidParameterError,
    SampleBatch,
    TestFunctionFamily,
    TruncationParams,
    UnsupportedCouplingError,
    default_family,
    make_sample,
    moment_probe,
    standardize,
    stein_residual,
)
from .metrics import (
    DiscreteDistribution,
    DistanceEstimate,
    chernoff_check,
    dk_from_dw,
    empirical_dk,
    empirical_dw,
    exact_dk,
    exact_dw,
    lemma8_bound,
)
from .recursion import RecursionProblem, lemma1_solve, recursion_iterate
