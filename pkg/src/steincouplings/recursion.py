"""Solver for the inductive Kolmogorov-bound recursion.

The recursion bounds kappa_k (the Kolmogorov distance of the k-th statistic
in a sequence) through

    kappa_k <= A/sigma_k + 0.4*eps + (1/(eps*sigma_k)) * sum_l A_{k,l} kappa_l

for every eps > 0, with kappa_1 <= 1.  ``lemma1_solve`` evaluates the closed
form; ``recursion_iterate`` iterates the inequality numerically with the same
eps rule and serves as the independent oracle (the closed form dominates it).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import InvalidParameterError


@dataclass
class RecursionProblem:
    """(A, A_{k,l}, sigma_k) data; sigma_1 is fixed to 1 by convention."""

    n: int
    a_const: float
    a_kl: dict[tuple[int, int], float] = field(default_factory=dict)
    sigma: np.ndarray | None = None  # sigma[k-1] for k = 1..n; sigma[0] ignored -> 1

    def __post_init__(self):
        if self.n < 1:
            raise InvalidParameterError("n must be >= 1")
        if not (math.isfinite(self.a_const) and self.a_const >= 0):
            raise InvalidParameterError("A must be finite and >= 0")
        for (k, l), v in self.a_kl.items():
            if not (2 <= k <= self.n and 1 <= l < k):
                raise InvalidParameterError(f"A_{{k,l}} index ({k},{l}) out of range")
            if not (math.isfinite(v) and v >= 0):
                raise InvalidParameterError(f"A_{{{k},{l}}} = {v} must be >= 0")
        if self.sigma is None:
            self.sigma = np.sqrt(np.arange(1, self.n + 1, dtype=float))
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.sigma.shape != (self.n,):
            raise InvalidParameterError("sigma must have length n")
        if np.any(self.sigma[1:] <= 0):
            raise InvalidParameterError("sigma_k must be > 0")
        self.sigma = self.sigma.copy()
        self.sigma[0] = 1.0

    @classmethod
    def banded(cls, n: int, a_const: float, band_value: float, sigma=None) -> "RecursionProblem":
        """A_{k,k-1} = band_value, all other entries zero."""
        return cls(n, a_const, {(k, k - 1): band_value for k in range(2, n + 1)}, sigma)

    def alpha_n(self) -> float:
        best = 0.0
        for k in range(2, self.n + 1):
            tot = 0.0
            for (kk, l), v in self.a_kl.items():
                if kk == k:
                    tot += self.sigma[k - 1] / self.sigma[l - 1] * v
            best = max(best, tot)
        return best


def lemma1_solve(prob: RecursionProblem) -> dict:
    """Closed-form bound on kappa_n, plus the intermediate alpha quantities.

    With a_bar = max(A, 1), alpha_n = sup_k sum_l (sigma_k/sigma_l) A_{k,l}
    and alpha_n' = sqrt(2 alpha_n (2 alpha_n + 5 a_bar)), the bound is
    (5 a_bar + 2 alpha_n + alpha_n')(2 alpha_n + alpha_n')/(5 alpha_n' sigma_n).
    When the triangular array vanishes the recursion is trivial and the bound
    reduces to A/sigma_n (the eps term can be taken arbitrarily small).
    """
    alpha = prob.alpha_n()
    sig_n = prob.sigma[prob.n - 1]
    if alpha == 0.0:
        return {"kappa_n_bound": prob.a_const / sig_n, "alpha_n": 0.0, "alpha_n_prime": 0.0}
    a_bar = max(prob.a_const, 1.0)
    alpha_p = math.sqrt(2.0 * alpha * (2.0 * alpha + 5.0 * a_bar))
    bound = (5.0 * a_bar + 2.0 * alpha + alpha_p) * (2.0 * alpha + alpha_p) / (5.0 * alpha_p * sig_n)
    return {"kappa_n_bound": bound, "alpha_n": alpha, "alpha_n_prime": alpha_p}


def recursion_iterate(prob: RecursionProblem, epsilon_rule=None) -> np.ndarray:
    """Iterate the inequality directly; returns per-k upper bounds kappa_hat.

    The default eps rule is the one the closed form is derived with:
    eps_k = c_n * alpha_n / sigma_k, c_n = 1 + alpha_n'/(2 alpha_n).
    kappa_hat_1 = 1.
    """
    alpha = prob.alpha_n()
    out = np.empty(prob.n)
    out[0] = 1.0
    if epsilon_rule is None:
        if alpha == 0.0:
            def epsilon_rule(k, sigma_k):  # noqa: E306
                return 0.0
        else:
            a_bar = max(prob.a_const, 1.0)
            alpha_p = math.sqrt(2.0 * alpha * (2.0 * alpha + 5.0 * a_bar))
            c_n = 1.0 + alpha_p / (2.0 * alpha)

            def epsilon_rule(k, sigma_k):
                return c_n * alpha / sigma_k

    by_k: dict[int, list[tuple[int, float]]] = {}
    for (k, l), v in prob.a_kl.items():
        by_k.setdefault(k, []).append((l, v))
    for k in range(2, prob.n + 1):
        sig_k = prob.sigma[k - 1]
        eps = epsilon_rule(k, sig_k)
        rec = math.fsum(v * out[l - 1] for l, v in by_k.get(k, []))
        if rec == 0.0:
            out[k - 1] = prob.a_const / sig_k + 0.4 * eps
        else:
            if eps <= 0:
                raise InvalidParameterError("epsilon rule must be positive when A_{k,l} != 0")
            out[k - 1] = prob.a_const / sig_k + 0.4 * eps + rec / (eps * sig_k)
    return out


def iid_third_moment_problem(n: int, gamma: float = 1.0) -> RecursionProblem:
    """The standardized i.i.d.-sum recursion: A = 8*gamma, A_{k,k-1} = 5*gamma,
    sigma_k = sqrt(k).  Its closed-form solution is <= 25*gamma/sqrt(n)."""
    if gamma < 1.0:
        raise InvalidParameterError("gamma (third absolute moment) must be >= 1")
    return RecursionProblem.banded(n, 8.0 * gamma, 5.0 * gamma)
