"""Count-distribution primitives for claim-frequency modeling.

Log-pmfs, means and variances for the four kernels used throughout the
package:

* Poisson with mean ``lam`` (equidispersed baseline),
* NB2: gamma-mixed Poisson with shape/rate ``1/tau`` heterogeneity,
  so ``Var = lam * (1 + tau * lam)``,
* NB1: negative binomial with shape ``lam/tau``, giving the GLM-style
  overdispersion ``Var = (1 + tau) * lam``,
* NBB: negative binomial whose success probability is Beta(a, b) mixed,
  the kernel of beta-random-effect panel models.

All pmfs are evaluated in log space via ``scipy.special.gammaln`` and are
finite for counts up to 1e4 and means up to 1e3.  Functions accept scalars
or numpy arrays (broadcasting applies); scalar inputs return floats.
Arguments are validated on entry; the estimation hot loops in
:mod:`claimscore.estimate` use their own fused expressions and are tested
against these reference implementations.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln

__all__ = [
    "poisson_logpmf",
    "nb2_logpmf",
    "nb1_logpmf",
    "nbb_logpmf",
    "poisson_gamma_logpmf",
    "count_logpmf",
    "nb2_variance",
    "nb1_variance",
    "nbb_mean",
    "nbb_variance",
    "pmf_mass",
    "pmf_moment",
    "COUNT_FAMILIES",
]

COUNT_FAMILIES = ("poisson", "nb1", "nb2")


class DomainError(ValueError):
    """Raised when a distribution argument is outside its domain."""


def _as_float(x, name, positive=False, minimum=None):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    if positive and not np.all(arr > 0):
        raise DomainError(f"{name} must be > 0")
    if minimum is not None and not np.all(arr > minimum):
        raise DomainError(f"{name} must be > {minimum}")
    return arr


def _as_count(n):
    arr = np.asarray(n)
    if not np.issubdtype(arr.dtype, np.number):
        raise DomainError("counts must be numeric")
    if np.any(arr < 0) or np.any(arr != np.floor(arr)):
        raise DomainError("counts must be non-negative integers")
    return arr.astype(float)


def _ret(value):
    # scalar in, scalar out
    if np.ndim(value) == 0:
        return float(value)
    return value


def poisson_logpmf(n, lam):
    """log Pr(N = n) for N ~ Poisson(lam)."""
    n = _as_count(n)
    lam = _as_float(lam, "lam", positive=True)
    return _ret(n * np.log(lam) - lam - gammaln(n + 1.0))


def poisson_gamma_logpmf(n, lam, shape, rate):
    """log-pmf of a Poisson(lam * theta) count with theta ~ Gamma(shape, rate).

    This is the negative-binomial form shared by the first-contract and
    predictive distributions of gamma-random-effect panel models:

        Pr(N = n) = G(n + shape) / (G(n+1) G(shape))
                    * (lam / (rate + lam))^n * (rate / (rate + lam))^shape.
    """
    n = _as_count(n)
    lam = _as_float(lam, "lam", positive=True)
    shape = _as_float(shape, "shape", positive=True)
    rate = _as_float(rate, "rate", positive=True)
    denom = np.log(rate + lam)
    return _ret(
        gammaln(n + shape)
        - gammaln(n + 1.0)
        - gammaln(shape)
        + n * (np.log(lam) - denom)
        + shape * (np.log(rate) - denom)
    )


def nb2_logpmf(n, lam, tau):
    """log-pmf of the NB2 count: gamma-mixed Poisson with Var(theta) = tau.

    Mean ``lam``, variance ``lam * (1 + tau * lam)``.
    """
    tau = _as_float(tau, "tau", positive=True)
    inv = 1.0 / tau
    return poisson_gamma_logpmf(n, lam, inv, inv)


def nb1_logpmf(n, lam, tau):
    """log-pmf of the NB1 count: shape lam/tau, so Var = (1 + tau) * lam."""
    n = _as_count(n)
    lam = _as_float(lam, "lam", positive=True)
    tau = _as_float(tau, "tau", positive=True)
    shape = lam / tau
    return _ret(
        gammaln(n + shape)
        - gammaln(n + 1.0)
        - gammaln(shape)
        - shape * np.log1p(tau)
        - n * np.log1p(1.0 / tau)
    )


def nbb_logpmf(n, lam, alpha, gamma):
    """log-pmf of the beta-mixed negative binomial (NBB) kernel.

    ``alpha`` and ``gamma`` are the Beta parameters of the success
    probability; for a single contract they are the population shapes
    (a, b), for panel predictives they are the updated state.

        Pr(N = n) = [G(alpha+gamma) G(alpha+lam) G(gamma+n)
                     / (G(alpha) G(gamma) G(alpha+gamma+lam+n))]
                    * G(lam+n) / (G(lam) G(n+1)).
    """
    n = _as_count(n)
    lam = _as_float(lam, "lam", positive=True)
    alpha = _as_float(alpha, "alpha", positive=True)
    gamma = _as_float(gamma, "gamma", positive=True)
    return _ret(
        gammaln(alpha + gamma)
        + gammaln(alpha + lam)
        + gammaln(gamma + n)
        - gammaln(alpha)
        - gammaln(gamma)
        - gammaln(alpha + gamma + lam + n)
        + gammaln(lam + n)
        - gammaln(lam)
        - gammaln(n + 1.0)
    )


def count_logpmf(n, mean, family, dispersion=None):
    """Dispatch to the Poisson / NB1 / NB2 log-pmf by family tag."""
    if family == "poisson":
        return poisson_logpmf(n, mean)
    if family == "nb1":
        if dispersion is None:
            raise DomainError("nb1 requires a dispersion parameter")
        return nb1_logpmf(n, mean, dispersion)
    if family == "nb2":
        if dispersion is None:
            raise DomainError("nb2 requires a dispersion parameter")
        return nb2_logpmf(n, mean, dispersion)
    raise DomainError(f"unknown count family {family!r}")


def nb2_variance(lam, tau):
    """Variance of the NB2 count, lam * (1 + tau * lam)."""
    return lam * (1.0 + tau * lam)


def nb1_variance(lam, tau):
    """Variance of the NB1 count, (1 + tau) * lam."""
    return (1.0 + tau) * lam


def nbb_mean(lam, a, b):
    """Mean of the NBB count, lam * b / (a - 1).  Requires a > 1."""
    a = _as_float(a, "a", minimum=1.0)
    return _ret(lam * b / (a - 1.0))


def nbb_variance(lam, a, b):
    """Variance of the NBB count.  Requires a > 2."""
    a = _as_float(a, "a", minimum=2.0)
    linear = lam * (a + b - 1.0) * b / ((a - 1.0) * (a - 2.0))
    quad = lam * lam * ((b + 1.0) * b / ((a - 1.0) * (a - 2.0)) - (b / (a - 1.0)) ** 2)
    return _ret(linear + quad)


def _adaptive_terms(logpmf, tol, weight):
    """Sum weight(n) * pmf(n) in blocks until the tail is negligible.

    Stops once a block past the running mode contributes less than
    ``tol / 10`` and the block sums are decreasing (NBB tails are power
    laws, so a fixed cutoff would be wrong for small shape parameters).
    """
    total = 0.0
    block = 256
    start = 0
    prev = math.inf
    peak = 0.0
    while start < 2_000_000:
        n = np.arange(start, start + block)
        contrib = weight(n) * np.exp(logpmf(n))
        s = float(contrib.sum())
        total += s
        # only stop once past the peak block, so large-mean pmfs whose
        # mass sits far from zero are not cut off early
        if s < tol / 10.0 and s <= prev and s < peak:
            return total
        prev = s
        peak = max(peak, s)
        start += block
    raise DomainError(f"tail did not fall below {tol:g} within 2e6 terms")


def pmf_mass(logpmf, tol=1e-10):
    """Total probability mass of a log-pmf over n = 0, 1, 2, ...

    ``logpmf`` maps an integer array to log-probabilities.  Truncation is
    adaptive with tail bound below ``tol / 10``.
    """
    return _adaptive_terms(logpmf, tol, lambda n: 1.0)


def pmf_moment(logpmf, order=1, tol=1e-10):
    """Raw moment of a log-pmf over n = 0, 1, 2, ... (adaptive truncation)."""
    return _adaptive_terms(logpmf, tol, lambda n: n.astype(float) ** order)
