"""Independent numerical oracles used across the test suite.

Everything here deliberately avoids the code paths under test: joint
likelihoods are integrated with adaptive quadrature over the mixing
distribution, closed-form joints are written from the integrated-out
algebra rather than the sequential-predictive recursion, and scale-path
probabilities are obtained by exhaustive enumeration of count paths.
"""

import math
from collections import defaultdict

import numpy as np
from scipy.integrate import quad
from scipy.special import gammaln

from claimscore.bms import next_level, relativity
from claimscore.distributions import count_logpmf


def mvnb_quad_loglik(counts, lambdas, kappa):
    """log of the gamma-mixture integral of independent Poisson counts."""

    const = sum(n * math.log(lam) - gammaln(n + 1) for n, lam in zip(counts, lambdas))
    total_n = sum(counts)
    total_lam = sum(lambdas)

    def integrand(theta):
        if theta <= 0:
            return 0.0
        logp = (
            (kappa + total_n - 1.0) * math.log(theta)
            - (kappa + total_lam) * theta
            + kappa * math.log(kappa)
            - gammaln(kappa)
        )
        return math.exp(logp)

    value, _ = quad(integrand, 0.0, np.inf, epsabs=1e-12, epsrel=1e-11, limit=400)
    return const + math.log(value)


def nbb_quad_loglik(counts, lambdas, a, b):
    """log of the beta-mixture integral of negative-binomial counts."""

    const = sum(
        gammaln(lam + n) - gammaln(lam) - gammaln(n + 1)
        for n, lam in zip(counts, lambdas)
    )
    total_n = sum(counts)
    total_lam = sum(lambdas)
    log_beta = gammaln(a) + gammaln(b) - gammaln(a + b)

    def integrand(p):
        if p <= 0.0 or p >= 1.0:
            return 0.0
        logp = (
            (a + total_lam - 1.0) * math.log(p)
            + (b + total_n - 1.0) * math.log1p(-p)
            - log_beta
        )
        return math.exp(logp)

    value, _ = quad(integrand, 0.0, 1.0, epsabs=1e-12, epsrel=1e-11, limit=400)
    return const + math.log(value)


def mvnb_closed_loglik(counts, lambdas, kappa):
    """Integrated-out closed form of the gamma random-effect joint pmf."""
    sn = sum(counts)
    sl = sum(lambdas)
    const = sum(n * math.log(lam) - gammaln(n + 1) for n, lam in zip(counts, lambdas))
    return (
        const
        + kappa * math.log(kappa)
        - gammaln(kappa)
        + gammaln(kappa + sn)
        - (kappa + sn) * math.log(kappa + sl)
    )


def nbb_closed_loglik(counts, lambdas, a, b):
    """Integrated-out closed form of the beta random-effect joint pmf."""
    sn = sum(counts)
    sl = sum(lambdas)
    const = sum(
        gammaln(lam + n) - gammaln(lam) - gammaln(n + 1)
        for n, lam in zip(counts, lambdas)
    )
    return (
        const
        + gammaln(a + b)
        - gammaln(a)
        - gammaln(b)
        + gammaln(a + sl)
        + gammaln(b + sn)
        - gammaln(a + b + sl + sn)
    )


def terminal_level_distribution(config, lam, start, years, family="poisson", dispersion=None):
    """Exact terminal-level probabilities by enumerating count paths.

    Counts large enough to saturate the scale are folded into one bucket,
    which is exact because the reached level no longer depends on the
    count there.
    """
    n_sat = max(math.ceil((config.s - 1) / config.psi), 1)
    out = defaultdict(float)

    def recurse(level, remaining, prob):
        if remaining == 0:
            out[level] += prob
            return
        mean = lam * relativity(level, config)
        probs = np.exp(
            np.atleast_1d(count_logpmf(np.arange(n_sat), mean, family, dispersion))
        )
        for n in range(n_sat):
            recurse(next_level(level, n, config), remaining - 1, prob * probs[n])
        recurse(config.s, remaining - 1, prob * (1.0 - probs.sum()))

    recurse(start, years, 1.0)
    return dict(out)


def simulate_bms_pair(config, lam, level, j, n_sims, rng, family="poisson", dispersion=None):
    """Draw (N_t, N_{t+j}) from the scale model, starting at a known level."""

    def draw(mean):
        if family == "poisson":
            return rng.poisson(mean)
        if family == "nb1":
            return rng.negative_binomial(mean / dispersion, 1.0 / (1.0 + dispersion))
        if family == "nb2":
            r = 1.0 / dispersion
            return rng.negative_binomial(r, r / (r + mean))
        raise ValueError(family)

    levels = np.full(n_sims, level, dtype=np.int64)
    rel = 1.0 + config.delta * (levels - 1)
    first = draw(lam * rel)
    counts = first
    for _ in range(j):
        levels = np.clip(levels - (counts == 0) + config.psi * counts, 1, config.s)
        rel = 1.0 + config.delta * (levels - 1)
        counts = draw(lam * rel)
    return first, counts


def covariance_estimate(x, y):
    """Sample covariance and the Monte-Carlo standard error of the estimate."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    prod = (x - x.mean()) * (y - y.mean())
    return float(prod.mean()), float(prod.std(ddof=1) / math.sqrt(len(x)))
