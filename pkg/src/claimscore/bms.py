"""Bonus-malus claim-score engine.

A bonus-malus scale compresses a policyholder's entire claim record into
one integer level in ``{1, ..., s}``: a claim-free year moves the level
down one step, each claim jumps it up ``psi`` steps, and the level is
clamped to the scale:

    L(t+1) = min(max(L(t) - 1{N_t = 0} + psi * N_t, 1), s)

The conditional mean of the count at level l is the a-priori mean times a
linear relativity ``r_l = 1 + delta * (l - 1)``, so ``r_1 = 1`` is the base
risk.  Because the level transition is deterministic given the counts, the
panel likelihood is a plain sum of per-contract log-pmfs evaluated along
the level path; no integration over latent states is needed.

The module also provides the one-period transition matrix of the level
process for a fixed claim frequency, its powers, and the closed-form
conditional covariance Cov(N_t, N_{t+j} | L(t)), whose count expectations
collapse to finite sums because the level jump saturates at s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distributions import COUNT_FAMILIES, DomainError, count_logpmf

__all__ = [
    "BmsConfig",
    "TransitionMatrix",
    "next_level",
    "relativity",
    "relativities",
    "entry_level",
    "initial_level",
    "level_path",
    "bms_loglik",
    "bms_loglik_mixture",
    "bms_premium",
    "transition_matrix",
    "matrix_power",
    "bms_covariance",
    "bms_covariance_lag1",
]


@dataclass(frozen=True)
class BmsConfig:
    """Scale structure (psi, s, entry) plus the relativity slope delta.

    ``psi``: levels added per claim; ``s``: top level; ``entry``: level
    assigned to a driver without any experience; ``delta``: slope of the
    linear relativity (delta = 0 switches experience rating off).
    """

    psi: int
    s: int
    entry: int
    delta: float = 0.0

    def __post_init__(self):
        if self.s < 2:
            raise DomainError("scale needs at least 2 levels")
        if not 1 <= self.psi <= self.s:
            raise DomainError("psi must be in [1, s]")
        if not 1 <= self.entry <= self.s:
            raise DomainError("entry level must be in [1, s]")
        if self.delta < 0:
            raise DomainError("delta must be non-negative")


def _check_level(level, config):
    if not 1 <= level <= config.s:
        raise DomainError(f"level {level} outside [1, {config.s}]")


def next_level(level, n, config):
    """Level after one period with ``n`` claims, clamped to [1, s]."""
    _check_level(level, config)
    if n < 0:
        raise DomainError("claim count must be non-negative")
    raw = level - (1 if n == 0 else 0) + config.psi * n
    return min(max(raw, 1), config.s)


def _next_level_array(levels, counts, config):
    raw = levels - (counts == 0) + config.psi * counts
    return np.clip(raw, 1, config.s)


def relativity(level, config):
    """Premium multiplier 1 + delta * (level - 1) at a scale level."""
    _check_level(level, config)
    return 1.0 + config.delta * (level - 1)


def relativities(config):
    """Vector of relativities for levels 1..s."""
    return 1.0 + config.delta * np.arange(config.s, dtype=float)


def entry_level(experience_years, config):
    """Entry level of a driver with ``u`` unobserved years: max(entry - u, 1).

    This is the terminal level of the most likely scale path over the
    unobserved years whenever the per-year no-claim probability exceeds
    one half, since the single most likely transition from every level is
    then the one-step drop.
    """
    if experience_years < 0:
        raise DomainError("experience years must be non-negative")
    return max(config.entry - experience_years, 1)


def initial_level(config, experience_years, prior_counts=()):
    """First observed level given total experience and known recent years.

    The driver enters the scale at ``config.entry``; the
    ``experience_years - len(prior_counts)`` years without claim records
    follow the most likely (claim-free) path, and the known years (most
    recent first, as stored) are then replayed through the scale oldest
    first.  If ``experience_years`` is smaller than the known window, the
    unknown stretch is truncated to zero years.
    """
    prior_counts = tuple(prior_counts)
    unknown = max(experience_years - len(prior_counts), 0)
    level = entry_level(unknown, config)
    for n in reversed(prior_counts):
        level = next_level(level, n, config)
    return level


def level_path(counts, start, config):
    """Levels occupied before each contract plus the final level.

    Returns a list of length ``len(counts) + 1`` starting at ``start``.
    """
    _check_level(start, config)
    path = [start]
    for n in counts:
        path.append(next_level(path[-1], n, config))
    return path


def bms_loglik(history, start, config, family="poisson", dispersion=None):
    """Panel log-likelihood along the deterministic level path.

    Contract k, at level l_k, has conditional mean ``lam_k * r_{l_k}``;
    the likelihood is the sum of per-contract log-pmfs because the level
    at each period is a known function of the earlier counts.
    """
    levels = level_path(history.counts, start, config)
    total = 0.0
    for n, lam, level in zip(history.counts, history.lambdas, levels):
        total += float(count_logpmf(n, lam * relativity(level, config), family, dispersion))
    return total


def bms_loglik_mixture(history, entry_probs, config, family="poisson", dispersion=None):
    """Log-likelihood with a distribution over the first level.

    ``entry_probs[y - 1]`` is the probability that the first observed
    level is y.  The point-mass case used everywhere else corresponds to a
    one-hot vector; this general form is provided for experimentation.
    """
    entry_probs = np.asarray(entry_probs, dtype=float)
    if entry_probs.shape != (config.s,):
        raise DomainError(f"entry_probs must have length s = {config.s}")
    if abs(entry_probs.sum() - 1.0) > 1e-9 or np.any(entry_probs < 0):
        raise DomainError("entry_probs must be a probability vector")
    terms = []
    for y in range(1, config.s + 1):
        p = entry_probs[y - 1]
        if p > 0:
            terms.append(math.log(p) + bms_loglik(history, y, config, family, dispersion))
    if not terms:
        raise DomainError("entry_probs has no support")
    m = max(terms)
    return m + math.log(sum(math.exp(t - m) for t in terms))


def bms_premium(level_next, lambda_next, config):
    """Premium for the coming period: lam * r at the reached level."""
    if not lambda_next > 0:
        raise DomainError("lambda_next must be positive")
    return lambda_next * relativity(level_next, config)


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic one-period transition kernel of the level process."""

    matrix: np.ndarray
    lam: float
    config: BmsConfig

    def __post_init__(self):
        object.__setattr__(self, "matrix", np.asarray(self.matrix, dtype=float))
        if self.matrix.shape != (self.config.s, self.config.s):
            raise DomainError("matrix shape must be (s, s)")

    @property
    def s(self):
        return self.config.s


def _saturation_count(level, config):
    # smallest n >= 1 with level + psi * n >= s
    return max(int(math.ceil((config.s - level) / config.psi)), 1)


def transition_matrix(lam, config, family="poisson", dispersion=None):
    """One-period transition matrix for a fixed a-priori frequency ``lam``.

    Row k uses the conditional count distribution with mean
    ``lam * r_k``; all counts that would overshoot the top level
    aggregate into column s, so every row sums to one by construction.
    """
    if not lam > 0:
        raise DomainError("lam must be positive")
    if family not in COUNT_FAMILIES:
        raise DomainError(f"unknown count family {family!r}")
    s = config.s
    mat = np.zeros((s, s))
    for k in range(1, s + 1):
        mean = lam * relativity(k, config)
        n_sat = _saturation_count(k, config)
        counts = np.arange(n_sat)
        probs = np.exp(count_logpmf(counts, mean, family, dispersion))
        probs = np.atleast_1d(probs)
        mat[k - 1, max(k - 1, 1) - 1] += probs[0]
        for n in range(1, n_sat):
            mat[k - 1, min(k + config.psi * n, s) - 1] += probs[n]
        mat[k - 1, s - 1] += 1.0 - probs.sum()
    return TransitionMatrix(mat, float(lam), config)


def matrix_power(P, K):
    """K-step transition matrix; K = 0 gives the identity."""
    if K < 0:
        raise DomainError("power must be non-negative")
    return TransitionMatrix(np.linalg.matrix_power(P.matrix, K), P.lam, P.config)


def _count_distribution(mean, n_sat, family, dispersion):
    """pmf over 0..n_sat-1 plus exact tail mass and tail first moment."""
    counts = np.arange(n_sat)
    probs = np.exp(np.atleast_1d(count_logpmf(counts, mean, family, dispersion)))
    tail_mass = 1.0 - probs.sum()
    tail_moment = mean - (counts * probs).sum()
    if tail_mass < -1e-12 or tail_moment < -1e-9:
        raise DomainError(
            f"count distribution inconsistent: tail mass {tail_mass:.3e}, "
            f"tail moment {tail_moment:.3e}"
        )
    return probs, max(tail_mass, 0.0), max(tail_moment, 0.0)


def bms_covariance(ell_t, lambda_t, lambda_tj, j, config, family="poisson", dispersion=None):
    """Closed-form Cov(N_t, N_{t+j} | L(t) = ell_t) with constant covariates.

        lam_{t+j} * sum_m r_m * ( E[N_t * P^(j-1)[L(t+1), m]]
                                  - lam_t r_{ell_t} P^(j)[ell_t, m] )

    The expectation over N_t is a finite sum: once the count is large
    enough to saturate the scale, the reached level is s regardless of the
    exact count, so the infinite tail contributes its (analytically known)
    first moment times the row for level s.  With delta = 0 the relativity
    is flat and the covariance is identically zero.
    """
    _check_level(ell_t, config)
    if j < 1:
        raise DomainError("lag j must be >= 1")
    if config.delta == 0.0:
        return 0.0
    P = transition_matrix(lambda_t, config, family, dispersion)
    Pj = matrix_power(P, j).matrix
    Pjm1 = matrix_power(P, j - 1).matrix
    r = relativities(config)

    mean_t = lambda_t * relativity(ell_t, config)
    n_sat = _saturation_count(ell_t, config)
    probs, _, tail_moment = _count_distribution(mean_t, n_sat, family, dispersion)

    # E[N_t * P^(j-1)[next_level(ell_t, N_t), m]] for every m at once
    expect = np.zeros(config.s)
    for n in range(1, n_sat):  # n = 0 contributes nothing to N_t * (...)
        reached = next_level(ell_t, n, config)
        expect += n * probs[n] * Pjm1[reached - 1]
    expect += tail_moment * Pjm1[config.s - 1]

    inner = expect - mean_t * Pj[ell_t - 1]
    return float(lambda_tj * (r * inner).sum())


def bms_covariance_lag1(
    ell_t, lambda_t, lambda_t1, config, family="poisson", dispersion=None, tol=1e-13
):
    """Independent direct-summation form of the lag-one covariance.

        sum_n sum_q n q Pr(N_t = n | ell_t) Pr(N_{t+1} = q | next(ell_t, n))
        - lam_t lam_{t+1} r_{ell_t} sum_m r_m p_{ell_t, m}

    Both double sums are truncated numerically (no matrix algebra, no
    moment identities), which makes this a cross-check for
    :func:`bms_covariance` at j = 1 rather than a faster path.
    """
    _check_level(ell_t, config)

    def truncated(mean):
        # counts, pmf values up to negligible tail
        nmax = 8
        while True:
            counts = np.arange(nmax + 1)
            probs = np.exp(np.atleast_1d(count_logpmf(counts, mean, family, dispersion)))
            if probs[-1] * (nmax + 1) < tol and probs.sum() > 1.0 - tol * 10:
                return counts, probs
            nmax *= 2
            if nmax > 1_000_000:
                raise DomainError("count truncation failed (heavy tail)")

    mean_t = lambda_t * relativity(ell_t, config)
    counts, probs = truncated(mean_t)

    cross = 0.0
    mean_reached = 0.0  # sum_m r_m p_{ell_t, m} as a direct count sum
    for n, p in zip(counts, probs):
        reached = next_level(ell_t, int(n), config)
        mean_reached += p * relativity(reached, config)
        if n > 0:
            mean_q = lambda_t1 * relativity(reached, config)
            qs, qprobs = truncated(mean_q)
            cross += n * p * float((qs * qprobs).sum())
    return cross - lambda_t * lambda_t1 * relativity(ell_t, config) * mean_reached
