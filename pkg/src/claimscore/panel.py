"""Static random-effects panel models: MVNB and NBBeta.

Both models share one random effect per policyholder across all contracts,
so the joint likelihood factors into sequential predictive pmfs with
conjugately updated states:

* MVNB (gamma effect, shape = rate = kappa): the state ``(alpha, gamma)``
  starts at ``(kappa, kappa)``, ``alpha`` accumulates observed counts and
  ``gamma`` accumulates the per-contract means.
* NBBeta (beta effect with shapes (a, b)): the state starts at ``(a, b)``;
  here ``alpha`` accumulates the means and ``gamma`` the counts.  The roles
  are mirrored relative to MVNB on purpose: this is the convention under
  which the NBB predictive premium is ``lam * gamma / (alpha - 1)``.

Pre-observation experience (up to ten years of known claim totals, with
unknown means approximated by a portfolio average) enters through the
``*_prior_update`` functions, which shift the starting state.
"""

from __future__ import annotations

from dataclasses import dataclass

from .distributions import (
    DomainError,
    nbb_logpmf,
    poisson_gamma_logpmf,
)

__all__ = [
    "PolicyHistory",
    "NbbShape",
    "CredibilityState",
    "DEFAULT_LAMBDA_BAR",
    "mvnb_loglik",
    "mvnb_premium",
    "mvnb_prior_update",
    "nbbeta_loglik",
    "nbbeta_premium",
    "nbbeta_prior_update",
    "mvnb_covariance",
    "nbbeta_covariance",
]

#: portfolio-average annual claim frequency used for unknown pre-entry means
DEFAULT_LAMBDA_BAR = 0.065

MAX_PRIOR_YEARS = 10


@dataclass(frozen=True)
class PolicyHistory:
    """Observed claim history of one policyholder.

    ``counts[k]`` and ``lambdas[k]`` are the claim count and a-priori mean
    of contract k (chronological order).  ``prior_years`` is the number of
    known pre-observation years m (at most 10); ``prior_claims`` their
    claim total.  ``prior_counts``, when available, lists the per-year
    pre-observation counts with the most recent year first; it is required
    by the dynamically weighted models, while the static models only use
    the total.
    """

    counts: tuple[int, ...]
    lambdas: tuple[float, ...]
    prior_years: int = 0
    prior_claims: int = 0
    prior_counts: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        object.__setattr__(self, "lambdas", tuple(float(l) for l in self.lambdas))
        if len(self.counts) != len(self.lambdas):
            raise DomainError("counts and lambdas must have equal length")
        if any(c < 0 for c in self.counts):
            raise DomainError("counts must be non-negative")
        if any(not l > 0 for l in self.lambdas):
            raise DomainError("lambdas must be positive")
        if not 0 <= self.prior_years <= MAX_PRIOR_YEARS:
            raise DomainError(f"prior_years must be in [0, {MAX_PRIOR_YEARS}]")
        if self.prior_claims < 0:
            raise DomainError("prior_claims must be non-negative")
        if self.prior_years == 0 and self.prior_claims != 0:
            raise DomainError("prior_claims must be 0 when prior_years is 0")
        if self.prior_counts is not None:
            pc = tuple(int(c) for c in self.prior_counts)
            object.__setattr__(self, "prior_counts", pc)
            if len(pc) != self.prior_years:
                raise DomainError("prior_counts length must equal prior_years")
            if any(c < 0 for c in pc):
                raise DomainError("prior_counts must be non-negative")
            if sum(pc) != self.prior_claims:
                raise DomainError("prior_counts must sum to prior_claims")

    def __len__(self):
        return len(self.counts)


@dataclass(frozen=True)
class NbbShape:
    """Beta shapes (a, b) of the NBBeta random effect.

    Construction requires positivity only; the mean formula additionally
    needs a > 1 and the variance formula a > 2, checked where used.
    """

    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise DomainError("NbbShape parameters must be positive")


@dataclass(frozen=True)
class CredibilityState:
    """Posterior state (alpha, gamma) of a conjugate random-effect update."""

    alpha: float
    gamma: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.gamma > 0):
            raise DomainError("credibility state must be positive")


def _check_kappa(kappa):
    if not kappa > 0:
        raise DomainError("kappa must be positive")


def mvnb_prior_update(kappa, prior_years, prior_claims, lambda_bar=DEFAULT_LAMBDA_BAR):
    """Starting state of the MVNB model given pre-observation experience.

    The known pre-entry claim total enters the count side; the unknown
    pre-entry means are approximated by ``lambda_bar`` per year:
    ``alpha = kappa + prior_claims``, ``gamma = kappa + m * lambda_bar``.
    """
    _check_kappa(kappa)
    if not 0 <= prior_years <= MAX_PRIOR_YEARS:
        raise DomainError(f"prior_years must be in [0, {MAX_PRIOR_YEARS}]")
    return CredibilityState(kappa + prior_claims, kappa + prior_years * lambda_bar)


def nbbeta_prior_update(shape, prior_years, prior_claims, lambda_bar=DEFAULT_LAMBDA_BAR):
    """Starting state of the NBBeta model given pre-observation experience.

    Mirrors :func:`mvnb_prior_update` with the NBB role convention:
    ``alpha = a + m * lambda_bar`` (mean side), ``gamma = b + prior_claims``
    (count side).
    """
    if not 0 <= prior_years <= MAX_PRIOR_YEARS:
        raise DomainError(f"prior_years must be in [0, {MAX_PRIOR_YEARS}]")
    return CredibilityState(shape.a + prior_years * lambda_bar, shape.b + prior_claims)


def _mvnb_start(history, kappa, lambda_bar):
    return mvnb_prior_update(kappa, history.prior_years, history.prior_claims, lambda_bar)


def _nbbeta_start(history, shape, lambda_bar):
    return nbbeta_prior_update(shape, history.prior_years, history.prior_claims, lambda_bar)


def mvnb_loglik(history, kappa, lambda_bar=DEFAULT_LAMBDA_BAR):
    """Joint log-likelihood of a policyholder's counts under the MVNB model.

    Computed as the sum of sequential predictive log-pmfs, each a
    negative-binomial form with the updated gamma posterior; this equals
    the closed-form joint pmf obtained by integrating the shared random
    effect.
    """
    state = _mvnb_start(history, kappa, lambda_bar)
    alpha, gamma = state.alpha, state.gamma
    total = 0.0
    for n, lam in zip(history.counts, history.lambdas):
        total += poisson_gamma_logpmf(n, lam, alpha, gamma)
        alpha += n
        gamma += lam
    return total


def mvnb_premium(history, kappa, lambda_next, lambda_bar=DEFAULT_LAMBDA_BAR):
    """Predictive premium lam_next * (kappa + sum n) / (kappa + sum lam).

    With an empty history (and no prior experience) this is exactly
    ``lambda_next``: the a-priori premium.
    """
    if not lambda_next > 0:
        raise DomainError("lambda_next must be positive")
    state = _mvnb_start(history, kappa, lambda_bar)
    alpha = state.alpha + sum(history.counts)
    gamma = state.gamma + sum(history.lambdas)
    return lambda_next * alpha / gamma


def nbbeta_loglik(history, shape, lambda_bar=DEFAULT_LAMBDA_BAR):
    """Joint log-likelihood under the NBBeta model (sequential predictives)."""
    state = _nbbeta_start(history, shape, lambda_bar)
    alpha, gamma = state.alpha, state.gamma
    total = 0.0
    for n, lam in zip(history.counts, history.lambdas):
        total += nbb_logpmf(n, lam, alpha, gamma)
        alpha += lam
        gamma += n
    return total


def nbbeta_premium(history, shape, lambda_next, lambda_bar=DEFAULT_LAMBDA_BAR):
    """Predictive premium lam_next * (b + sum n) / (a + sum lam - 1)."""
    if not lambda_next > 0:
        raise DomainError("lambda_next must be positive")
    state = _nbbeta_start(history, shape, lambda_bar)
    alpha = state.alpha + sum(history.lambdas)
    gamma = state.gamma + sum(history.counts)
    if not alpha > 1.0:
        raise DomainError("NBB premium requires a + sum(lambda) > 1")
    return lambda_next * gamma / (alpha - 1.0)


def mvnb_covariance(lambda_t, lambda_tj, kappa):
    """Covariance of two counts of the same insured, lam_t * lam_tj / kappa.

    The shared gamma effect makes this the same for every lag, which is
    why no lag argument exists.
    """
    _check_kappa(kappa)
    return lambda_t * lambda_tj / kappa


def nbbeta_covariance(lambda_t, lambda_tj, shape):
    """Lag-independent covariance of two counts under the NBBeta model.

    Requires a > 2 (the random effect needs a finite second moment).
    """
    a, b = shape.a, shape.b
    if not a > 2:
        raise DomainError("NBB covariance requires a > 2")
    return lambda_t * lambda_tj * (b / (a - 1.0)) * ((b + 1.0) / (a - 2.0) - b / (a - 1.0))
