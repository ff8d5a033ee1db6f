"""Dynamically weighted panel models (geometric discounting of credibility).

Instead of letting every past contract carry the same weight, the state of
the conjugate update is shrunk by a factor ``nu`` in (0, 1] after each
period:

    alpha_{t+1} = nu * (alpha_t + n_t)
    gamma_{t+1} = nu * (gamma_t + lam_t)

Unrolled, ``alpha_t = nu^(t-1) alpha_0 + sum_k nu^k n_{t-k}``: a claim that
is k periods old is discounted by ``nu^k``.  With ``nu = 1`` every
operation here reduces exactly to its static counterpart in
:mod:`claimscore.panel`.

The MVNB variant keeps the count accumulator in the state's ``alpha`` slot
and the mean accumulator in ``gamma``, matching the static convention.
The NBB variant accumulates the same two streams (counts from base b,
means from base a); because the NBB kernel takes the mean accumulator in
its alpha slot, the two state components swap places at the kernel call.

``hf_claim_impact_ratio`` quantifies the model's structural defect: the
premium surcharge for a single claim made in period w, relative to a
claim-free insured, is ``1 + (nu / b) * nu^(-w)`` for every later period,
so later claims are penalised ever more heavily and the penalty never
ages away.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import DomainError, nbb_logpmf, poisson_gamma_logpmf
from .panel import DEFAULT_LAMBDA_BAR, MAX_PRIOR_YEARS

__all__ = [
    "HfState",
    "hf_recur",
    "hf_prior_update",
    "hf_mvnb_loglik",
    "hf_nbb_loglik",
    "hf_premium",
    "hf_claim_impact_ratio",
    "hf_covariance_sim",
]

HF_FAMILIES = ("hf-mvnb", "hf-nbb")


@dataclass(frozen=True)
class HfState:
    """Discounted credibility state after ``t`` absorbed periods."""

    alpha: float
    gamma: float
    t: int = 0

    def __post_init__(self):
        if not (self.alpha > 0 and self.gamma > 0):
            raise DomainError("state must be positive")
        if self.t < 0:
            raise DomainError("step index must be non-negative")


def _check_nu(nu):
    if not 0.0 < nu <= 1.0:
        raise DomainError("nu must be in (0, 1]")


def hf_recur(state, n_t, lambda_t, nu):
    """One-period update: alpha <- nu*(alpha + n), gamma <- nu*(gamma + lam).

    ``n_t`` and ``lambda_t`` may be zero to express pure decay.
    """
    _check_nu(nu)
    if n_t < 0:
        raise DomainError("count must be non-negative")
    if lambda_t < 0:
        raise DomainError("lambda must be non-negative")
    return HfState(nu * (state.alpha + n_t), nu * (state.gamma + lambda_t), state.t + 1)


def hf_prior_update(base, prior_counts, nu, lambda_bar=DEFAULT_LAMBDA_BAR):
    """Fold pre-observation years into a starting state.

    ``prior_counts`` lists per-year counts with the most recent year first
    (year -1, -2, ...); each year's unknown mean is ``lambda_bar``.  The
    result carries ``alpha = nu^m alpha_0 + sum_k nu^k n_{-k}`` and the
    analogous gamma, i.e. the oldest year is discounted the most.
    """
    prior_counts = tuple(prior_counts)
    if len(prior_counts) > MAX_PRIOR_YEARS:
        raise DomainError(f"at most {MAX_PRIOR_YEARS} prior years supported")
    state = base
    for n in reversed(prior_counts):  # oldest year absorbed first
        state = hf_recur(state, n, lambda_bar, nu)
    return HfState(state.alpha, state.gamma, base.t)


def _require_prior_counts(history):
    if history.prior_years == 0:
        return ()
    if history.prior_counts is None:
        raise DomainError(
            "dynamic models need per-year prior_counts, not just the total"
        )
    return history.prior_counts


def _hf_mvnb_states(history, kappa, nu, lambda_bar):
    if not kappa > 0:
        raise DomainError("kappa must be positive")
    state = hf_prior_update(
        HfState(kappa, kappa), _require_prior_counts(history), nu, lambda_bar
    )
    for n, lam in zip(history.counts, history.lambdas):
        yield state, n, lam
        state = hf_recur(state, n, lam, nu)
    yield state, None, None


def _hf_nbb_states(history, shape, nu, lambda_bar):
    # state.alpha carries the count stream from base b, state.gamma the
    # mean stream from base a; the NBB kernel swaps them back
    state = hf_prior_update(
        HfState(shape.b, shape.a), _require_prior_counts(history), nu, lambda_bar
    )
    for n, lam in zip(history.counts, history.lambdas):
        yield state, n, lam
        state = hf_recur(state, n, lam, nu)
    yield state, None, None


def hf_mvnb_loglik(history, kappa, nu, lambda_bar=DEFAULT_LAMBDA_BAR):
    """Joint log-likelihood of the discounted MVNB model.

    Sum over contracts of the negative-binomial-form log-pmf at the state
    preceding each contract; ``nu = 1`` reproduces the static MVNB.
    """
    _check_nu(nu)
    total = 0.0
    for state, n, lam in _hf_mvnb_states(history, kappa, nu, lambda_bar):
        if n is None:
            break
        total += poisson_gamma_logpmf(n, lam, state.alpha, state.gamma)
    return total


def hf_nbb_loglik(history, shape, nu, lambda_bar=DEFAULT_LAMBDA_BAR):
    """Joint log-likelihood of the discounted NBBeta model."""
    _check_nu(nu)
    total = 0.0
    for state, n, lam in _hf_nbb_states(history, shape, nu, lambda_bar):
        if n is None:
            break
        total += nbb_logpmf(n, lam, state.gamma, state.alpha)
    return total


def hf_premium(history, params, nu, lambda_next, family, lambda_bar=DEFAULT_LAMBDA_BAR):
    """Predictive premium of a discounted model after the observed history.

    ``family`` selects the kernel: ``"hf-mvnb"`` (``params`` is kappa)
    gives ``lam * alpha_end / gamma_end``; ``"hf-nbb"`` (``params`` is an
    :class:`~claimscore.panel.NbbShape`) gives
    ``lam * count_acc / (mean_acc - 1)``.
    """
    _check_nu(nu)
    if not lambda_next > 0:
        raise DomainError("lambda_next must be positive")
    if family == "hf-mvnb":
        *_, (state, _, _) = _hf_mvnb_states(history, params, nu, lambda_bar)
        return lambda_next * state.alpha / state.gamma
    if family == "hf-nbb":
        *_, (state, _, _) = _hf_nbb_states(history, params, nu, lambda_bar)
        if not state.gamma > 1.0:
            raise DomainError("NBB premium requires the mean accumulator > 1")
        return lambda_next * state.alpha / (state.gamma - 1.0)
    raise DomainError(f"unknown dynamic family {family!r}")


def hf_claim_impact_ratio(w, b, nu):
    """Premium ratio caused by one claim in period w versus no claim ever.

    Equals ``1 + (nu / b) * nu^(-w)`` under the discounted NBB model: the
    surcharge is the same for every future period (it never decays) and
    grows in w whenever ``nu < 1``.
    """
    _check_nu(nu)
    if w < 1:
        raise DomainError("claim period w must be >= 1")
    if not b > 0:
        raise DomainError("b must be positive")
    return 1.0 + (nu / b) * nu ** (-float(w))


def hf_covariance_sim(
    t1,
    t2,
    lam,
    params,
    nu,
    family,
    n_sims=1_000_000,
    seed=0,
):
    """Monte-Carlo covariance of counts at periods t1 < t2 (constant lam).

    There is no tractable closed form for the discounted models, so the
    covariance is simulated: replicate ``n_sims`` insureds for ``t2``
    periods, drawing each period's count from the current predictive
    distribution and updating the state, then estimate Cov(N_t1, N_t2).
    Returns ``(cov, standard_error)``.
    """
    _check_nu(nu)
    if not 1 <= t1 < t2:
        raise DomainError("need 1 <= t1 < t2")
    rng = np.random.default_rng(seed)
    if family == "hf-mvnb":
        alpha = np.full(n_sims, float(params))
        gamma = np.full(n_sims, float(params))
    elif family == "hf-nbb":
        alpha = np.full(n_sims, params.b)  # count accumulator
        gamma = np.full(n_sims, params.a)  # mean accumulator
    else:
        raise DomainError(f"unknown dynamic family {family!r}")
    saved = {}
    for t in range(1, t2 + 1):
        if family == "hf-mvnb":
            theta = rng.gamma(shape=alpha, scale=1.0 / gamma)
            counts = rng.poisson(lam * theta)
        else:
            p = rng.beta(gamma, alpha)  # beta(mean-acc, count-acc) success prob
            counts = rng.negative_binomial(lam, p)
        if t in (t1, t2):
            saved[t] = counts
        alpha = nu * (alpha + counts)
        gamma = nu * (gamma + lam)
    x = saved[t1].astype(float)
    y = saved[t2].astype(float)
    prod = (x - x.mean()) * (y - y.mean())
    cov = prod.mean()
    se = prod.std(ddof=1) / np.sqrt(n_sims)
    return cov, se
