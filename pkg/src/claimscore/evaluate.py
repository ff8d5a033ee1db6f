"""Out-of-sample scoring and model comparison.

``predict_premiums`` turns a fitted model into one premium per contract,
using only information available before that contract: the policyholder's
pre-observation history (for starred and scale families) plus their
earlier contracts within the scored dataset.  Claims observed during the
scored period do feed back into later premiums of the same insured, i.e.
prediction is fully sequential.

``score`` reduces a premium schedule to the two comparison statistics
used throughout: the sum of squared errors and a Poisson scoring
log-likelihood that treats each premium as a Poisson mean (premiums are
floored at 1e-12 inside the logarithm).  ``compare`` assembles fitting and
scoring statistics into machine-readable and aligned-text tables.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .bms import BmsConfig, initial_level
from .distributions import DomainError
from .estimate import N_BETA, link
from .panel import DEFAULT_LAMBDA_BAR

__all__ = [
    "PremiumSchedule",
    "ScoreReport",
    "ComparisonReport",
    "predict_premiums",
    "score",
    "compare",
    "covariance_curve",
]

PREMIUM_FLOOR = 1e-12


@dataclass(frozen=True)
class PremiumSchedule:
    """Per-contract predictive premiums aligned with observed counts."""

    pid: np.ndarray
    period: np.ndarray
    premium: np.ndarray
    actual: np.ndarray

    def __len__(self):
        return len(self.premium)


@dataclass(frozen=True)
class ScoreReport:
    """Validation statistics of one premium schedule."""

    n_contracts: int
    mse_sum: float
    mse_mean: float
    poisson_loglik: float

    def to_dict(self):
        return {
            "n_contracts": self.n_contracts,
            "mse_sum": self.mse_sum,
            "mse_mean": self.mse_mean,
            "poisson_loglik": self.poisson_loglik,
        }


def _premium_states(family, params, dataset, lambda_bar):
    """Initial per-policyholder premium state and its update rule.

    Returns ``(premium_fn, update_fn, state)`` where state is a dict of
    arrays over policyholders.
    """
    P = dataset.n_policyholders
    starred = family.endswith("-star")
    base = family[: -len("-star")] if starred else family

    if base in ("poisson", "nb1", "nb2"):
        return None

    prior_claims = dataset.prior_claims_total().astype(float)
    prior_years = dataset.prior_years.astype(float)
    if not starred:
        prior_claims = np.zeros(P)
        prior_years = np.zeros(P)

    if base == "mvnb":
        kappa = params["kappa"]
        state = {
            "num": kappa + prior_claims,
            "den": kappa + prior_years * lambda_bar,
        }

        def premium(lam, st, active):
            return lam * st["num"][active] / st["den"][active]

        def update(lam, n, st, active):
            st["num"][active] += n
            st["den"][active] += lam

        return premium, update, state

    if base == "nbbeta":
        a, b = params["a"], params["b"]
        state = {
            "num": b + prior_claims,
            "den": a + prior_years * lambda_bar,
        }

        def premium(lam, st, active):
            return lam * st["num"][active] / (st["den"][active] - 1.0)

        def update(lam, n, st, active):
            st["num"][active] += n
            st["den"][active] += lam

        return premium, update, state

    if base in ("hf-mvnb", "hf-nbb"):
        nu = params["nu"]
        if base == "hf-mvnb":
            count_base, mean_base = params["kappa"], params["kappa"]
        else:
            count_base, mean_base = params["b"], params["a"]
        m = dataset.prior_years if starred else np.zeros(P, dtype=int)
        powers = nu ** np.arange(1, 11)
        counts0 = nu ** m.astype(float) * count_base + (
            (dataset.prior_counts if starred else np.zeros((P, 10))) @ powers
        )
        year_mask = (np.arange(10)[None, :] < np.asarray(m)[:, None]).astype(float)
        means0 = nu ** m.astype(float) * mean_base + lambda_bar * (year_mask @ powers)
        state = {"num": counts0, "den": means0}
        offset = 0.0 if base == "hf-mvnb" else 1.0

        def premium(lam, st, active):
            return lam * st["num"][active] / (st["den"][active] - offset)

        def update(lam, n, st, active):
            st["num"][active] = nu * (st["num"][active] + n)
            st["den"][active] = nu * (st["den"][active] + lam)

        return premium, update, state

    raise DomainError(f"unknown premium family {family!r}")


def predict_premiums(fit_result, dataset, lambda_bar=DEFAULT_LAMBDA_BAR):
    """Sequential predictive premium for every contract in the dataset."""
    params = fit_result.params
    beta = np.array([params[f"beta_{i}"] for i in range(N_BETA)])
    lam = link(dataset.covariates, dataset.exposure, beta)
    premiums = np.empty(dataset.n_contracts)
    family = fit_result.family

    if family.startswith("bms-"):
        st = fit_result.structural
        config = BmsConfig(
            psi=st["psi"], s=st["s"], entry=st["entry"], delta=params["delta"]
        )
        current = np.empty(dataset.n_policyholders, dtype=np.int64)
        for i in range(dataset.n_policyholders):
            m = int(dataset.prior_years[i])
            current[i] = initial_level(
                config,
                int(dataset.experience_years[i]),
                tuple(dataset.prior_counts[i, :m]),
            )
        max_t = int(dataset.group_sizes.max(initial=0))
        for t in range(1, max_t + 1):
            active = np.flatnonzero(dataset.group_sizes >= t)
            idx = dataset.group_starts[active] + t - 1
            rel = 1.0 + config.delta * (current[active] - 1)
            premiums[idx] = lam[idx] * rel
            counts = dataset.claims[idx]
            raw = current[active] - (counts == 0) + config.psi * counts
            current[active] = np.clip(raw, 1, config.s)
    else:
        spec = _premium_states(family, params, dataset, lambda_bar)
        if spec is None:  # cross-section: the a-priori premium
            premiums[:] = lam
        else:
            premium, update, state = spec
            max_t = int(dataset.group_sizes.max(initial=0))
            for t in range(1, max_t + 1):
                active = np.flatnonzero(dataset.group_sizes >= t)
                idx = dataset.group_starts[active] + t - 1
                premiums[idx] = premium(lam[idx], state, active)
                update(lam[idx], dataset.claims[idx].astype(float), state, active)

    return PremiumSchedule(
        pid=dataset.pid.copy(),
        period=dataset.period.copy(),
        premium=premiums,
        actual=dataset.claims.astype(float),
    )


def score(schedule):
    """Squared-error and Poisson scoring statistics of a premium schedule."""
    if len(schedule) == 0:
        raise DomainError("cannot score an empty premium schedule")
    n = schedule.actual
    pi = schedule.premium
    if np.any(pi < 0):
        raise DomainError("premiums must be non-negative")
    sq = float(((n - pi) ** 2).sum())
    safe = np.maximum(pi, PREMIUM_FLOOR)
    loglik = float((n * np.log(safe) - pi - gammaln(n + 1.0)).sum())
    return ScoreReport(
        n_contracts=len(schedule),
        mse_sum=sq,
        mse_mean=sq / len(schedule),
        poisson_loglik=loglik,
    )


@dataclass(frozen=True)
class ComparisonReport:
    """Fitting and validation statistics for several models, best-marked."""

    rows: tuple

    _COLUMNS = (
        ("family", None),
        ("n_params", None),
        ("loglik", max),
        ("aic", min),
        ("bic", min),
        ("mse_sum", min),
        ("oos_loglik", max),
    )

    def best_values(self):
        best = {}
        for name, pick in self._COLUMNS:
            if pick is None:
                continue
            values = [row[name] for row in self.rows if row.get(name) is not None]
            if values:
                best[name] = pick(values)
        return best

    def to_dict(self):
        return {"schema_version": 1, "models": list(self.rows), "best": self.best_values()}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self):
        best = self.best_values()
        headers = [name for name, _ in self._COLUMNS]
        lines = []
        table = []
        for row in self.rows:
            cells = []
            for name, pick in self._COLUMNS:
                value = row.get(name)
                if value is None:
                    cells.append("-")
                elif isinstance(value, float):
                    text = f"{value:.2f}"
                    if pick is not None and value == best.get(name):
                        text += " *"
                    cells.append(text)
                else:
                    cells.append(str(value))
            table.append(cells)
        widths = [
            max(len(h), *(len(r[i]) for r in table)) if table else len(h)
            for i, h in enumerate(headers)
        ]
        lines.append("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
        for cells in table:
            lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
        return "\n".join(lines) + "\n"


def compare(fit_results, reports=None):
    """Build a comparison table from fits and optional score reports.

    ``reports`` maps family tag to :class:`ScoreReport`; missing entries
    leave the out-of-sample columns empty.
    """
    reports = reports or {}
    rows = []
    for result in fit_results:
        row = {
            "family": result.family,
            "n_params": result.n_params,
            "loglik": result.loglik,
            "aic": result.aic,
            "bic": result.bic,
            "converged": result.converged,
            "mse_sum": None,
            "oos_loglik": None,
        }
        if result.structural is not None:
            row["structural"] = dict(result.structural)
        report = reports.get(result.family)
        if report is not None:
            row["mse_sum"] = report.mse_sum
            row["oos_loglik"] = report.poisson_loglik
        rows.append(row)
    return ComparisonReport(rows=tuple(rows))


def covariance_curve(config, lam, family="poisson", dispersion=None, max_lag=15):
    """Conditional covariance rows (level, lag, covariance) for plotting.

    Evaluates the scale model's closed-form Cov(N_t, N_{t+j} | level) at a
    constant a-priori frequency for every starting level and lag
    1..max_lag.
    """
    from .bms import bms_covariance

    rows = []
    for level in range(1, config.s + 1):
        for lag in range(1, max_lag + 1):
            cov = bms_covariance(level, lam, lam, lag, config, family, dispersion)
            rows.append((level, lag, cov))
    return rows
