import math

import numpy as np
import pytest
from scipy.special import gammaln

from claimscore.bms import BmsConfig, bms_covariance
from claimscore.distributions import DomainError
from claimscore.estimate import FitOptions, FitResult, fit
from claimscore.evaluate import (
    PremiumSchedule,
    compare,
    covariance_curve,
    predict_premiums,
    score,
)
from claimscore.portfolio import SimulationSpec, simulate, split

BETA = (-2.0, 0.1, -0.1, 0.3, 0.2, -0.3, 0.2, -0.1, 0.1)


def manual_result(family, params, structural=None, loglik=-1.0):
    full = {f"beta_{i}": BETA[i] for i in range(9)}
    full.update(params)
    k = 9 + len(params) + (3 if structural else 0)
    return FitResult(
        family=family,
        params=full,
        std_errors=None,
        loglik=loglik,
        aic=2 * k - 2 * loglik,
        bic=k * math.log(10) - 2 * loglik,
        n_params=k,
        n_obs=10,
        n_policyholders=5,
        converged=True,
        structural=structural,
    )


def tiny_dataset(claims_by_policy, covariates=None):
    """Hand-built dataset: dict policy -> list of claim counts."""
    from claimscore.portfolio import PanelDataset

    policy_ids = list(claims_by_policy)
    pid, period, claims = [], [], []
    for i, policy in enumerate(policy_ids):
        for t, n in enumerate(claims_by_policy[policy], start=1):
            pid.append(i)
            period.append(t)
            claims.append(n)
    C = len(pid)
    P = len(policy_ids)
    return PanelDataset(
        policy_ids=np.array(policy_ids, dtype=object),
        pid=np.array(pid),
        period=np.array(period),
        exposure=np.ones(C),
        covariates=np.zeros((C, 8), dtype=np.int8) if covariates is None else covariates,
        claims=np.array(claims),
        prior_counts=np.zeros((P, 10), dtype=np.int64),
        prior_years=np.zeros(P, dtype=np.int64),
        experience_years=np.zeros(P, dtype=np.int64),
    )


class TestPredictPremiums:
    def test_poisson_ignores_history(self):
        ds = tiny_dataset({"A": [0, 3, 0], "B": [1, 1]})
        schedule = predict_premiums(manual_result("poisson", {}), ds)
        lam = math.exp(-2.0)
        np.testing.assert_allclose(schedule.premium, lam, rtol=1e-12)

    def test_mvnb_matches_hand_computed_updates(self):
        ds = tiny_dataset({"A": [1, 0, 2]})
        kappa = 1.3
        lam = math.exp(-2.0)
        schedule = predict_premiums(manual_result("mvnb", {"kappa": kappa}), ds)
        expected = [
            lam,
            lam * (kappa + 1) / (kappa + lam),
            lam * (kappa + 1) / (kappa + 2 * lam),
        ]
        np.testing.assert_allclose(schedule.premium, expected, rtol=1e-12)

    def test_nbbeta_sequence(self):
        ds = tiny_dataset({"A": [2, 0]})
        a, b = 9.0, 3.0
        lam = math.exp(-2.0)
        schedule = predict_premiums(manual_result("nbbeta", {"a": a, "b": b}), ds)
        expected = [
            lam * b / (a - 1.0),
            lam * (b + 2) / (a + lam - 1.0),
        ]
        np.testing.assert_allclose(schedule.premium, expected, rtol=1e-12)

    def test_bms_follows_level_path(self):
        ds = tiny_dataset({"A": [0, 1, 0]})
        result = manual_result(
            "bms-poisson", {"delta": 0.12}, structural={"psi": 6, "s": 11, "entry": 3}
        )
        lam = math.exp(-2.0)
        schedule = predict_premiums(result, ds)
        rel = [1.0 + 0.12 * (level - 1) for level in (3, 2, 8)]
        np.testing.assert_allclose(schedule.premium, [lam * r for r in rel], rtol=1e-12)

    def test_hf_mvnb_discounted_updates(self):
        ds = tiny_dataset({"A": [1, 0]})
        kappa, nu = 1.0, 0.9
        lam = math.exp(-2.0)
        schedule = predict_premiums(
            manual_result("hf-mvnb", {"kappa": kappa, "nu": nu}), ds
        )
        expected = [
            lam,
            lam * (nu * (kappa + 1)) / (nu * (kappa + lam)),
        ]
        np.testing.assert_allclose(schedule.premium, expected, rtol=1e-12)

    def test_future_contracts_cannot_leak_backward(self):
        base = tiny_dataset({"A": [1, 0, 2]})
        altered = tiny_dataset({"A": [1, 0, 5]})
        result = manual_result("mvnb", {"kappa": 0.8})
        first = predict_premiums(result, base).premium
        second = predict_premiums(result, altered).premium
        np.testing.assert_array_equal(first[:2], second[:2])

    def test_starred_families_see_prior_history(self):
        ds = tiny_dataset({"A": [0]})
        ds.prior_years[:] = 3
        ds.prior_counts[0, :3] = (1, 0, 1)
        ds.experience_years[:] = 3
        lam = math.exp(-2.0)
        kappa = 1.0
        plain = predict_premiums(manual_result("mvnb", {"kappa": kappa}), ds)
        starred = predict_premiums(manual_result("mvnb-star", {"kappa": kappa}), ds)
        assert plain.premium[0] == pytest.approx(lam)
        expected = lam * (kappa + 2) / (kappa + 3 * 0.065)
        assert starred.premium[0] == pytest.approx(expected, rel=1e-12)


class TestScore:
    def test_perfect_predictions(self):
        schedule = PremiumSchedule(
            pid=np.zeros(3, dtype=int),
            period=np.arange(1, 4),
            premium=np.array([1.0, 2.0, 0.5]),
            actual=np.array([1.0, 2.0, 0.5]),
        )
        report = score(schedule)
        assert report.mse_sum == 0.0

    def test_hand_computed_fixture(self):
        premium = np.array([0.1, 0.2, 0.3])
        actual = np.array([0.0, 1.0, 2.0])
        schedule = PremiumSchedule(
            pid=np.zeros(3, dtype=int), period=np.arange(3), premium=premium, actual=actual
        )
        report = score(schedule)
        assert report.mse_sum == pytest.approx(
            float(((actual - premium) ** 2).sum()), rel=1e-13
        )
        expected_ll = float(
            (actual * np.log(premium) - premium - gammaln(actual + 1)).sum()
        )
        assert report.poisson_loglik == pytest.approx(expected_ll, rel=1e-13)
        assert report.mse_mean == pytest.approx(report.mse_sum / 3.0)

    def test_zero_premium_zero_count_guarded(self):
        schedule = PremiumSchedule(
            pid=np.zeros(2, dtype=int),
            period=np.arange(2),
            premium=np.array([0.0, 0.5]),
            actual=np.array([0.0, 0.0]),
        )
        report = score(schedule)
        assert np.isfinite(report.poisson_loglik)
        assert report.mse_sum == pytest.approx(0.25)

    def test_empty_schedule_rejected(self):
        schedule = PremiumSchedule(
            pid=np.array([], dtype=int),
            period=np.array([], dtype=int),
            premium=np.array([]),
            actual=np.array([]),
        )
        with pytest.raises(DomainError):
            score(schedule)

    def test_validation_mean_minimizes_mse_among_constants(self, rng):
        actual = rng.poisson(0.8, size=500).astype(float)
        mean = actual.mean()

        def mse(c):
            return float(((actual - c) ** 2).sum())

        best = mse(mean)
        for c in rng.uniform(0.0, 3.0, 50):
            assert best <= mse(float(c)) + 1e-9


class TestCompare:
    def test_single_model_single_row(self):
        result = manual_result("poisson", {})
        table = compare([result])
        assert len(table.rows) == 1
        assert table.rows[0]["family"] == "poisson"
        assert "loglik" in table.to_dict()["best"]

    def test_text_snapshot(self):
        fits = [
            manual_result("poisson", {}, loglik=-120.5),
            manual_result("mvnb", {"kappa": 1.0}, loglik=-118.25),
        ]
        reports = {
            "poisson": score(
                PremiumSchedule(
                    pid=np.zeros(2, dtype=int),
                    period=np.arange(2),
                    premium=np.array([0.5, 0.5]),
                    actual=np.array([0.0, 1.0]),
                )
            )
        }
        text = compare(fits, reports).to_text()
        expected = (
            "family   n_params  loglik     aic       bic       mse_sum  oos_loglik\n"
            "poisson  9         -120.50    259.00    261.72    0.50 *   -1.69 *   \n"
            "mvnb     10        -118.25 *  256.50 *  259.53 *  -        -         \n"
        )
        assert text == expected

    def test_generating_family_ranks_itself_first(self):
        spec = SimulationSpec(
            family="mvnb", beta=BETA, n_policyholders=8000, seed=44, kappa=0.8
        )
        ds, _ = simulate(spec)
        fit_ds, val_ds = split(ds, 0.7, seed=1)
        options = FitOptions(compute_se=False)
        poisson_fit = fit(fit_ds, "poisson", options=options)
        mvnb_fit = fit(fit_ds, "mvnb", options=options)
        reports = {
            r.family: score(predict_premiums(r, val_ds)) for r in (poisson_fit, mvnb_fit)
        }
        assert reports["mvnb"].poisson_loglik > reports["poisson"].poisson_loglik
        assert mvnb_fit.loglik > poisson_fit.loglik


class TestCovarianceCurve:
    def test_first_lag_matches_direct_covariance(self):
        config = BmsConfig(psi=6, s=11, entry=1, delta=0.12)
        rows = covariance_curve(config, 0.065, family="nb1", dispersion=0.062, max_lag=3)
        assert len(rows) == 11 * 3
        for level, lag, cov in rows:
            if lag == 1:
                direct = bms_covariance(level, 0.065, 0.065, 1, config, "nb1", 0.062)
                assert cov == pytest.approx(direct, abs=1e-15)
