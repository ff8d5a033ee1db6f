"""Acceptance suite: one test per criterion, each at its stated tolerance.

Each test prints a ``[criterion N] name: PASS|FAIL`` line (visible with
``pytest -s``).  The numeric anchors are exact closed-form values; the
statistical criteria use fixed seeds and three-standard-error bands.
"""

import functools
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from claimscore.bms import (
    BmsConfig,
    bms_covariance,
    bms_covariance_lag1,
    matrix_power,
    relativity,
    transition_matrix,
)
from claimscore.cli import main as cli_main
from claimscore.distributions import (
    nb1_logpmf,
    nb2_logpmf,
    nbb_logpmf,
    nbb_mean,
    nbb_variance,
    pmf_mass,
    pmf_moment,
    poisson_logpmf,
)
from claimscore.dynamic import hf_claim_impact_ratio, hf_mvnb_loglik, hf_nbb_loglik
from claimscore.estimate import FitOptions, GridSpec, fit, grid_search
from claimscore.evaluate import predict_premiums, score
from claimscore.panel import NbbShape, PolicyHistory, mvnb_loglik, nbbeta_loglik
from claimscore.portfolio import SimulationSpec, simulate, split

from oracles import (
    covariance_estimate,
    mvnb_quad_loglik,
    nbb_quad_loglik,
    simulate_bms_pair,
    terminal_level_distribution,
)

FITTED = BmsConfig(psi=6, s=11, entry=1, delta=0.12)


def criterion(number, name, budget_seconds=None):
    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            started = time.time()
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"[criterion {number}] {name}: FAIL")
                raise
            elapsed = time.time() - started
            print(f"[criterion {number}] {name}: PASS ({elapsed:.1f}s)")
            if budget_seconds is not None:
                assert elapsed < budget_seconds, (
                    f"criterion {number} took {elapsed:.1f}s, budget {budget_seconds}s"
                )
        return wrapper
    return decorate


@criterion(1, "formula anchors", budget_seconds=1.0)
def test_criterion_1_formula_anchors():
    assert abs(relativity(11, FITTED) - 2.20) < 1e-12
    # one claim from level 2 jumps six levels: premium ratio 1.84 / 1.12
    ratio = relativity(8, FITTED) / relativity(2, FITTED)
    assert abs(ratio - 23.0 / 14.0) < 1e-12
    assert abs(ratio - 1.6429) < 1e-4
    # a claim-free year from level 2 cuts the premium by 1 - 1/1.12
    reduction = 1.0 - relativity(1, FITTED) / relativity(2, FITTED)
    assert abs(reduction - 3.0 / 28.0) < 1e-12
    assert abs(reduction - 0.1071) < 1e-4
    # surcharge for a first-period claim under the discounted model
    assert abs(hf_claim_impact_ratio(1, 5.5, 0.9) - 13.0 / 11.0) < 1e-12
    ratios = [hf_claim_impact_ratio(w, 5.5, 0.9) for w in range(1, 30)]
    assert all(b > a for a, b in zip(ratios, ratios[1:]))


@criterion(2, "normalization suite", budget_seconds=10.0)
def test_criterion_2_normalization_suite():
    rng = np.random.default_rng(7)
    grid = []
    for _ in range(20):
        grid.append(
            (
                float(rng.uniform(0.05, 4.0)),
                float(rng.uniform(0.05, 1.2)),
                float(rng.uniform(2.6, 80.0)),
                float(rng.uniform(0.4, 8.0)),
            )
        )
    for lam, tau, a, b in grid:
        assert abs(pmf_mass(lambda n: poisson_logpmf(n, lam), tol=1e-11) - 1) < 1e-10
        assert abs(pmf_mass(lambda n: nb1_logpmf(n, lam, tau), tol=1e-10) - 1) < 1e-9
        assert abs(pmf_mass(lambda n: nb2_logpmf(n, lam, tau), tol=1e-10) - 1) < 1e-9
        assert abs(pmf_mass(lambda n: nbb_logpmf(n, lam, a, b), tol=1e-9) - 1) < 1e-8
    # beta-mixed kernel moments against the closed forms
    for lam, a, b in ((0.5, 264.818, 5.5), (0.8, 12.0, 3.0), (1.5, 6.0, 1.2)):
        logpmf = lambda n: nbb_logpmf(n, lam, a, b)
        m1 = pmf_moment(logpmf, 1, tol=1e-10)
        m2 = pmf_moment(logpmf, 2, tol=1e-10)
        assert abs(m1 - nbb_mean(lam, a, b)) < 1e-6
        assert abs((m2 - m1 * m1) - nbb_variance(lam, a, b)) < 1e-6


@criterion(3, "mixture-oracle equivalence", budget_seconds=120.0)
def test_criterion_3_oracle_equivalence():
    rng = np.random.default_rng(12)
    for _ in range(50):
        t = int(rng.integers(1, 5))
        counts = tuple(int(c) for c in rng.integers(0, 4, t))
        lambdas = tuple(float(x) for x in rng.uniform(0.05, 1.5, t))
        kappa = float(rng.uniform(0.3, 3.0))
        a = float(rng.uniform(2.5, 60.0))
        b = float(rng.uniform(0.4, 8.0))
        h = PolicyHistory(counts, lambdas)
        assert mvnb_loglik(h, kappa) == pytest.approx(
            mvnb_quad_loglik(counts, lambdas, kappa), abs=1e-8
        )
        assert nbbeta_loglik(h, NbbShape(a, b)) == pytest.approx(
            nbb_quad_loglik(counts, lambdas, a, b), abs=1e-8
        )
        # undiscounted dynamic models must match the static ones bit-for-bit
        assert hf_mvnb_loglik(h, kappa, 1.0) == pytest.approx(
            mvnb_loglik(h, kappa), abs=1e-12
        )
        assert hf_nbb_loglik(h, NbbShape(a, b), 1.0) == pytest.approx(
            nbbeta_loglik(h, NbbShape(a, b)), abs=1e-12
        )


@criterion(4, "most-likely entry level by enumeration", budget_seconds=60.0)
def test_criterion_4_proposition1_enumeration():
    lam, delta = 0.08, 0.1
    checked = 0
    for s in range(2, 7):
        for psi in range(1, s + 1):
            for entry in range(1, s + 1):
                config = BmsConfig(psi=psi, s=s, entry=entry, delta=delta)
                # no-claim probability above one half at every level
                assert math.exp(-lam * relativity(s, config)) > 0.5
                for u in range(0, 6):
                    dist = terminal_level_distribution(config, lam, entry, u)
                    expected = max(entry - u, 1)
                    for level, prob in dist.items():
                        if level != expected:
                            assert prob < dist[expected]
                    checked += 1
    assert checked == 540


@criterion(5, "conditional-covariance oracle", budget_seconds=600.0)
def test_criterion_5_proposition2():
    tau = 0.062
    lam = 0.065
    # flat relativities switch experience rating off entirely
    flat = BmsConfig(psi=6, s=11, entry=1, delta=0.0)
    for level in (1, 5, 11):
        assert bms_covariance(level, lam, lam, 3, flat, "nb1", tau) == 0.0
    # the lag-one display must match the general matrix form
    for level in (1, 3, 5, 8, 11):
        general = bms_covariance(level, lam, lam, 1, FITTED, "nb1", tau)
        direct = bms_covariance_lag1(level, lam, lam, FITTED, "nb1", tau)
        assert general == pytest.approx(direct, abs=1e-10)
    # seeded Monte-Carlo agreement on the 5 x 5 grid
    rng = np.random.default_rng(314159)
    for level in (1, 3, 5, 8, 11):
        for j in (1, 2, 3, 5, 10):
            formula = bms_covariance(level, lam, lam, j, FITTED, "nb1", tau)
            first, later = simulate_bms_pair(
                FITTED, lam, level=level, j=j, n_sims=10_000_000, rng=rng,
                family="nb1", dispersion=tau,
            )
            cov, se = covariance_estimate(first, later)
            assert abs(cov - formula) < 3 * se, (level, j, cov, formula, se)


BETA_TRUE = (-2.3, 0.04, -0.03, 0.42, 0.35, -0.48, 0.39, -0.22, 0.03)


@criterion(6, "simulation recovery", budget_seconds=1800.0)
def test_criterion_6_simulation_recovery():
    # (a) regression recovery under the cross-section model
    ds, _ = simulate(
        SimulationSpec(
            family="poisson", beta=BETA_TRUE, n_policyholders=50_000, seed=601
        )
    )
    result = fit(ds, "poisson")
    assert result.converged
    for i, true in enumerate(BETA_TRUE):
        err = abs(result.params[f"beta_{i}"] - true)
        assert err < 3 * result.std_errors[f"beta_{i}"], f"beta_{i}"

    # (b) heterogeneity recovery under the gamma random-effect model
    ds, _ = simulate(
        SimulationSpec(
            family="mvnb", beta=BETA_TRUE, n_policyholders=50_000, seed=602, kappa=1.3
        )
    )
    result = fit(ds, "mvnb")
    assert result.converged
    assert abs(result.params["kappa"] - 1.3) < 3 * result.std_errors["kappa"]

    # (c) structural lattice recovery for the scale model
    truth = (5, 2, 3)  # (s, psi, entry)
    ds, _ = simulate(
        SimulationSpec(
            family="bms-nb1",
            beta=BETA_TRUE,
            n_policyholders=100_000,
            seed=603,
            tau=0.062,
            delta=0.12,
            structural=(truth[1], truth[0], truth[2]),
        )
    )
    outcome = grid_search(ds, "bms-nb1", GridSpec(s_values=tuple(range(2, 8))))
    best = outcome.best
    assert outcome.structurally_identified
    assert (best.structural["s"], best.structural["psi"], best.structural["entry"]) == truth
    assert best.std_errors is not None
    assert abs(best.params["delta"] - 0.12) < 3 * best.std_errors["delta"]

    # (d) the scale model out-predicts the cross-section model on held-out data
    options = FitOptions(compute_se=False)
    for seed in range(611, 616):
        ds, _ = simulate(
            SimulationSpec(
                family="bms-nb1",
                beta=BETA_TRUE,
                n_policyholders=15_000,
                seed=seed,
                tau=0.062,
                delta=0.12,
                structural=(2, 5, 3),
            )
        )
        fit_ds, val_ds = split(ds, 0.7, seed=seed)
        poisson_fit = fit(fit_ds, "poisson", options=options)
        bms_fit = fit(fit_ds, "bms-nb1", structural=(2, 5, 3), options=options)
        poisson_score = score(predict_premiums(poisson_fit, val_ds))
        bms_score = score(predict_premiums(bms_fit, val_ds))
        assert bms_score.poisson_loglik > poisson_score.poisson_loglik, seed


@criterion(7, "markov structure", budget_seconds=5.0)
def test_criterion_7_markov_structure():
    for lam in (1e-4, 1e-3, 0.01, 0.065, 0.5, 2.0, 10.0):
        P = transition_matrix(lam, FITTED, "nb1", 0.062)
        np.testing.assert_allclose(P.matrix.sum(axis=1), 1.0, atol=1e-12)
        powers = {k: matrix_power(P, k).matrix for k in range(0, 11)}
        for a in range(0, 11):
            for b in range(0, 11 - a):
                np.testing.assert_allclose(
                    powers[a + b], powers[a] @ powers[b], atol=1e-10
                )
        # whenever a claim-free year is more likely than not, the one-step
        # drop dominates every other destination
        for k in range(1, 12):
            mean = lam * relativity(k, FITTED)
            p_zero = math.exp(
                float(nb1_logpmf(0, mean, 0.062))
            )
            if p_zero > 0.5:
                assert P.matrix[k - 1, max(k - 1, 1) - 1] > 0.5


@criterion(8, "manifest reproducibility")
def test_criterion_8_reproducibility(tmp_path):
    sim_cfg = tmp_path / "sim.json"
    sim_cfg.write_text(
        json.dumps(
            {
                "command": "simulate",
                "seed": 88,
                "out": str(tmp_path / "sim"),
                "model": {
                    "family": "bms-nb1",
                    "beta": list(BETA_TRUE),
                    "tau": 0.062,
                    "delta": 0.12,
                    "structural": {"psi": 2, "s": 5, "entry": 3},
                },
                "portfolio": {"n_policyholders": 400},
            }
        ),
        encoding="utf-8",
    )
    assert cli_main(["simulate", "--config", str(sim_cfg)]) == 0
    sim_out = tmp_path / "sim"
    numeric = ["contracts.csv", "history.csv", "experience.csv", "truth.json"]
    before = {name: (sim_out / name).read_bytes() for name in numeric}
    assert cli_main(["simulate", "--config", str(sim_out / "manifest.json")]) == 0
    assert {name: (sim_out / name).read_bytes() for name in numeric} == before

    fit_cfg = tmp_path / "fit.json"
    fit_cfg.write_text(
        json.dumps(
            {
                "command": "fit",
                "seed": 88,
                "out": str(tmp_path / "fit"),
                "dataset": {
                    "contracts": str(sim_out / "contracts.csv"),
                    "history": str(sim_out / "history.csv"),
                    "experience": str(sim_out / "experience.csv"),
                },
                "families": ["poisson", "bms-nb1"],
                "structural": {"psi": 2, "s": 5, "entry": 3},
                "optimizer": {"compute_se": False},
            }
        ),
        encoding="utf-8",
    )
    assert cli_main(["fit", "--config", str(fit_cfg)]) == 0
    fit_out = tmp_path / "fit"
    artifacts = sorted(p.name for p in fit_out.glob("*.json")) + ["comparison.txt"]
    before = {name: (fit_out / name).read_bytes() for name in artifacts}
    assert cli_main(["fit", "--config", str(fit_out / "manifest.json")]) == 0
    assert {name: (fit_out / name).read_bytes() for name in artifacts} == before
