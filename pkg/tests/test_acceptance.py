"""Acceptance gate: one test per shipped guarantee, each printing PASS/FAIL.

The slow Monte Carlo checks (effect recovery, CI coverage, end-to-end runs)
carry the "slow" marker; deselect them with -m "not slow" during quick
iteration. Everything here goes through public entry points only, except
that reference oracles are recomputed independently inside the tests.
"""

from __future__ import annotations

import json
import sys
import time
import warnings

import numpy as np
import pandas as pd
import pytest

from helpers import (
    balanced_panel,
    coef_fit,
    dummy_logistic_mle,
    prob_fit,
    random_fe_instance,
)
from panelmsm import balance, bootstrap as bs, cli, feglm, outcome, pipeline
from panelmsm import sensitivity, simulate
from panelmsm import weights as wt
from panelmsm.errors import SeparationError


def _report(capsys, ok: bool, label: str) -> None:
    # suspend capture so the verdict line always reaches the terminal
    with capsys.disabled():
        sys.stdout.write("\n" + ("PASS " if ok else "FAIL ") + label + "\n")
    assert ok, label


def _run_config(**over) -> pipeline.RunConfig:
    kw = dict(
        roles=pipeline.Roles(covariates=("x",), province="province"),
        bootstrap_b=1,
        seed=7,
    )
    kw.update(over)
    return pipeline.RunConfig(**kw)


def test_criterion_01_feglm_equals_dummy_variable_mle(capsys):
    rng = np.random.default_rng(20240801)
    t0 = time.perf_counter()
    worst = 0.0
    done = 0
    while done < 25:
        d, X, y, unit = random_fe_instance(rng, max_units=30, max_periods=15)
        try:
            fit = feglm.fit(
                d,
                feglm.ModelSpec(response="y", terms=("x0", "x1"), fe_group="unit"),
            )
        except SeparationError:
            continue  # no finite MLE on either route; draw a fresh instance
        oracle = dummy_logistic_mle(y, X, unit)
        worst = max(worst, float(np.max(np.abs(fit.params - oracle))))
        done += 1
    dt = time.perf_counter() - t0
    _report(
        capsys,
        worst < 1e-6 and dt < 10.0,
        f"criterion 1: fe-glm vs dummy-variable mle on 25 instances "
        f"(worst {worst:.2e}, {dt:.1f}s)",
    )


def test_criterion_02_analytic_score_matches_central_differences(capsys):
    rng = np.random.default_rng(20240802)
    worst = 0.0
    for family in ("logistic", "gaussian"):
        for _ in range(10):
            d, X, y, unit = random_fe_instance(rng, max_units=12, max_periods=10)
            spec = feglm.ModelSpec(response="y", terms=("x0", "x1"), family=family)
            beta = rng.normal(scale=0.5, size=2)
            _, score = feglm.loglik_and_score(d, spec, beta)
            h = 1e-6
            for k in range(2):
                e = np.zeros(2)
                e[k] = h
                lp, _ = feglm.loglik_and_score(d, spec, beta + e)
                lm, _ = feglm.loglik_and_score(d, spec, beta - e)
                fd = (lp - lm) / (2 * h)
                worst = max(worst, abs(score[k] - fd) / max(1.0, abs(fd)))
    _report(
        capsys,
        worst < 1e-5,
        f"criterion 2: analytic score vs central differences, 10 instances "
        f"per family (worst rel err {worst:.2e})",
    )


def test_criterion_03_weight_identities(capsys):
    # (a) numerator model identical to denominator model: weights exactly 1
    rng = np.random.default_rng(20240803)
    n_units, n_periods = 6, 14
    d = balanced_panel(
        n_units, n_periods,
        treat=rng.integers(0, 2, n_units * n_periods).astype(float),
    )
    d, fit = prob_fit(d, rng.uniform(0.2, 0.8, n_units * n_periods), "treat")
    raw_same = wt.stabilized_weights(d, fit, fit, wt.WeightConfig(k=4)).raw
    ones_exact = bool(np.all(raw_same[np.isfinite(raw_same)] == 1.0))

    # (b) sliding-window recursion to 1e-12 on independent random models
    k = 4
    n = n_units * n_periods
    t = d.frame["treat"].to_numpy()
    p_num = rng.uniform(0.3, 0.7, n)
    p_den = rng.uniform(0.2, 0.8, n)
    d2, num_fit = prob_fit(d, p_num, "treat", col="znum")
    d2, den_fit = prob_fit(d2, p_den, "treat", col="zden")
    raw = wt.stabilized_weights(d2, num_fit, den_fit, wt.WeightConfig(k=k)).raw
    r = np.where(t == 1.0, p_num, 1 - p_num) / np.where(t == 1.0, p_den, 1 - p_den)
    worst = 0.0
    for u in range(n_units):
        lo = u * n_periods
        for j in range(k + 1, n_periods):
            i = lo + j
            worst = max(
                worst, abs(raw[i] * r[i - k - 1] - raw[i - 1] * r[i]) / abs(raw[i])
            )
    recursion_ok = worst < 1e-12

    # (c) mean raw weight near 1 on the realism preset, via the public path
    arts = pipeline.run_estimation(
        _run_config(), simulate.generate_panel(simulate.preset("realism"))
    )
    raw_real = arts.weights.raw
    mean_raw = float(raw_real[np.isfinite(raw_real)].mean())
    _report(
        capsys,
        ones_exact and recursion_ok and abs(mean_raw - 1.0) < 0.05,
        f"criterion 3: weight identities (identical models exact, recursion "
        f"{worst:.1e}, realism mean raw {mean_raw:.4f})",
    )


def test_criterion_04_balance_formulas_and_preset_balance(capsys):
    smd_hand = balance.smd(
        np.array([2.0, 4.0, 1.0, 3.0]), np.array([1.0, 1.0, 0.0, 0.0])
    )
    hand_ok = abs(smd_hand - 1.0 / np.sqrt(2.0)) < 1e-9
    _, ess_equal = balance.ess(np.full(8, 2.0))
    _, ess_skew = balance.ess(np.array([1.0, 1.0, 1.0, 9.0]))
    ess_ok = abs(ess_equal - 100.0) < 1e-9 and abs(ess_skew - 100.0 * 144 / 84 / 4) < 1e-9

    arts = pipeline.run_estimation(
        _run_config(), simulate.generate_panel(simulate.preset("confounded-hard"))
    )
    rows = arts.balance.rows
    unweighted = max(r["smd_unweighted"] for r in rows)
    weighted = max(
        max(r["smd_weighted_raw"], r["smd_weighted_truncated"]) for r in rows
    )
    _report(
        capsys,
        hand_ok and ess_ok and weighted < 0.1 and unweighted > 0.25,
        f"criterion 4: balance formulas to 1e-9; confounded-hard smd "
        f"unweighted {unweighted:.3f} -> weighted {weighted:.3f}",
    )


@pytest.mark.slow
def test_criterion_05_effect_recovery_over_twenty_runs(capsys):
    truth_pp = 100.0 * simulate.oracle_truth(
        simulate.preset("confounded-hard"), "current"
    )
    cfg = _run_config()
    est_pp = pipeline.make_estimator(cfg, statistic="incremental_pp")
    ests, ses, naives, walls = [], [], [], []
    for r in range(20):
        t0 = time.perf_counter()
        d = simulate.generate_panel(simulate.preset("confounded-hard", seed=204 + r))
        boot = bs.pairs_cluster_bootstrap(est_pp, d, B=200, seed=7)
        naive = pipeline.run_estimation(cfg, d).naive.incremental_effect
        walls.append(time.perf_counter() - t0)
        ests.append(boot.estimate)
        ses.append(boot.se)
        naives.append(naive)
    bias = float(np.mean(ests) - truth_pp)
    two_se = 2.0 * float(np.mean(ses))
    naive_bias = float(np.mean(naives) - truth_pp)
    naive_sd = float(np.std(naives, ddof=1))
    _report(
        capsys,
        abs(bias) <= two_se
        and abs(bias) < 1.0
        and abs(naive_bias) > 2.0 * naive_sd
        and max(walls) < 300.0,
        f"criterion 5: recovery over 20 runs (bias {bias:+.2f}pp vs 2se "
        f"{two_se:.2f}pp and 1pp cap; naive bias {naive_bias:+.2f}pp vs "
        f"2sd {2 * naive_sd:.2f}pp; worst run {max(walls):.0f}s)",
    )


def test_criterion_06_percent_change_arithmetic(capsys):
    a = outcome.percent_change(
        coef_fit(terms=("treat",), params=[0.0656], family="gaussian")
    )
    b = outcome.percent_change(
        coef_fit(terms=("treat",), params=[0.0733], family="gaussian")
    )
    _report(
        capsys,
        round(a, 2) == 6.78 and round(b, 2) == 7.61,
        f"criterion 6: percent change 0.0656 -> {a:.2f}%, 0.0733 -> {b:.2f}%",
    )


def test_criterion_07_khm_sweep_identities(fitted_small, capsys):
    cfg, arts = fitted_small
    spec = outcome.OutcomeSpec(
        outcome="y",
        treatment_terms=("treat",),
        family="logistic",
        weights=arts.weights.truncated,
    )
    curve = sensitivity.phi_sweep(
        arts.dataset, spec, arts.den_fit, phis=(-0.5, 0.0, 0.5), B=12, seed=7
    )
    zero_exact = curve.estimates[1] == arts.effect.coefficient

    gauss = sensitivity.phi_sweep(
        arts.dataset, spec, arts.den_fit, phis=(-1.0, 0.0, 1.0), B=12, seed=7,
        engine="gaussian",
    )
    e = gauss.estimates
    affine_dev = abs(e[1] - 0.5 * (e[0] + e[2]))

    ramp = sensitivity.selection_ramp(arts.dataset, arts.den_fit)
    worst_lin = 0.0
    for p1, p2 in ((0.4, 0.3), (-0.8, 0.5), (1.3, -0.6)):
        lhs = (
            sensitivity.corrected_outcome(arts.dataset, arts.den_fit, "y", p1, ramp)
            + sensitivity.corrected_outcome(arts.dataset, arts.den_fit, "y", p2, ramp)
            - sensitivity.corrected_outcome(arts.dataset, arts.den_fit, "y", 0.0, ramp)
        )
        rhs = sensitivity.corrected_outcome(
            arts.dataset, arts.den_fit, "y", p1 + p2, ramp
        )
        fin = np.isfinite(rhs)
        worst_lin = max(worst_lin, float(np.max(np.abs(lhs[fin] - rhs[fin]))))
    _report(
        capsys,
        zero_exact and affine_dev < 1e-10 and worst_lin < 1e-12,
        f"criterion 7: khm sweep (phi=0 bit-exact {zero_exact}, gaussian "
        f"affinity dev {affine_dev:.1e}, row linearity {worst_lin:.1e})",
    )


def test_criterion_08_petersen_diagnostic_flags(capsys):
    results = {}
    for name in ("realism", "positivity-violation"):
        cfg = _run_config(bootstrap_b=200, seed=11, positivity_b=200)
        t0 = time.perf_counter()
        d = simulate.generate_panel(simulate.preset(name))
        arts = pipeline.run_estimation(cfg, d)
        diag = pipeline.run_positivity(cfg, arts)
        results[name] = (diag, time.perf_counter() - t0)
    diag_ok, dt_ok = results["realism"]
    diag_bad, dt_bad = results["positivity-violation"]
    well_specified = (
        abs(diag_ok.bias) < 0.5 * diag_ok.se_reference and not diag_ok.flag
    )
    _report(
        capsys,
        well_specified and diag_bad.flag and dt_ok < 180 and dt_bad < 180,
        f"criterion 8: petersen well-specified |bias|/se "
        f"{abs(diag_ok.bias) / diag_ok.se_reference:.2f} flag {diag_ok.flag} "
        f"({dt_ok:.0f}s); violating flag {diag_bad.flag} ({dt_bad:.0f}s)",
    )


def test_criterion_09a_bootstrap_determinism(small_sim, capsys):
    cfg = _run_config(seed=13)
    est = pipeline.make_estimator(cfg, statistic="incremental_pp")
    a = bs.pairs_cluster_bootstrap(est, small_sim, B=30, seed=13)
    b = bs.pairs_cluster_bootstrap(est, small_sim, B=30, seed=13)
    identical = (
        a.replicates.tobytes() == b.replicates.tobytes()
        and (a.estimate, a.se, a.ci_low, a.ci_high) == (b.estimate, b.se, b.ci_low, b.ci_high)
    )
    _report(capsys, identical, "criterion 9a: bootstrap byte-identical under fixed seed")


@pytest.mark.slow
def test_criterion_09b_coverage_on_linear_unconfounded_dgp(capsys):
    dgp = dict(
        n_units=100, n_periods=20, alpha_sd=0.5, rho=0.5, gamma=0.0,
        a0=-0.8, a_lag=0.4, b_x=0.0, c0=0.2, c_t=(0.5,), c_x=0.5,
        c_alpha=0.0, alpha_x_sd=0.0, family="gaussian",
    )
    truth = 0.5  # no confounding and a linear outcome: coefficient is exact
    cfg = _run_config(family="gaussian", bootstrap_b=200, seed=5)
    est = pipeline.make_estimator(cfg, statistic="coefficient")
    hits = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for s in range(200):
            d = simulate.generate_panel(simulate.DgpConfig(**dgp, seed=1000 + s))
            boot = bs.pairs_cluster_bootstrap(est, d, B=200, seed=5)
            hits += boot.ci_low <= truth <= boot.ci_high
    _report(
        capsys,
        hits >= 180,
        f"criterion 9b: 95% ci coverage {hits}/200 on the unconfounded "
        f"linear dgp (need >= 180)",
    )


def _all_config(tmp_path):
    doc = {
        "schema_version": 1,
        "data": {"covariates": ["x"], "province": "province"},
        "inference": {"bootstrap": 200, "seed": 11},
        "sensitivity": {"phis": [-0.5, 0.0, 0.5], "bootstrap": 40},
        "positivity": {"bootstrap": 40},
    }
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(doc))
    return p


@pytest.mark.slow
def test_criterion_10_end_to_end_null_and_confounded(tmp_path, capsys):
    cfg_path = _all_config(tmp_path)
    covered = {}
    deterministic = True
    for name in ("null", "confounded-hard"):
        csv = tmp_path / f"{name}.csv"
        assert cli.main(["simulate", "--preset", name, "--out", str(csv)]) == 0
        outs = []
        for run in ("a", "b"):
            out = tmp_path / f"{name}-{run}"
            rc = cli.main(
                ["all", "--config", str(cfg_path), "--data", str(csv),
                 "--out", str(out)]
            )
            assert rc == 0
            outs.append(out)
        for fname in ("results.csv", "weights.csv", "sensitivity.csv"):
            deterministic &= (
                (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()
            )

        # primary-estimand CI on the incremental scale from the same artifacts
        d = pipeline.load_panel(csv, pipeline.Roles(covariates=("x",),
                                                    province="province"))
        est = pipeline.make_estimator(_run_config(seed=11),
                                      statistic="incremental_pp")
        boot = bs.pairs_cluster_bootstrap(est, d, B=200, seed=11)
        truth = (
            0.0 if name == "null"
            else 100.0 * simulate.oracle_truth(simulate.preset(name), "current")
        )
        covered[name] = (boot.ci_low, truth, boot.ci_high)

        results = pd.read_csv(outs[0] / "results.csv")
        msm = results[results["model"] == "msm"].iloc[0]
        if name == "null":
            covered["null-coef"] = (msm["ci_low"], 0.0, msm["ci_high"])

    checks = [lo <= mid <= hi for lo, mid, hi in covered.values()]
    _report(
        capsys,
        all(checks) and deterministic,
        "criterion 10: end-to-end (null ci covers 0: "
        f"{covered['null'][0]:.2f}..{covered['null'][2]:.2f}pp; "
        f"confounded ci {covered['confounded-hard'][0]:.2f}.."
        f"{covered['confounded-hard'][2]:.2f}pp covers "
        f"{covered['confounded-hard'][1]:.2f}pp; deterministic "
        f"{deterministic})",
    )
