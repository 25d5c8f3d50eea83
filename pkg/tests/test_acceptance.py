"""Acceptance gate: one test per criterion, each printing its clause checks.

Criteria 1-6 are fast deterministic properties. Criteria 7-11 measure the
desk-scale Monte Carlo study (200 replicates of n=1000, m=10, maxit=10,
10 trees) under MCAR and right-tailed MAR; the two studies are session
fixtures shared by the criteria that read them. Criterion 12 checks the
out-of-bag exclusion rate of every imputation step across a 10-rep run.
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from rfimp import errordist, mice
from rfimp.ampute import AmputeConfig, Mechanism, ampute, missingness_probabilities
from rfimp.data import ColumnSpec, ColumnKind, Dataset
from rfimp.forest import ForestParams, fit
from rfimp.mice import ImputationConfig, ImputeMethod
from rfimp.rng import derive_seed, generator
from rfimp.simstudy import (
    PATTERN_COLUMNS,
    TRUE_BETA,
    ScenarioConfig,
    fit_ols,
    generate,
    pool,
    run_study,
)

from test_forest import _brute_oob, _random_problem
from test_simstudy import _fit_with
from conftest import assert_datasets_equal

DESK = dict(n_obs=1000, n_reps=200, m=10, maxit=10, n_trees=10,
            pmm_donors=5, methods=("empirical", "normal", "pmm"),
            prop=0.5, rng_seed=11, n_workers=1)


@pytest.fixture(scope="session")
def mcar_study():
    return run_study(ScenarioConfig(mechanism=Mechanism.MCAR, **DESK))


@pytest.fixture(scope="session")
def mar_study():
    return run_study(ScenarioConfig(mechanism=Mechanism.MAR_RIGHT, **DESK))


def _rows(study):
    return {(r.method, r.coefficient): r for r in study.summary}


def _check(number: str, clauses: list[tuple[str, bool]]) -> None:
    failed = [text for text, ok in clauses if not ok]
    for text, ok in clauses:
        print(f"ACCEPTANCE {number} {'PASS' if ok else 'FAIL'}: {text}")
    verdict = "FAIL" if failed else "PASS"
    print(f"ACCEPTANCE {number} {verdict}")
    assert not failed, f"criterion {number}: {len(failed)} clause(s) failed: " + "; ".join(failed)


def test_criterion_01_forest_oob_matches_brute_force():
    t0 = time.perf_counter()
    rng = np.random.default_rng(42)
    for _ in range(20):
        X, y, task, levels, params = _random_problem(rng)
        forest = fit(X, y, task=task, levels=levels, params=params,
                     n_classes=3 if task.name == "CLASSIFICATION" else None)
        got_vals, got_has = forest.oob_predictions()
        exp_vals, exp_has = _brute_oob(forest, X)
        assert np.array_equal(got_has, exp_has)
        assert np.array_equal(got_vals, exp_vals, equal_nan=True)
    elapsed = time.perf_counter() - t0
    _check("01", [
        ("OOB predictions equal brute-force recomputation on 20 datasets", True),
        (f"runtime {elapsed:.2f} s < 5 s", elapsed < 5.0),
    ])


def test_criterion_02_error_pool_identities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    X = rng.normal(size=(80, 3))
    y = X[:, 0] - X[:, 1] + rng.normal(size=80)
    forest = fit(X, y, params=ForestParams(n_trees=6, rng_seed=1))
    dist = errordist.build(forest, y)
    const_forest = fit(X, np.full(80, 3.0), params=ForestParams(n_trees=6, rng_seed=2))
    const_dist = errordist.build(const_forest, np.full(80, 3.0))
    elapsed = time.perf_counter() - t0
    _check("02", [
        ("pool size plus exclusions equals n", dist.n_pool + dist.n_excluded == 80),
        ("mean squared error of pool equals oob_mse to 1e-12",
         abs(dist.oob_mse - float(np.mean(dist.errors ** 2))) <= 1e-12),
        ("constant target gives an all-zero pool",
         np.all(const_dist.errors == 0.0)),
        (f"runtime {elapsed:.2f} s < 1 s", elapsed < 1.0),
    ])


def test_criterion_03_mice_contracts():
    t0 = time.perf_counter()
    rng = np.random.default_rng(12)
    n = 120
    x = rng.normal(size=n)
    y = 2 * x + rng.normal(size=n)
    y_miss = rng.random(n) < 0.3
    ds = Dataset([ColumnSpec("x", ColumnKind.CONTINUOUS),
                  ColumnSpec("y", ColumnKind.CONTINUOUS)],
                 [x, y], [np.zeros(n, bool), y_miss])
    cfg = ImputationConfig(m=3, maxit=3, forest_params=ForestParams(n_trees=5),
                           rng_seed=4)
    res_a = mice.run(ds, cfg)
    res_b = mice.run(ds, cfg)
    res_big = mice.run(ds, ImputationConfig(
        m=5, maxit=3, forest_params=ForestParams(n_trees=5), rng_seed=4))

    preserved = all(
        np.array_equal(out.column("y")[~y_miss], y[~y_miss])
        and np.array_equal(out.column("x"), x)
        and out.is_complete()
        for out in res_a.datasets
    )
    deterministic = all(
        np.array_equal(a.column("y"), b.column("y"))
        for a, b in zip(res_a.datasets, res_b.datasets)
    )
    independent = all(
        np.array_equal(a.column("y"), c.column("y"))
        for a, c in zip(res_a.datasets, res_big.datasets[:3])
    )

    full = Dataset([ColumnSpec("x", ColumnKind.CONTINUOUS),
                    ColumnSpec("y", ColumnKind.CONTINUOUS)], [x, y])
    res_full = mice.run(full, cfg)
    identity = True
    try:
        for out in res_full.datasets:
            assert_datasets_equal(out, full)
    except AssertionError:
        identity = False
    elapsed = time.perf_counter() - t0
    _check("03", [
        ("observed cells preserved and outputs complete", preserved),
        ("identical config reproduces identical imputations", deterministic),
        ("chains unchanged when more imputations are added", independent),
        ("complete input returns identical copies", identity),
        (f"runtime {elapsed:.2f} s < 10 s", elapsed < 10.0),
    ])


def test_criterion_04_amputation_calibration():
    t0 = time.perf_counter()
    n = 100_000
    rng = np.random.default_rng(20)
    x = rng.normal(2, 1, n)
    z = rng.normal(2, 1, n)
    y = x - x * z + z + rng.normal(size=n)
    ds = Dataset([ColumnSpec(c, ColumnKind.CONTINUOUS) for c in ("X", "XZ", "Y")],
                 [x, x * z, y])
    mcar = ampute(ds, AmputeConfig(pattern_columns=("X", "XZ"), prop=0.5,
                                   rng_seed=1))
    mar_cfg = AmputeConfig(pattern_columns=("X", "XZ"), prop=0.5,
                           mechanism=Mechanism.MAR_RIGHT, weight_column="Y",
                           rng_seed=2)
    mar = ampute(ds, mar_cfg)
    mcar_frac = float(mcar.missing("X").mean())
    mar_frac = float(mar.missing("X").mean())
    probs = missingness_probabilities(ds, mar_cfg)
    order = np.argsort(y)
    monotone = bool(np.all(np.diff(probs[order]) >= 0)) and bool(
        y[mar.missing("X")].mean() > y[~mar.missing("X")].mean())
    elapsed = time.perf_counter() - t0
    _check("04", [
        (f"MCAR proportion {mcar_frac:.4f} within 0.5 +/- 0.01",
         abs(mcar_frac - 0.5) <= 0.01),
        (f"MAR proportion {mar_frac:.4f} within 0.5 +/- 0.01",
         abs(mar_frac - 0.5) <= 0.01),
        ("MAR selection increases monotonically with Y", monotone),
        (f"runtime {elapsed:.2f} s < 10 s", elapsed < 10.0),
    ])


def test_criterion_05_pooling_arithmetic():
    t0 = time.perf_counter()
    import math
    pooled = pool([_fit_with(1.0, math.sqrt(0.5)), _fit_with(2.0, math.sqrt(0.5))])
    pc = pooled.coefficients["X"]
    same = pool([_fit_with(1.3, 0.2) for _ in range(4)]).coefficients["X"]
    elapsed = time.perf_counter() - t0
    _check("05", [
        ("pooled estimate 1.5 exact to 1e-12", abs(pc.estimate - 1.5) <= 1e-12),
        ("between variance 0.5 exact to 1e-12", abs(pc.between - 0.5) <= 1e-12),
        ("total variance 1.25 exact to 1e-12", abs(pc.total - 1.25) <= 1e-12),
        ("identical fits collapse to B=0 and T=Ubar",
         same.between == 0.0 and abs(same.total - 0.04) <= 1e-15),
        (f"runtime {elapsed:.2f} s < 1 s", elapsed < 1.0),
    ])


def test_criterion_06_noise_free_ols_exactness():
    cfg = ScenarioConfig(n_obs=500, n_reps=1, noise_sd=0.0, rng_seed=3)
    ds = generate(cfg, generator(derive_seed(3, 0, 0)))
    fit_res = fit_ols(ds)
    errs = {name: abs(fit_res.estimates[name] - truth)
            for name, truth in TRUE_BETA.items()}
    _check("06", [
        (f"{name} recovered to 1e-8 (|err| = {err:.2e})", err <= 1e-8)
        for name, err in errs.items()
    ])


def test_criterion_07_mcar_x_bias_and_coverage(mcar_study):
    rows = _rows(mcar_study)
    emp, norm, pmm = rows[("Empirical", "X")], rows[("Normal", "X")], rows[("PMM", "X")]
    _check("07", [
        (f"Empirical X median relative bias {emp.median_rel_bias:+.3%} within +/-2%",
         abs(emp.median_rel_bias) <= 0.02),
        (f"Normal X median relative bias {norm.median_rel_bias:+.3%} within +/-2%",
         abs(norm.median_rel_bias) <= 0.02),
        (f"Empirical X coverage {emp.coverage:.1%} in (93%, 99.5%)",
         0.93 < emp.coverage < 0.995),
        (f"Normal X coverage {norm.coverage:.1%} in (93%, 99.5%)",
         0.93 < norm.coverage < 0.995),
        (f"PMM X median relative bias {pmm.median_rel_bias:+.3%} positive and > +1%",
         pmm.median_rel_bias > 0.01),
        (f"PMM X coverage {pmm.coverage:.1%} < 90%", pmm.coverage < 0.90),
    ])


def test_criterion_08_mcar_xz_bias_and_coverage(mcar_study):
    rows = _rows(mcar_study)
    clauses = []
    for method in ("Empirical", "Normal", "PMM"):
        row = rows[(method, "XZ")]
        clauses.append(
            (f"{method} XZ median relative bias {row.median_rel_bias:+.3%} within +/-3%",
             abs(row.median_rel_bias) <= 0.03))
        clauses.append(
            (f"{method} XZ coverage {row.coverage:.1%} in (90%, 98%)",
             0.90 < row.coverage < 0.98))
    _check("08", clauses)


def test_criterion_09_mcar_width_ordering(mcar_study):
    rows = _rows(mcar_study)
    w = {m: rows[(m, "X")].median_ci_width
         for m in ("Original", "PMM", "Empirical", "Normal")}
    rel = abs(w["Empirical"] - w["Normal"]) / w["Normal"]
    _check("09", [
        (f"width(Original)={w['Original']:.4f} < width(PMM)={w['PMM']:.4f}",
         w["Original"] < w["PMM"]),
        (f"width(PMM)={w['PMM']:.4f} < width(Empirical)={w['Empirical']:.4f}",
         w["PMM"] < w["Empirical"]),
        (f"width(Empirical) within 15% of width(Normal)={w['Normal']:.4f} "
         f"(relative gap {rel:.1%})", rel <= 0.15),
    ])


def test_criterion_10_mar_x_bias_and_coverage(mar_study):
    rows = _rows(mar_study)
    cc = rows[("Complete", "X")]
    emp, norm, pmm = rows[("Empirical", "X")], rows[("Normal", "X")], rows[("PMM", "X")]
    _check("10", [
        (f"Complete-case X median relative bias {cc.median_rel_bias:+.3%} < -8%",
         cc.median_rel_bias < -0.08),
        (f"Complete-case X coverage {cc.coverage:.1%} < 25%", cc.coverage < 0.25),
        (f"Empirical X median relative bias {emp.median_rel_bias:+.3%} within +/-3%",
         abs(emp.median_rel_bias) <= 0.03),
        (f"Normal X median relative bias {norm.median_rel_bias:+.3%} within +/-3%",
         abs(norm.median_rel_bias) <= 0.03),
        (f"Empirical X coverage {emp.coverage:.1%} > 93%", emp.coverage > 0.93),
        (f"Normal X coverage {norm.coverage:.1%} > 93%", norm.coverage > 0.93),
        (f"PMM X coverage {pmm.coverage:.1%} < 92%", pmm.coverage < 0.92),
    ])


def test_criterion_11_mar_xz_bias_and_coverage(mar_study):
    rows = _rows(mar_study)
    cc = rows[("Complete", "XZ")]
    emp, norm, pmm = rows[("Empirical", "XZ")], rows[("Normal", "XZ")], rows[("PMM", "XZ")]
    _check("11", [
        (f"Complete-case XZ median relative bias {cc.median_rel_bias:+.3%} < -4%",
         cc.median_rel_bias < -0.04),
        (f"Complete-case XZ coverage {cc.coverage:.1%} < 10%", cc.coverage < 0.10),
        (f"Empirical XZ median relative bias {emp.median_rel_bias:+.3%} within +/-2%",
         abs(emp.median_rel_bias) <= 0.02),
        (f"Normal XZ median relative bias {norm.median_rel_bias:+.3%} within +/-2%",
         abs(norm.median_rel_bias) <= 0.02),
        (f"PMM XZ coverage {pmm.coverage:.1%} below Empirical {emp.coverage:.1%}",
         pmm.coverage < emp.coverage),
    ])


def test_criterion_12_small_forest_oob_exclusion():
    fractions = []
    for rep in range(10):
        cfg = ScenarioConfig(mechanism=Mechanism.MCAR, **DESK)
        full = generate(cfg, generator(derive_seed(cfg.rng_seed, rep, 0)))
        amp_cfg = AmputeConfig(pattern_columns=PATTERN_COLUMNS, prop=0.5,
                               mechanism=Mechanism.MCAR)
        amputed = ampute(full, amp_cfg, generator(derive_seed(cfg.rng_seed, rep, 1)))
        imp_cfg = ImputationConfig(
            m=10, maxit=10,
            methods={c: ImputeMethod.EMPIRICAL_RF for c in PATTERN_COLUMNS},
            forest_params=ForestParams(n_trees=10),
            rng_seed=derive_seed(cfg.rng_seed, rep, 2),
        )
        res = mice.run(amputed, imp_cfg)
        fractions.extend(res.diagnostics.oob_exclusion_fractions)
    worst = max(fractions)
    share_over = float(np.mean(np.asarray(fractions) >= 0.01))
    _check("12", [
        (f"all {len(fractions)} imputation steps excluded < 1% of rows "
         f"(worst {worst:.2%}, {share_over:.1%} of steps at or above 1%)",
         worst < 0.01),
    ])
