"""Monte Carlo harness for imputation calibration.

Each replicate draws a complete dataset from the interaction model
Y = X - XZ + Z + noise with X, Z independent Normals, fits the full-data
regression (Original), amputes X and XZ jointly, fits the complete cases
(Complete), and then, for each requested imputation method, multiply
imputes the amputed data, fits every completed dataset, and pools the
fits with Rubin's rules. The report records, per replicate, method and
coefficient, the estimate with its 95% interval and whether the interval
covers the truth; the summary aggregates median relative bias, median
interval width, and coverage.

Replicate r derives all of its random streams from (rng_seed, r, stage),
so results are identical no matter how many replicates run, in what
order, or across how many workers.
"""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import t as student_t

from . import mice
from .ampute import AmputeConfig, Mechanism, ampute
from .data import ColumnKind, ColumnSpec, Dataset
from .forest import ForestParams
from .mice import ImputationConfig, ImputeMethod
from .rng import derive_seed, generator

logger = logging.getLogger(__name__)

TRUE_BETA = {"intercept": 0.0, "X": 1.0, "Z": 1.0, "XZ": -1.0}
PATTERN_COLUMNS = ("X", "XZ")
WEIGHT_COLUMN = "Y"

METHOD_LABELS = {"empirical": "Empirical", "normal": "Normal", "pmm": "PMM"}
_METHOD_IMPUTE = {
    "empirical": ImputeMethod.EMPIRICAL_RF,
    "normal": ImputeMethod.NORMAL_RF,
    "pmm": ImputeMethod.PMM,
}


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation scenario.

    ``methods`` names the imputation methods to compare (any of
    "empirical", "normal", "pmm"); Original and Complete are always run.
    """

    n_obs: int = 2000
    n_reps: int = 1000
    mu_x: float = 2.0
    mu_z: float = 2.0
    sd_x: float = 1.0
    sd_z: float = 1.0
    noise_sd: float = 1.0
    mechanism: Mechanism = Mechanism.MCAR
    prop: float = 0.5
    methods: tuple[str, ...] = ("empirical", "normal", "pmm")
    m: int = 10
    maxit: int = 10
    n_trees: int = 10
    pmm_donors: int = 5
    rng_seed: int = 0
    n_workers: int = 1

    def __post_init__(self) -> None:
        if self.n_obs < 10:
            raise ValueError("n_obs must be >= 10")
        if self.n_reps < 1:
            raise ValueError("n_reps must be >= 1")
        if self.n_workers < 1:
            raise ValueError("n_workers must be >= 1")
        for meth in self.methods:
            if meth not in _METHOD_IMPUTE:
                raise ValueError(
                    f"unknown method {meth!r}; choose from "
                    f"{sorted(_METHOD_IMPUTE)}"
                )


def generate(cfg: ScenarioConfig, rng: np.random.Generator) -> Dataset:
    """Complete dataset with columns X, Z, XZ = X*Z and
    Y = X - XZ + Z + Normal(0, noise_sd) noise.

    Draw order: X, then Z, then the noise vector.
    """
    x = rng.normal(cfg.mu_x, cfg.sd_x, cfg.n_obs)
    z = rng.normal(cfg.mu_z, cfg.sd_z, cfg.n_obs)
    xz = x * z
    y = x - xz + z + rng.normal(0.0, cfg.noise_sd, cfg.n_obs)
    specs = [ColumnSpec(name, ColumnKind.CONTINUOUS) for name in ("X", "Z", "XZ", "Y")]
    return Dataset(specs, [x, z, xz, y])


@dataclass(frozen=True)
class FitResult:
    """OLS fit: per-coefficient estimates and standard errors.

    Coefficient names are "intercept" followed by the predictor columns.
    """

    estimates: dict[str, float]
    standard_errors: dict[str, float]
    residual_df: int

    @property
    def coefficients(self) -> tuple[str, ...]:
        return tuple(self.estimates)

    def conf_int(self, name: str, level: float = 0.95) -> tuple[float, float]:
        q = self.estimates[name]
        half = student_t.ppf(0.5 + level / 2, self.residual_df) * self.standard_errors[name]
        return q - half, q + half


def fit_ols(ds: Dataset, response: str = "Y",
            predictors: tuple[str, ...] = ("X", "Z", "XZ")) -> FitResult:
    """Least squares of ``response`` on an intercept plus ``predictors``,
    solved through a QR decomposition; standard errors come from
    sigma^2 (X'X)^-1 with sigma^2 = RSS / (n - p).

    Raises on missing cells, a rank-deficient design, or n <= p.
    """
    names = ("intercept",) + tuple(predictors)
    cols = []
    for c in (response,) + tuple(predictors):
        if ds.spec(c).kind is not ColumnKind.CONTINUOUS:
            raise ValueError(f"column {c!r} must be continuous")
        if ds.missing(c).any():
            raise ValueError(f"column {c!r} has missing values")
        cols.append(ds.column(c))
    y = cols[0]
    n = ds.n_rows
    p = len(predictors) + 1
    if n <= p:
        raise ValueError(f"need more than {p} rows, got {n}")
    X = np.column_stack([np.ones(n)] + cols[1:])

    q_mat, r_mat = np.linalg.qr(X)
    diag = np.abs(np.diag(r_mat))
    if diag.min() <= max(n, p) * np.finfo(np.float64).eps * diag.max():
        raise ValueError("design matrix is rank-deficient")
    beta = solve_triangular(r_mat, q_mat.T @ y)
    resid = y - X @ beta
    rss = float(resid @ resid)
    sigma2 = rss / (n - p)
    r_inv = solve_triangular(r_mat, np.eye(p))
    cov = sigma2 * (r_inv @ r_inv.T)
    ses = np.sqrt(np.maximum(np.diag(cov), 0.0))
    return FitResult(
        estimates={name: float(b) for name, b in zip(names, beta)},
        standard_errors={name: float(s) for name, s in zip(names, ses)},
        residual_df=n - p,
    )


@dataclass(frozen=True)
class PooledCoefficient:
    estimate: float
    within: float
    between: float
    total: float
    df: float
    ci_low: float
    ci_high: float


@dataclass(frozen=True)
class PooledFit:
    """Rubin's-rules combination of m repeated-imputation fits."""

    m: int
    coefficients: dict[str, PooledCoefficient]


def pool(fits: list[FitResult], level: float = 0.95) -> PooledFit:
    """Combine m >= 2 fits: pooled estimate is the mean, total variance
    T = Ubar + (1 + 1/m) B with Ubar the mean squared standard error and
    B the between-fit variance, and the interval uses a Student-t with
    Barnard-Rubin adjusted degrees of freedom (complete-data df taken
    from the fits' residual df).
    """
    m = len(fits)
    if m < 2:
        raise ValueError(f"pooling needs at least 2 fits, got {m}")
    names = fits[0].coefficients
    nu_com = fits[0].residual_df
    for f in fits[1:]:
        if f.coefficients != names or f.residual_df != nu_com:
            raise ValueError("fits must share coefficients and residual df")

    out = {}
    for name in names:
        est = np.array([f.estimates[name] for f in fits])
        se2 = np.array([f.standard_errors[name] ** 2 for f in fits])
        qbar = float(est.mean())
        ubar = float(se2.mean())
        b = float(est.var(ddof=1))
        total = ubar + (1.0 + 1.0 / m) * b
        lam = (1.0 + 1.0 / m) * b / total if total > 0 else 0.0
        nu_obs = (nu_com + 1.0) / (nu_com + 3.0) * nu_com * (1.0 - lam)
        if lam > 0:
            nu_old = (m - 1) / lam**2
            df = nu_old * nu_obs / (nu_old + nu_obs)
        else:
            df = nu_obs
        half = float(student_t.ppf(0.5 + level / 2, df) * np.sqrt(total)) if total > 0 else 0.0
        out[name] = PooledCoefficient(
            estimate=qbar, within=ubar, between=b, total=total, df=float(df),
            ci_low=qbar - half, ci_high=qbar + half,
        )
    return PooledFit(m=m, coefficients=out)


@dataclass(frozen=True)
class RepRecord:
    rep: int
    method: str
    coefficient: str
    estimate: float
    ci_low: float
    ci_high: float
    covered: bool


@dataclass(frozen=True)
class RepFailure:
    rep: int
    stage: str
    error: str


@dataclass(frozen=True)
class SummaryRow:
    method: str
    coefficient: str
    median_rel_bias: float
    median_ci_width: float
    coverage: float
    n_reps: int


@dataclass(frozen=True)
class StudyResult:
    config: ScenarioConfig
    records: tuple[RepRecord, ...]
    summary: tuple[SummaryRow, ...]
    failures: tuple[RepFailure, ...]

    def write_csv(self, out_dir: str | Path) -> None:
        """Write raw.csv and summary.csv (and failures.csv if any)."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "raw.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rep", "method", "coefficient", "estimate",
                        "ci_low", "ci_high", "covered"])
            for r in self.records:
                w.writerow([r.rep, r.method, r.coefficient, repr(r.estimate),
                            repr(r.ci_low), repr(r.ci_high), int(r.covered)])
        with open(out / "summary.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "coefficient", "median_rel_bias",
                        "median_ci_width", "coverage", "n_reps"])
            for s in self.summary:
                w.writerow([s.method, s.coefficient, repr(s.median_rel_bias),
                            repr(s.median_ci_width), repr(s.coverage), s.n_reps])
        if self.failures:
            with open(out / "failures.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["rep", "stage", "error"])
                for f in self.failures:
                    w.writerow([f.rep, f.stage, f.error])


def _single_fit_records(rep: int, method: str, fit: FitResult) -> list[RepRecord]:
    out = []
    for name in fit.coefficients:
        lo, hi = fit.conf_int(name)
        truth = TRUE_BETA[name]
        out.append(RepRecord(rep, method, name, fit.estimates[name], lo, hi,
                             lo <= truth <= hi))
    return out


def _pooled_records(rep: int, method: str, pooled: PooledFit) -> list[RepRecord]:
    out = []
    for name, pc in pooled.coefficients.items():
        truth = TRUE_BETA[name]
        out.append(RepRecord(rep, method, name, pc.estimate, pc.ci_low,
                             pc.ci_high, pc.ci_low <= truth <= pc.ci_high))
    return out


def _run_rep(cfg: ScenarioConfig, rep: int):
    """All records for one replicate, plus failures and per-method timings."""
    records: list[RepRecord] = []
    failures: list[RepFailure] = []
    timings: dict[str, float] = {}

    t0 = time.perf_counter()
    try:
        full = generate(cfg, generator(derive_seed(cfg.rng_seed, rep, 0)))
        records.extend(_single_fit_records(rep, "Original", fit_ols(full)))

        amp_cfg = AmputeConfig(
            pattern_columns=PATTERN_COLUMNS, prop=cfg.prop,
            mechanism=cfg.mechanism, weight_column=WEIGHT_COLUMN,
        )
        amputed = ampute(full, amp_cfg, generator(derive_seed(cfg.rng_seed, rep, 1)))
    except Exception as exc:  # noqa: BLE001 - a failed rep is recorded, not fatal
        failures.append(RepFailure(rep, "generate", f"{type(exc).__name__}: {exc}"))
        return [], failures, timings
    timings["Original"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        cc = amputed.take(amputed.complete_case_mask())
        records.extend(_single_fit_records(rep, "Complete", fit_ols(cc)))
    except Exception as exc:  # noqa: BLE001
        failures.append(RepFailure(rep, "Complete", f"{type(exc).__name__}: {exc}"))
    timings["Complete"] = time.perf_counter() - t0

    for j, meth in enumerate(cfg.methods):
        label = METHOD_LABELS[meth]
        t0 = time.perf_counter()
        try:
            imp_cfg = ImputationConfig(
                m=cfg.m, maxit=cfg.maxit,
                methods={c: _METHOD_IMPUTE[meth] for c in PATTERN_COLUMNS},
                forest_params=ForestParams(n_trees=cfg.n_trees),
                pmm_donors=cfg.pmm_donors,
                rng_seed=derive_seed(cfg.rng_seed, rep, 2 + j),
            )
            result = mice.run(amputed, imp_cfg)
            pooled = pool([fit_ols(d) for d in result.datasets])
            records.extend(_pooled_records(rep, label, pooled))
        except Exception as exc:  # noqa: BLE001
            failures.append(RepFailure(rep, label, f"{type(exc).__name__}: {exc}"))
        timings[label] = time.perf_counter() - t0
    return records, failures, timings


def _rep_worker(args):
    cfg, rep = args
    return rep, _run_rep(cfg, rep)


def summarize(records: tuple[RepRecord, ...] | list[RepRecord]) -> tuple[SummaryRow, ...]:
    """Per method and coefficient (intercept excluded: its true value is
    zero, so relative bias is undefined): median relative bias, median CI
    width, and coverage over the recorded replicates."""
    rows = []
    methods = []
    for r in records:
        if r.method not in methods:
            methods.append(r.method)
    for method in methods:
        for coef in ("X", "Z", "XZ"):
            sub = [r for r in records if r.method == method and r.coefficient == coef]
            if not sub:
                continue
            truth = TRUE_BETA[coef]
            bias = np.array([(r.estimate - truth) / truth for r in sub])
            width = np.array([r.ci_high - r.ci_low for r in sub])
            cov = np.array([r.covered for r in sub])
            rows.append(SummaryRow(
                method=method, coefficient=coef,
                median_rel_bias=float(np.median(bias)),
                median_ci_width=float(np.median(width)),
                coverage=float(cov.mean()),
                n_reps=len(sub),
            ))
    return tuple(rows)


def run_study(cfg: ScenarioConfig, out_dir: str | Path | None = None) -> StudyResult:
    """Run all replicates, aggregate, and optionally write the CSV report.

    With n_workers > 1 the replicates are distributed over a process
    pool; every replicate's streams are derived from (rng_seed, rep), so
    the result is identical to a sequential run.
    """
    all_records: list[RepRecord] = []
    all_failures: list[RepFailure] = []
    totals: dict[str, float] = {}

    def _absorb(rep: int, outcome) -> None:
        records, failures, timings = outcome
        all_records.extend(records)
        all_failures.extend(failures)
        for k, v in timings.items():
            totals[k] = totals.get(k, 0.0) + v
        done = rep + 1
        if done % 20 == 0 or done == cfg.n_reps:
            logger.info("replicate %d/%d done", done, cfg.n_reps)

    if cfg.n_workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.n_workers) as pool_exec:
            for rep, outcome in pool_exec.map(
                _rep_worker, [(cfg, rep) for rep in range(cfg.n_reps)]
            ):
                _absorb(rep, outcome)
    else:
        for rep in range(cfg.n_reps):
            _absorb(rep, _run_rep(cfg, rep))

    for label, seconds in totals.items():
        logger.info("%s: %.1f s total", label, seconds)
    if all_failures:
        logger.warning("%d stage failure(s) recorded", len(all_failures))

    result = StudyResult(
        config=cfg,
        records=tuple(all_records),
        summary=summarize(all_records),
        failures=tuple(all_failures),
    )
    if out_dir is not None:
        result.write_csv(out_dir)
    return result
