"""Multiple imputation by chained equations.

Each of the m imputations runs an independent chain: missing cells start
as random draws from the observed values of their column, then every
incomplete column is re-imputed in turn from all other columns, for a
fixed number of iterations. Between-imputation variability comes from
three sources per column step: for the forest methods the training set is
an outer bootstrap of the observed rows (parameter uncertainty), the
forest itself is random, and the continuous draws add either an
out-of-bag error resampled from the forest's empirical error pool
(EMPIRICAL_RF) or a Normal error with the pool's mean squared error
(NORMAL_RF). Categorical columns are drawn from the forest's predicted
class probabilities under both forest methods. PMM instead draws
regression parameters from their posterior and copies the observed value
of a near-match, and RANDOM_SAMPLE just resamples observed values.

Chain k derives its generator from (rng_seed, k), so results do not
depend on how many imputations run or in what order.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping

import numpy as np
from scipy.linalg import cho_solve

from . import errordist
from .data import ColumnKind, Dataset
from .forest import Forest, ForestParams, Task, fit
from .rng import derive_seed, generator


class ImputeMethod(Enum):
    EMPIRICAL_RF = "empirical_rf"
    NORMAL_RF = "normal_rf"
    PMM = "pmm"
    RANDOM_SAMPLE = "random_sample"


@dataclass(frozen=True)
class ImputationConfig:
    """Settings for one multiple-imputation run.

    ``methods`` assigns a method per column name; unlisted incomplete
    columns default to EMPIRICAL_RF. ``visit_sequence`` must name every
    incomplete column exactly once (default: dataset order). The forest
    seed inside ``forest_params`` is ignored; every forest drawn during a
    chain gets a fresh seed from the chain's generator.
    """

    m: int = 10
    maxit: int = 10
    methods: Mapping[str, ImputeMethod] | None = None
    forest_params: ForestParams = ForestParams()
    pmm_donors: int = 5
    visit_sequence: tuple[str, ...] | None = None
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.maxit < 1:
            raise ValueError("maxit must be >= 1")
        if self.pmm_donors < 1:
            raise ValueError("pmm_donors must be >= 1")


@dataclass
class ImputationDiagnostics:
    """Counters accumulated over all chains of one run.

    ``oob_exclusion_fractions`` records, for every continuous forest
    column step, the fraction of training rows that had no out-of-bag
    prediction and were therefore left out of the error pool.
    """

    empty_pool_fallbacks: int = 0
    ridge_fallbacks: int = 0
    oob_exclusion_fractions: list[float] = field(default_factory=list)

    @property
    def max_exclusion_fraction(self) -> float:
        return max(self.oob_exclusion_fractions, default=0.0)


@dataclass(frozen=True)
class ImputationResult:
    """m completed datasets plus per-iteration chain traces.

    ``chain_means[k, t, j]`` is the mean of the imputed cells of
    ``trace_columns[j]`` after iteration t of chain k (categorical
    columns are traced on their integer level codes).
    """

    datasets: tuple[Dataset, ...]
    chain_means: np.ndarray
    trace_columns: tuple[str, ...]
    diagnostics: ImputationDiagnostics

    @property
    def m(self) -> int:
        return len(self.datasets)


def _resolve_methods(ds: Dataset, visit: tuple[str, ...],
                     methods: Mapping[str, ImputeMethod] | None) -> dict[str, ImputeMethod]:
    given = dict(methods) if methods else {}
    for name in given:
        ds.col_index(name)
    out = {}
    for name in visit:
        method = given.get(name, ImputeMethod.EMPIRICAL_RF)
        if method is ImputeMethod.PMM and not ds.spec(name).is_continuous:
            raise ValueError(f"PMM cannot impute categorical column {name!r}")
        out[name] = method
    return out


class _Chain:
    """Mutable state of one imputation chain."""

    def __init__(self, ds: Dataset, visit: tuple[str, ...],
                 methods: dict[str, ImputeMethod], cfg: ImputationConfig,
                 rng: np.random.Generator, diag: ImputationDiagnostics):
        self.ds = ds
        self.visit = visit
        self.methods = methods
        self.cfg = cfg
        self.rng = rng
        self.diag = diag
        self.state = {name: ds.column(name).astype(np.float64) for name in ds.names}
        self.obs_idx = {}
        self.mis_idx = {}
        for name in visit:
            miss = ds.missing(name)
            self.obs_idx[name] = np.flatnonzero(~miss)
            self.mis_idx[name] = np.flatnonzero(miss)
            if self.obs_idx[name].size == 0:
                raise ValueError(f"column {name!r} has no observed values")
        self.predictors = {
            name: [c for c in ds.names if c != name] for name in visit
        }
        if len(ds.names) < 2:
            for name in visit:
                if methods[name] is not ImputeMethod.RANDOM_SAMPLE:
                    raise ValueError(
                        f"column {name!r} has no predictor columns; only "
                        "RANDOM_SAMPLE can impute a single-column dataset"
                    )

    def _levels_of(self, names) -> np.ndarray:
        out = np.zeros(len(names), dtype=np.int64)
        for j, c in enumerate(names):
            spec = self.ds.spec(c)
            if spec.kind is ColumnKind.CATEGORICAL:
                out[j] = len(spec.levels)
        return out

    def initialize(self) -> None:
        for name in self.visit:
            obs = self.obs_idx[name]
            mis = self.mis_idx[name]
            pick = self.rng.integers(0, obs.size, mis.size)
            self.state[name][mis] = self.state[name][obs[pick]]

    def iterate(self) -> None:
        for name in self.visit:
            method = self.methods[name]
            if method is ImputeMethod.RANDOM_SAMPLE:
                self._step_random_sample(name)
            elif method is ImputeMethod.PMM:
                self._step_pmm(name)
            else:
                self._step_forest(name, method)

    def imputed_means(self) -> np.ndarray:
        return np.array([
            float(self.state[name][self.mis_idx[name]].mean()) for name in self.visit
        ])

    def completed(self) -> Dataset:
        out = self.ds
        for name in self.visit:
            vals = self.state[name]
            if self.ds.spec(name).kind is ColumnKind.CATEGORICAL:
                vals = vals.astype(np.int32)
            out = out.with_values(name, vals, missing=None)
        return out

    # -- column steps ---------------------------------------------------

    def _design(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        cols = self.predictors[name]
        X = np.column_stack([self.state[c] for c in cols])
        return X, self._levels_of(cols)

    def _step_random_sample(self, name: str) -> None:
        obs = self.obs_idx[name]
        mis = self.mis_idx[name]
        pick = self.rng.integers(0, obs.size, mis.size)
        self.state[name][mis] = self.state[name][obs[pick]]

    def _step_forest(self, name: str, method: ImputeMethod) -> None:
        obs = self.obs_idx[name]
        mis = self.mis_idx[name]
        X, levels = self._design(name)
        boot = obs[self.rng.integers(0, obs.size, obs.size)]
        seed = int(self.rng.integers(0, 2**63))
        params = replace(self.cfg.forest_params, rng_seed=seed)
        X_tr = X[boot]
        y_tr = self.state[name][boot]
        X_mis = X[mis]
        spec = self.ds.spec(name)
        if spec.kind is ColumnKind.CATEGORICAL:
            n_classes = len(spec.levels)
            forest = fit(X_tr, y_tr.astype(np.int64), task=Task.CLASSIFICATION,
                         levels=levels, params=params, n_classes=n_classes)
            probs = forest.predict_proba(X_mis)
            u = self.rng.random(mis.size)
            cum = np.cumsum(probs, axis=1)
            codes = np.minimum((u[:, None] > cum).sum(axis=1), n_classes - 1)
            self.state[name][mis] = codes.astype(np.float64)
            return
        forest = fit(X_tr, y_tr, task=Task.REGRESSION, levels=levels, params=params)
        preds = forest.predict(X_mis)
        try:
            dist = errordist.build(forest, y_tr)
            self.diag.oob_exclusion_fractions.append(dist.excluded_fraction)
            if method is ImputeMethod.EMPIRICAL_RF:
                draws = errordist.sample_errors(dist, self.rng, mis.size)
            else:
                draws = errordist.sample_normal_errors(dist, self.rng, mis.size)
        except errordist.EmptyOobPoolError:
            self.diag.empty_pool_fallbacks += 1
            resid = y_tr - forest.predict(X_tr)
            sigma = math.sqrt(float(np.mean(resid * resid)))
            warnings.warn(
                f"no out-of-bag errors for column {name!r}; falling back to "
                "Normal noise with the in-bag residual MSE",
                RuntimeWarning,
                stacklevel=2,
            )
            draws = self.rng.normal(0.0, sigma, mis.size)
        self.state[name][mis] = preds + draws

    def _dummy_design(self, name: str) -> np.ndarray:
        cols = self.predictors[name]
        parts = [np.ones((self.ds.n_rows, 1))]
        for c in cols:
            spec = self.ds.spec(c)
            vals = self.state[c]
            if spec.kind is ColumnKind.CATEGORICAL:
                for lvl in range(1, len(spec.levels)):
                    parts.append((vals == lvl).astype(np.float64)[:, None])
            else:
                parts.append(vals[:, None])
        return np.hstack(parts)

    def _step_pmm(self, name: str) -> None:
        obs = self.obs_idx[name]
        mis = self.mis_idx[name]
        donors = self.cfg.pmm_donors
        if donors > obs.size:
            raise ValueError(
                f"pmm_donors={donors} exceeds the {obs.size} observed "
                f"values of column {name!r}"
            )
        X = self._dummy_design(name)
        X_obs = X[obs]
        y_obs = self.state[name][obs]
        X_mis = X[mis]
        p = X.shape[1]

        xtx = X_obs.T @ X_obs
        xty = X_obs.T @ y_obs
        try:
            low = np.linalg.cholesky(xtx)
        except np.linalg.LinAlgError:
            self.diag.ridge_fallbacks += 1
            ridge = 1e-5 * np.trace(xtx) / p
            low = np.linalg.cholesky(xtx + ridge * np.eye(p))
        beta_hat = cho_solve((low, True), xty)
        resid = y_obs - X_obs @ beta_hat
        rss = float(resid @ resid)
        df = max(obs.size - p, 1)
        sigma2 = rss / self.rng.chisquare(df)
        xtx_inv = cho_solve((low, True), np.eye(p))
        xtx_inv = (xtx_inv + xtx_inv.T) / 2.0
        low_inv = np.linalg.cholesky(xtx_inv)
        beta_star = beta_hat + math.sqrt(sigma2) * (low_inv @ self.rng.standard_normal(p))

        yhat_obs = X_obs @ beta_hat
        yhat_mis = X_mis @ beta_star
        dist = np.abs(yhat_obs[None, :] - yhat_mis[:, None])
        if donors < obs.size:
            cand = np.argpartition(dist, donors - 1, axis=1)[:, :donors]
        else:
            cand = np.broadcast_to(np.arange(obs.size), (mis.size, obs.size)).copy()
        cand_dist = np.take_along_axis(dist, cand, axis=1)
        order = np.lexsort((cand, cand_dist), axis=1)
        cand = np.take_along_axis(cand, order, axis=1)
        pick = self.rng.integers(0, donors, mis.size)
        chosen = cand[np.arange(mis.size), pick]
        self.state[name][mis] = y_obs[chosen]


def run(ds: Dataset, config: ImputationConfig | None = None) -> ImputationResult:
    """Produce ``config.m`` completed copies of ``ds``.

    Observed cells are preserved exactly; every dataset in the result is
    complete. A dataset with no missing cells yields m identical copies.
    """
    if config is None:
        config = ImputationConfig()
    incomplete = ds.incomplete_columns()
    if config.visit_sequence is not None:
        visit = tuple(config.visit_sequence)
        if sorted(visit) != sorted(incomplete) or len(set(visit)) != len(visit):
            raise ValueError(
                f"visit_sequence must name each incomplete column exactly once; "
                f"incomplete columns are {list(incomplete)}"
            )
    else:
        visit = incomplete
    methods = _resolve_methods(ds, visit, config.methods)
    diag = ImputationDiagnostics()
    chain_means = np.zeros((config.m, config.maxit, len(visit)))

    datasets = []
    for k in range(config.m):
        rng = generator(derive_seed(config.rng_seed, k))
        if not visit:
            datasets.append(ds)
            continue
        chain = _Chain(ds, visit, methods, config, rng, diag)
        chain.initialize()
        for it in range(config.maxit):
            chain.iterate()
            chain_means[k, it] = chain.imputed_means()
        datasets.append(chain.completed())
    return ImputationResult(
        datasets=tuple(datasets),
        chain_means=chain_means,
        trace_columns=visit,
        diagnostics=diag,
    )
