"""Empirical distribution of out-of-bag prediction errors.

For a regression forest, each training row that at least one tree left out
of its bootstrap sample gets an out-of-bag (OOB) prediction; the pool of
errors ``observed - OOB prediction`` is an honest estimate of the
prediction error distribution because no error is computed with a tree
that saw the row. Imputation draws either resample this pool directly or
use a Normal with variance equal to the pool's mean squared error.

Rows that every tree happened to include in-bag have no OOB prediction
and are excluded from the pool; the container records how many so callers
can track the exclusion rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .forest import Forest, Task


class EmptyOobPoolError(RuntimeError):
    """No training row has an out-of-bag prediction."""


@dataclass(frozen=True)
class ErrorDistribution:
    """Pool of OOB errors of one fitted regression forest.

    ``errors`` holds observed - OOB prediction for every training row
    with an OOB prediction; ``oob_mse`` is the mean of their squares.
    """

    errors: np.ndarray
    oob_mse: float
    n_rows: int
    n_excluded: int

    @property
    def n_pool(self) -> int:
        return int(self.errors.shape[0])

    @property
    def excluded_fraction(self) -> float:
        return self.n_excluded / self.n_rows


def build(forest: Forest, y) -> ErrorDistribution:
    """Collect the OOB error pool of ``forest`` against its training
    targets ``y``.

    Raises EmptyOobPoolError if no row has an OOB prediction (possible
    only when every tree's bootstrap sample covered every row).
    """
    if forest.task is not Task.REGRESSION:
        raise ValueError("error distributions are defined for regression forests")
    ya = np.asarray(y, dtype=np.float64)
    n = forest.n_train
    if ya.shape != (n,):
        raise ValueError(f"y must have shape ({n},), got {ya.shape}")
    values, has = forest.oob_predictions()
    n_excluded = int((~has).sum())
    if n_excluded == n:
        raise EmptyOobPoolError(
            f"none of the {n} training rows has an out-of-bag prediction"
        )
    errors = ya[has] - values[has]
    errors.setflags(write=False)
    return ErrorDistribution(
        errors=errors,
        oob_mse=float(np.mean(errors * errors)),
        n_rows=n,
        n_excluded=n_excluded,
    )


def sample_errors(dist: ErrorDistribution, rng: np.random.Generator,
                  size: int) -> np.ndarray:
    """``size`` draws from the pool, uniformly with replacement."""
    idx = rng.integers(0, dist.n_pool, size=size)
    return dist.errors[idx]


def sample_error(dist: ErrorDistribution, rng: np.random.Generator) -> float:
    """One draw from the pool."""
    return float(dist.errors[rng.integers(0, dist.n_pool)])


def sample_normal_errors(dist: ErrorDistribution, rng: np.random.Generator,
                         size: int) -> np.ndarray:
    """``size`` draws from Normal(0, sqrt(oob_mse))."""
    return rng.normal(0.0, math.sqrt(dist.oob_mse), size=size)


def sample_normal_error(dist: ErrorDistribution, rng: np.random.Generator) -> float:
    """One draw from Normal(0, sqrt(oob_mse))."""
    return float(rng.normal(0.0, math.sqrt(dist.oob_mse)))
