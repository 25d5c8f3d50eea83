"""Amputation: introducing missingness into complete data.

A single joint pattern is supported: a row selected as incomplete has all
pattern columns set missing at once. Under MCAR every row is incomplete
with the same probability. Under MAR_right the probability is
logistic(z + c), where z is the standardized value of an always-observed
weight column, so rows in the right tail of that column are missing more
often; the shift c is solved so the mean probability hits the requested
proportion. Selection is per-row Bernoulli, not an exact-count quota.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import expit

from .data import Dataset
from .rng import generator


class Mechanism(Enum):
    MCAR = "mcar"
    MAR_RIGHT = "mar_right"


@dataclass(frozen=True)
class AmputeConfig:
    """Settings for one amputation pass.

    ``prop`` is the expected fraction of incomplete rows. ``weight_column``
    drives MAR_right and must not be part of the pattern.
    """

    pattern_columns: tuple[str, ...]
    prop: float = 0.5
    mechanism: Mechanism = Mechanism.MCAR
    weight_column: str | None = None
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if len(self.pattern_columns) == 0:
            raise ValueError("pattern_columns must not be empty")
        if len(set(self.pattern_columns)) != len(self.pattern_columns):
            raise ValueError("pattern_columns contains duplicates")
        if not 0.0 < self.prop < 1.0:
            raise ValueError(f"prop must be in (0, 1), got {self.prop}")
        if self.mechanism is Mechanism.MAR_RIGHT:
            if self.weight_column is None:
                raise ValueError("MAR_right needs a weight_column")
            if self.weight_column in self.pattern_columns:
                raise ValueError("weight_column cannot be part of the pattern")


def _solve_shift(z: np.ndarray, prop: float) -> float:
    # mean(expit(z + c)) is strictly increasing in c; bisect to the target
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        mean_p = float(expit(z + mid).mean())
        if abs(mean_p - prop) <= 1e-6:
            return mid
        if mean_p < prop:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def missingness_probabilities(ds: Dataset, cfg: AmputeConfig) -> np.ndarray:
    """Per-row probability of being made incomplete."""
    n = ds.n_rows
    if cfg.mechanism is Mechanism.MCAR:
        return np.full(n, cfg.prop)
    w = ds.column(cfg.weight_column)
    if ds.missing(cfg.weight_column).any():
        raise ValueError(f"weight column {cfg.weight_column!r} has missing values")
    sd = float(w.std())
    if sd == 0.0:
        raise ValueError(
            f"weight column {cfg.weight_column!r} is constant; "
            "MAR_right needs a varying weight"
        )
    z = (w - float(w.mean())) / sd
    c = _solve_shift(z, cfg.prop)
    return expit(z + c)


def ampute(ds: Dataset, cfg: AmputeConfig,
           rng: np.random.Generator | None = None) -> Dataset:
    """Return a copy of ``ds`` with the pattern columns jointly amputed.

    Row i becomes incomplete with probability p_i (constant under MCAR,
    right-tailed logistic in the weight column under MAR_right, shifted
    so mean(p) equals cfg.prop to within 1e-6); an incomplete row has
    every pattern column set missing.
    """
    for name in cfg.pattern_columns:
        if ds.missing(name).any():
            raise ValueError(f"pattern column {name!r} already has missing values")
    if rng is None:
        rng = generator(cfg.rng_seed)
    p = missingness_probabilities(ds, cfg)
    incomplete = rng.random(ds.n_rows) < p
    out = ds
    for name in cfg.pattern_columns:
        out = out.with_missing_mask(name, incomplete)
    return out
