"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np

from rfimp.data import Dataset


def assert_datasets_equal(a: Dataset, b: Dataset) -> None:
    """Equality on names, specs, values (NaN-aware), and missing masks."""
    assert a.names == b.names
    assert a.columns == b.columns
    for name in a.names:
        va, vb = a.column(name), b.column(name)
        if a.spec(name).is_continuous:
            assert np.array_equal(va, vb, equal_nan=True), name
        else:
            assert np.array_equal(va, vb), name
        assert np.array_equal(a.missing(name), b.missing(name)), name
