"""Random forests with per-tree bootstrap bookkeeping.

The forest grows unpruned CART trees on independent bootstrap samples and
keeps the exact in-bag multiset of every tree, which makes out-of-bag
(OOB) prediction exact: a row's OOB aggregate uses only the trees whose
bootstrap sample missed that row. Fitting is deterministic in
(data, params.rng_seed); each tree draws its randomness from a seed
derived from the forest seed and the tree index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ._kernels import fit_tree, tree_apply
from .rng import derive_seed

MAX_CAT_LEVELS = 12


class Task(Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


@dataclass(frozen=True)
class ForestParams:
    """Forest hyperparameters.

    ``mtry`` defaults to floor(sqrt(p)) (at least 1) and ``min_node_size``
    to 5 for regression, 1 for classification; ``max_depth`` of None means
    unlimited. A node is split only while it holds at least
    2 * min_node_size rows and is not pure.
    """

    n_trees: int = 10
    mtry: int | None = None
    min_node_size: int | None = None
    max_depth: int | None = None
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")
        if self.min_node_size is not None and self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")


@dataclass(frozen=True)
class Tree:
    """One fitted tree as flat node arrays (feature < 0 marks a leaf)."""

    feature: np.ndarray
    threshold: np.ndarray
    cat_mask: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_value: np.ndarray
    leaf_counts: np.ndarray


def _as_levels(levels, p: int) -> np.ndarray:
    if levels is None:
        return np.zeros(p, dtype=np.int64)
    arr = np.asarray(levels, dtype=np.int64)
    if arr.shape != (p,):
        raise ValueError(f"levels must have length {p}, got shape {arr.shape}")
    if np.any(arr < 0):
        raise ValueError("level counts must be >= 0 (0 means continuous)")
    if np.any(arr == 1):
        raise ValueError("categorical features need at least 2 levels")
    if np.any(arr > MAX_CAT_LEVELS):
        worst = int(arr.max())
        raise ValueError(
            f"categorical feature has {worst} levels; "
            f"at most {MAX_CAT_LEVELS} are supported"
        )
    return arr


def _check_matrix(X, levels: np.ndarray, what: str) -> np.ndarray:
    Xa = np.ascontiguousarray(X, dtype=np.float64)
    if Xa.ndim != 2:
        raise ValueError(f"{what} must be a 2-d array, got ndim={Xa.ndim}")
    if Xa.shape[1] != levels.shape[0]:
        raise ValueError(
            f"{what} has {Xa.shape[1]} columns, expected {levels.shape[0]}"
        )
    if not np.all(np.isfinite(Xa)):
        raise ValueError(f"{what} contains non-finite values")
    for f in range(levels.shape[0]):
        lf = int(levels[f])
        if lf == 0:
            continue
        col = Xa[:, f]
        if np.any(col != np.floor(col)) or np.any(col < 0) or np.any(col >= lf):
            raise ValueError(
                f"{what} column {f} must hold integer level codes in [0, {lf})"
            )
    return Xa


class Forest:
    """A fitted forest; build one with :func:`fit`."""

    def __init__(self, task, trees, inbag, levels, n_classes, params,
                 mtry, min_node_size, X_train):
        self.task = task
        self.trees = trees
        self.inbag = inbag
        self.levels = levels
        self.n_classes = n_classes
        self.params = params
        self.mtry = mtry
        self.min_node_size = min_node_size
        self._X_train = X_train

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def n_features(self) -> int:
        return int(self.levels.shape[0])

    @property
    def n_train(self) -> int:
        return int(self._X_train.shape[0])

    def _apply(self, tree: Tree, X: np.ndarray) -> np.ndarray:
        return tree_apply(tree.feature, tree.threshold, tree.cat_mask,
                          tree.left, tree.right, self.levels, X)

    def predict(self, X) -> np.ndarray:
        """Mean of per-tree leaf means (regression) or the class with the
        highest averaged probability (classification; ties break to the
        lowest class index)."""
        if self.task is Task.CLASSIFICATION:
            return np.argmax(self.predict_proba(X), axis=1)
        Xa = _check_matrix(X, self.levels, "X")
        acc = np.zeros(Xa.shape[0])
        for tree in self.trees:
            acc += tree.leaf_value[self._apply(tree, Xa)]
        return acc / self.n_trees

    def predict_proba(self, X) -> np.ndarray:
        """Per-class probabilities: the average over trees of each leaf's
        class frequencies (each tree's leaf normalized to sum to 1)."""
        if self.task is not Task.CLASSIFICATION:
            raise ValueError("predict_proba is only defined for classification")
        Xa = _check_matrix(X, self.levels, "X")
        acc = np.zeros((Xa.shape[0], self.n_classes))
        for tree in self.trees:
            counts = tree.leaf_counts[self._apply(tree, Xa)]
            acc += counts / counts.sum(axis=1, keepdims=True)
        return acc / self.n_trees

    def oob_predictions(self) -> tuple[np.ndarray, np.ndarray]:
        """OOB aggregate for every training row.

        Returns (values, has_oob). For regression ``values`` is a float
        vector; for classification it is an (n, n_classes) probability
        matrix. Rows that were in-bag for every tree have no OOB
        prediction: has_oob is False there and values holds NaN.
        """
        n = self.n_train
        cnt = np.zeros(n, dtype=np.int64)
        if self.task is Task.CLASSIFICATION:
            acc = np.zeros((n, self.n_classes))
        else:
            acc = np.zeros(n)
        for t, tree in enumerate(self.trees):
            mask = self.inbag[t] == 0
            if not mask.any():
                continue
            leafs = self._apply(tree, self._X_train[mask])
            if self.task is Task.CLASSIFICATION:
                counts = tree.leaf_counts[leafs]
                acc[mask] += counts / counts.sum(axis=1, keepdims=True)
            else:
                acc[mask] += tree.leaf_value[leafs]
            cnt[mask] += 1
        has = cnt > 0
        if self.task is Task.CLASSIFICATION:
            values = np.full((n, self.n_classes), np.nan)
            values[has] = acc[has] / cnt[has, None]
        else:
            values = np.full(n, np.nan)
            values[has] = acc[has] / cnt[has]
        return values, has

    def oob_mse(self, y) -> float:
        """Mean squared error of the OOB predictions against y, over the
        rows that have one (regression only)."""
        if self.task is not Task.REGRESSION:
            raise ValueError("oob_mse is only defined for regression")
        ya = np.asarray(y, dtype=np.float64)
        values, has = self.oob_predictions()
        if not has.any():
            raise ValueError("no training row has an out-of-bag prediction")
        diff = ya[has] - values[has]
        return float(np.mean(diff * diff))


def fit(X, y, *, task: Task = Task.REGRESSION, levels=None,
        params: ForestParams | None = None, n_classes: int | None = None) -> Forest:
    """Fit a forest of ``params.n_trees`` trees, each on its own
    bootstrap sample (drawn with replacement, size n).

    ``levels[f]`` gives the number of levels of a categorical feature
    and 0 for a continuous one (default: all continuous). For
    classification ``y`` holds class codes in [0, n_classes); n_classes
    is inferred as max(y) + 1 when not given.
    """
    if params is None:
        params = ForestParams()
    Xp = np.asarray(X, dtype=np.float64)
    if Xp.ndim != 2:
        raise ValueError(f"X must be a 2-d array, got ndim={Xp.ndim}")
    n, p = Xp.shape
    if p < 1:
        raise ValueError("X must have at least one feature column")
    if n < 2:
        raise ValueError(f"need at least 2 training rows, got {n}")
    lv = _as_levels(levels, p)
    Xa = _check_matrix(Xp, lv, "X")

    ya = np.asarray(y)
    if ya.shape != (n,):
        raise ValueError(f"y must have shape ({n},), got {ya.shape}")
    if task is Task.CLASSIFICATION:
        yf = ya.astype(np.float64)
        if np.any(~np.isfinite(yf)) or np.any(yf != np.floor(yf)) or np.any(yf < 0):
            raise ValueError("classification y must hold non-negative integer codes")
        y_cls = yf.astype(np.int32)
        nc = int(y_cls.max()) + 1 if n_classes is None else int(n_classes)
        if nc < 2:
            raise ValueError("classification needs at least 2 classes")
        if int(y_cls.max()) >= nc:
            raise ValueError(f"y contains class code {int(y_cls.max())} >= n_classes={nc}")
        y_reg = np.zeros(0, dtype=np.float64)
    else:
        y_reg = ya.astype(np.float64)
        if not np.all(np.isfinite(y_reg)):
            raise ValueError("regression y contains non-finite values")
        y_cls = np.zeros(0, dtype=np.int32)
        nc = 0

    mtry = params.mtry if params.mtry is not None else max(1, int(math.isqrt(p)))
    if mtry > p:
        raise ValueError(f"mtry={mtry} exceeds the number of features p={p}")
    if params.min_node_size is not None:
        mns = params.min_node_size
    else:
        mns = 1 if task is Task.CLASSIFICATION else 5
    depth = -1 if params.max_depth is None else params.max_depth

    y_reg_fit = y_reg if task is Task.REGRESSION else np.zeros(n, dtype=np.float64)
    y_cls_fit = y_cls if task is Task.CLASSIFICATION else np.zeros(n, dtype=np.int32)

    trees = []
    inbag = np.zeros((params.n_trees, n), dtype=np.int32)
    for t in range(params.n_trees):
        seed_t = np.uint64(derive_seed(params.rng_seed, t))
        (feature, threshold, cat_mask, left, right, leaf_value,
         leaf_counts, bag, n_nodes) = fit_tree(
            Xa, y_reg_fit, y_cls_fit, nc, lv,
            task is Task.CLASSIFICATION, mtry, mns, depth, seed_t)
        trees.append(Tree(
            feature=feature[:n_nodes].copy(),
            threshold=threshold[:n_nodes].copy(),
            cat_mask=cat_mask[:n_nodes].copy(),
            left=left[:n_nodes].copy(),
            right=right[:n_nodes].copy(),
            leaf_value=leaf_value[:n_nodes].copy(),
            leaf_counts=leaf_counts[:n_nodes].copy(),
        ))
        inbag[t] = bag

    X_store = Xa.copy()
    X_store.setflags(write=False)
    inbag.setflags(write=False)
    return Forest(task=task, trees=tuple(trees), inbag=inbag, levels=lv,
                  n_classes=nc, params=params, mtry=mtry, min_node_size=mns,
                  X_train=X_store)
