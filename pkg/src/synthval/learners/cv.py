"""Seeded K-fold cross-validation over a parameter grid."""

from __future__ import annotations

from collections import defaultdict
from typing import Any, Callable, Sequence

import numpy as np

from ..dataset import RngSeed, as_seed
from .boosting import GbtParams, boost
from .tree import presort

FOLD_RETRY_CAP = 20


class CvError(RuntimeError):
    pass


def make_folds(
    n: int,
    n_folds: int,
    rng: RngSeed | int,
    strata: np.ndarray | None = None,
) -> np.ndarray:
    """Fold label (0..n_folds-1) per row.

    With ``strata``, labels are dealt round-robin within each stratum after
    a seeded shuffle, and every training split must keep each stratum; the
    assignment is re-drawn up to ``FOLD_RETRY_CAP`` times before failing.
    """
    if n_folds < 2:
        raise ValueError(f"n_folds must be >= 2, got {n_folds}")
    if n < n_folds:
        raise CvError(f"cannot split {n} rows into {n_folds} folds")
    gen = as_seed(rng).generator()
    if strata is None:
        folds = np.empty(n, dtype=np.int64)
        folds[gen.permutation(n)] = np.arange(n) % n_folds
        return folds
    strata = np.asarray(strata)
    levels = np.unique(strata)
    for _ in range(FOLD_RETRY_CAP):
        folds = np.empty(n, dtype=np.int64)
        start = int(gen.integers(n_folds))
        for level in levels:
            rows = np.flatnonzero(strata == level)
            folds[gen.permutation(rows)] = (start + np.arange(rows.size)) % n_folds
            start = (start + rows.size) % n_folds
        if all(
            np.unique(strata[folds != k]).size == levels.size for k in range(n_folds)
        ):
            return folds
    raise CvError(
        f"could not draw {n_folds} folds whose training splits contain every arm "
        f"after {FOLD_RETRY_CAP} attempts"
    )


def _argmin_first(scores: Sequence[float]) -> int:
    best = 0
    for i, s in enumerate(scores):
        if s < scores[best]:
            best = i
    return best


def cv_scores(
    fit: Callable[[np.ndarray, np.ndarray, Any], Any],
    X: np.ndarray,
    y: np.ndarray,
    param_grid: Sequence[Any],
    n_folds: int,
    rng: RngSeed | int,
) -> list[float]:
    """Pooled held-out mean squared error of each grid point."""
    X = np.asarray(X, dtype=np.float64).reshape(len(y), -1)
    y = np.asarray(y, dtype=np.float64)
    folds = make_folds(y.size, n_folds, rng)
    scores = []
    for params in param_grid:
        sse = 0.0
        for k in range(n_folds):
            test = folds == k
            model = fit(X[~test], y[~test], params)
            sse += float(np.sum((y[test] - model.predict(X[test])) ** 2))
        scores.append(sse / y.size)
    return scores


def cv_grid_select(
    fit: Callable[[np.ndarray, np.ndarray, Any], Any],
    X: np.ndarray,
    y: np.ndarray,
    param_grid: Sequence[Any],
    n_folds: int = 5,
    rng: RngSeed | int = 0,
) -> Any:
    """Grid point with the lowest held-out MSE; ties go to the earliest point.

    ``fit(X_train, y_train, params)`` must return an object with ``predict``.
    """
    if not param_grid:
        raise ValueError("parameter grid is empty")
    if len(param_grid) == 1:
        return param_grid[0]
    return param_grid[_argmin_first(cv_scores(fit, X, y, param_grid, n_folds, rng))]


def gbt_cv_scores(
    X: np.ndarray,
    y: np.ndarray,
    grid: Sequence[GbtParams],
    n_folds: int,
    rng: RngSeed | int,
) -> list[float]:
    """Same scores as ``cv_scores(fit_gbt, ...)``, sharing one fit per tree shape.

    Grid points that differ only in ``n_stages`` are read off a single
    boosting path fit to the largest stage count.
    """
    y = np.asarray(y, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64).reshape(y.size, -1)
    folds = make_folds(y.size, n_folds, rng)
    groups: dict[tuple, list[int]] = defaultdict(list)
    for i, g in enumerate(grid):
        groups[(g.shrinkage, g.max_depth, g.min_leaf)].append(i)
    sse = np.zeros(len(grid))
    for k in range(n_folds):
        test = folds == k
        X_tr, y_tr = X[~test], y[~test]
        order = presort(X_tr)
        for (shrinkage, depth, min_leaf), members in groups.items():
            longest = max(grid[i].n_stages for i in members)
            params = GbtParams(longest, shrinkage, depth, min_leaf)
            _, path = boost(X_tr, y_tr, params, X[test], y[test], order=order)
            for i in members:
                sse[i] += path[grid[i].n_stages]
    return list(sse / y.size)


def gbt_cv_select(
    X: np.ndarray,
    y: np.ndarray,
    grid: Sequence[GbtParams],
    n_folds: int = 5,
    rng: RngSeed | int = 0,
) -> GbtParams:
    if not grid:
        raise ValueError("parameter grid is empty")
    if len(grid) == 1:
        return grid[0]
    return grid[_argmin_first(gbt_cv_scores(X, y, grid, n_folds, rng))]
