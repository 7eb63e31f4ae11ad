"""Least-squares gradient tree boosting."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .tree import RegressionTree, _apply, _as_matrix, _grow, presort


@dataclass(frozen=True)
class GbtParams:
    n_stages: int = 200
    shrinkage: float = 0.1
    max_depth: int = 3
    min_leaf: int = 10

    def __post_init__(self):
        if self.n_stages < 0 or self.max_depth < 0 or self.min_leaf < 1:
            raise ValueError(f"invalid boosting parameters {self}")
        if not 0 < self.shrinkage <= 1:
            raise ValueError(f"shrinkage must lie in (0, 1], got {self.shrinkage}")


@numba.njit(cache=True, nogil=True)
def _store(s, out, tree):
    feature, threshold, left, right, value = out
    k = tree[0].size
    feature[s, :k] = tree[0]
    threshold[s, :k] = tree[1]
    left[s, :k] = tree[2]
    right[s, :k] = tree[3]
    value[s, :k] = tree[4]


@numba.njit(cache=True, nogil=True)
def _boost(X, y, order, n_stages, shrinkage, max_depth, min_leaf, X_eval, y_eval):
    n = X.shape[0]
    cap = 2 ** (max_depth + 1) - 1
    feature = np.full((n_stages, cap), -1, dtype=np.int64)
    threshold = np.zeros((n_stages, cap))
    left = np.full((n_stages, cap), -1, dtype=np.int64)
    right = np.full((n_stages, cap), -1, dtype=np.int64)
    value = np.zeros((n_stages, cap))
    init = y.mean()
    F = np.full(n, init)
    E = np.full(X_eval.shape[0], init)
    train_sse = np.empty(n_stages + 1)
    eval_sse = np.empty(n_stages + 1)
    train_sse[0] = np.sum((y - F) ** 2)
    eval_sse[0] = np.sum((y_eval - E) ** 2)
    wt = np.ones(n)
    for s in range(n_stages):
        r = y - F
        tree = _grow(X, r, wt, order, max_depth, min_leaf)
        scaled = tree[4] * shrinkage
        _store(s, (feature, threshold, left, right, value), (tree[0], tree[1], tree[2], tree[3], scaled))
        nodes = _apply(X, tree[0], tree[1], tree[2], tree[3])
        for i in range(n):
            F[i] += scaled[nodes[i]]
        nodes = _apply(X_eval, tree[0], tree[1], tree[2], tree[3])
        for i in range(X_eval.shape[0]):
            E[i] += scaled[nodes[i]]
        train_sse[s + 1] = np.sum((y - F) ** 2)
        eval_sse[s + 1] = np.sum((y_eval - E) ** 2)
    return feature, threshold, left, right, value, init, train_sse, eval_sse


@numba.njit(cache=True, nogil=True)
def _predict_stacked(X, init, feature, threshold, left, right, value, n_stages):
    n = X.shape[0]
    out = np.full(n, init)
    for s in range(n_stages):
        for i in range(n):
            node = 0
            while feature[s, node] != -1:
                if X[i, feature[s, node]] <= threshold[s, node]:
                    node = left[s, node]
                else:
                    node = right[s, node]
            out[i] += value[s, node]
    return out


@dataclass(frozen=True, eq=False)
class BoostedModel:
    """Initial constant plus a sum of shrunken trees.

    Trees are stored stacked, one row per stage, in the flat node layout of
    :class:`RegressionTree`; leaf values already include the shrinkage.
    """

    initial_value: float
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    params: GbtParams
    train_sse: np.ndarray

    @property
    def n_stages(self) -> int:
        return self.feature.shape[0]

    @property
    def shrinkage(self) -> float:
        return self.params.shrinkage

    @property
    def stages(self) -> list[RegressionTree]:
        out = []
        for s in range(self.n_stages):
            k = _n_nodes(self.left[s])
            feat = self.feature[s, :k]
            leaves = np.flatnonzero(feat == -1)
            leaf_id = np.full(k, -1, dtype=np.int64)
            leaf_id[leaves] = np.arange(leaves.size)
            out.append(
                RegressionTree(
                    feat.copy(),
                    self.threshold[s, :k].copy(),
                    self.left[s, :k].copy(),
                    self.right[s, :k].copy(),
                    self.value[s, :k].copy(),
                    leaf_id,
                    np.zeros(k, dtype=np.int64),
                    int(leaves.size),
                    self.params.max_depth,
                    self.params.min_leaf,
                )
            )
        return out

    def predict(self, X: np.ndarray, n_stages: int | None = None) -> np.ndarray:
        m = self.n_stages if n_stages is None else min(int(n_stages), self.n_stages)
        return _predict_stacked(
            _as_matrix(X), self.initial_value, self.feature, self.threshold,
            self.left, self.right, self.value, m,
        )

    __call__ = predict


def _n_nodes(left_row: np.ndarray) -> int:
    internal = left_row[left_row >= 0]
    return int(internal.max()) + 2 if internal.size else 1


def boost(
    X: np.ndarray,
    y: np.ndarray,
    params: GbtParams,
    X_eval: np.ndarray | None = None,
    y_eval: np.ndarray | None = None,
    order: np.ndarray | None = None,
) -> tuple[BoostedModel, np.ndarray]:
    """Fit and also return held-out SSE after each stage count 0..n_stages."""
    X = np.ascontiguousarray(_as_matrix(X))
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] < 1 or X.shape[0] != y.shape[0]:
        raise ValueError("X and y must have the same, nonzero, number of rows")
    if X_eval is None:
        X_eval, y_eval = X[:0], y[:0]
    X_eval = np.ascontiguousarray(_as_matrix(X_eval))
    y_eval = np.asarray(y_eval, dtype=np.float64).ravel()
    if order is None:
        order = presort(X)
    out = _boost(
        X, y, order, params.n_stages, params.shrinkage, params.max_depth,
        params.min_leaf, X_eval, y_eval,
    )
    feature, threshold, left, right, value, init, train_sse, eval_sse = out
    model = BoostedModel(float(init), feature, threshold, left, right, value, params, train_sse)
    return model, eval_sse


def fit_gbt(
    X: np.ndarray,
    y: np.ndarray,
    params: GbtParams | dict | None = None,
) -> BoostedModel:
    """Friedman-style least-squares boosting.

    Starts from mean(y); each stage fits a tree to the current residuals and
    adds its leaf values times the shrinkage.
    """
    if params is None:
        params = GbtParams()
    elif isinstance(params, dict):
        params = GbtParams(**params)
    if np.asarray(y).size < 2:
        raise ValueError("boosting needs at least 2 rows")
    return boost(X, y, params)[0]
