"""Greedy least-squares regression trees (CART-style, exhaustive split search)."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numba
import numpy as np

_LEAF = -1


@numba.njit(cache=True, nogil=True)
def _grow(X, r, wt, order, max_depth, min_leaf):
    # Rows are kept grouped by node, sorted by each feature within a node,
    # so each node's split scan is a contiguous pass. Features are scanned in
    # index order and thresholds ascending, and only a strict improvement
    # replaces the incumbent: ties keep the earliest (feature, threshold).
    n = X.shape[0]
    p = X.shape[1]
    cap = 2 ** (max_depth + 1) - 1
    feature = np.full(cap, _LEAF, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    leaf_id = np.full(cap, -1, dtype=np.int64)
    n_samples = np.zeros(cap, dtype=np.int64)
    seg_start = np.zeros(cap, dtype=np.int64)

    scale = 0.0
    for i in range(n):
        scale += wt[i] * r[i] * r[i]
    min_gain = 1e-13 * scale

    # ords[f] lists rows grouped by node, sorted by feature f within a node.
    ords = order.copy()
    buf = np.empty(n, dtype=np.int64)
    go_left = np.zeros(n, dtype=np.bool_)
    XT = np.ascontiguousarray(X.T)

    n_samples[0] = n
    level_start = 0
    level_end = 1
    n_nodes = 1
    for depth in range(max_depth + 1):
        next_start = n_nodes
        for k in range(level_start, level_end):
            s0 = seg_start[k]
            m = n_samples[k]
            tw = 0.0
            ts = 0.0
            for j in range(s0, s0 + m):
                i = ords[0, j]
                tw += wt[i]
                ts += wt[i] * r[i]
            mean = ts / tw if tw > 0.0 else 0.0
            best_gain = min_gain
            best_f = -1
            best_thr = 0.0
            if depth < max_depth and m >= 2 * min_leaf:
                for f in range(p):
                    xf = XT[f]
                    cw = 0.0
                    cs = 0.0
                    last = 0.0
                    bar = best_gain * (1.0 + 1e-12)
                    for c in range(m):
                        i = ords[f, s0 + c]
                        x = xf[i]
                        if c >= min_leaf and m - c >= min_leaf and last < x:
                            wr = tw - cw
                            den = cw * wr
                            # gain = cs^2 tw / den; compared without dividing
                            if den > 0.0 and cs * cs * tw > bar * den:
                                best_gain = cs * cs * tw / den
                                bar = best_gain * (1.0 + 1e-12)
                                best_f = f
                                thr = 0.5 * (last + x)
                                if thr >= x:
                                    thr = last
                                best_thr = thr
                        wi = wt[i]
                        cw += wi
                        cs += wi * (r[i] - mean)
                        last = x
            if best_f >= 0:
                feature[k] = best_f
                threshold[k] = best_thr
                left[k] = n_nodes
                right[k] = n_nodes + 1
                nl = 0
                xf = XT[best_f]
                for j in range(s0, s0 + m):
                    i = ords[0, j]
                    g = xf[i] <= best_thr
                    go_left[i] = g
                    if g:
                        nl += 1
                seg_start[n_nodes] = s0
                n_samples[n_nodes] = nl
                seg_start[n_nodes + 1] = s0 + nl
                n_samples[n_nodes + 1] = m - nl
                n_nodes += 2
                # Stable partition of every feature's segment.
                for f in range(p):
                    a = s0
                    b = 0
                    for j in range(s0, s0 + m):
                        i = ords[f, j]
                        if go_left[i]:
                            ords[f, a] = i
                            a += 1
                        else:
                            buf[b] = i
                            b += 1
                    for t in range(b):
                        ords[f, a + t] = buf[t]
            else:
                value[k] = mean
        if n_nodes == next_start:
            break
        level_start = next_start
        level_end = n_nodes

    n_leaves = 0
    for k in range(n_nodes):
        if feature[k] == _LEAF:
            leaf_id[k] = n_leaves
            n_leaves += 1
    return (
        feature[:n_nodes],
        threshold[:n_nodes],
        left[:n_nodes],
        right[:n_nodes],
        value[:n_nodes],
        leaf_id[:n_nodes],
        n_samples[:n_nodes],
        n_leaves,
    )


@numba.njit(cache=True, nogil=True)
def _apply(X, feature, threshold, left, right):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feature[node] != _LEAF:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Binary tree stored as flat node arrays.

    ``feature[k] == -1`` marks node ``k`` as a leaf; ``leaf_id`` numbers the
    leaves 0..n_leaves-1 in breadth-first node order. Rows go left when
    ``x[feature] <= threshold``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    leaf_id: np.ndarray
    n_samples: np.ndarray
    n_leaves: int
    max_depth: int
    min_leaf: int

    @property
    def leaf_nodes(self) -> np.ndarray:
        """Node index of each leaf, ordered by leaf id."""
        nodes = np.flatnonzero(self.feature == _LEAF)
        return nodes[np.argsort(self.leaf_id[nodes])]

    @property
    def leaf_values(self) -> np.ndarray:
        return self.value[self.leaf_nodes]

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf id reached by each row of ``X``."""
        nodes = _apply(_as_matrix(X), self.feature, self.threshold, self.left, self.right)
        return self.leaf_id[nodes]

    def predict(self, X: np.ndarray) -> np.ndarray:
        nodes = _apply(_as_matrix(X), self.feature, self.threshold, self.left, self.right)
        return self.value[nodes]

    def with_leaf_values(self, values: np.ndarray) -> "RegressionTree":
        """Same structure, new leaf values (indexed by leaf id)."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.n_leaves,):
            raise ValueError(f"expected {self.n_leaves} leaf values, got {values.shape}")
        new = self.value.copy()
        new[self.leaf_nodes] = values
        return replace(self, value=new)

    def scaled(self, factor: float) -> "RegressionTree":
        return replace(self, value=self.value * factor)


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    return X


def presort(X: np.ndarray) -> np.ndarray:
    """Per-feature stable argsort of the rows, shape (p, n)."""
    X = _as_matrix(X)
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)


def fit_tree(
    X: np.ndarray,
    targets: np.ndarray,
    weights: np.ndarray | None = None,
    max_depth: int = 3,
    min_leaf: int = 1,
    order: np.ndarray | None = None,
) -> RegressionTree:
    """Fit a regression tree by greedy squared-error splitting.

    Each split is the best over all features and all midpoints between
    adjacent distinct sorted values. Leaves hold the (weighted) mean target.
    Constant targets give a single leaf. Pass ``order=presort(X)`` to reuse
    the sort across repeated fits on the same rows.
    """
    X = _as_matrix(X)
    y = np.asarray(targets, dtype=np.float64).ravel()
    n = y.shape[0]
    if n == 0:
        raise ValueError("cannot fit a tree to empty data")
    if X.shape[0] != n:
        raise ValueError(f"X has {X.shape[0]} rows but targets has {n}")
    if max_depth < 0 or min_leaf < 1:
        raise ValueError("max_depth must be >= 0 and min_leaf >= 1")
    if weights is None:
        wt = np.ones(n)
    else:
        wt = np.asarray(weights, dtype=np.float64).ravel()
        if wt.shape[0] != n or (wt < 0).any() or wt.sum() <= 0:
            raise ValueError("weights must be nonnegative, one per row, with positive sum")
    if order is None:
        order = presort(X)
    out = _grow(X, y, wt, order, int(max_depth), int(min_leaf))
    return RegressionTree(
        *out[:7], n_leaves=int(out[7]), max_depth=int(max_depth), min_leaf=int(min_leaf)
    )
