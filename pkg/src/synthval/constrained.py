"""Outcome models constrained to encode a chosen average treatment effect.

Every fitter here returns a pair of per-arm mean functions (mu0, mu1) whose
average difference over the training covariates equals the requested
effect. Three fitters are provided:

* fit-plus-constant (``fpc_fit``): fit each arm freely with least squares or
  boosting, then shift both fits by the constants that satisfy the effect
  while losing as little squared error as possible;
* constrained gradient boosting (``cgb_fit``): boost both arms together and
  choose each stage's leaf values jointly, under a ridge penalty, so that the
  effect holds exactly after every stage.

Both reduce to small equality-constrained quadratic programs with a diagonal
Hessian, solved in closed form by ``solve_eq_qp``.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Sequence

import numba
import numpy as np

from .config import CgbParams, CvConfig
from .dataset import ObservationalDataset, RngSeed, arm_indices, as_seed
from .learners.boosting import BoostedModel, GbtParams, fit_gbt
from .learners.cv import CvError, gbt_cv_select, make_folds
from .learners.linear import fit_ols
from .learners.tree import RegressionTree, _apply, _grow, fit_tree, presort

EFFECT_TOL = 1e-8


class InfeasibleQpError(ValueError):
    pass


# --------------------------------------------------------------------------
# Equality-constrained QP with diagonal Hessian


@dataclass(frozen=True, eq=False)
class EqQpProblem:
    """minimize 0.5 * sum(quad * u**2) - sum(lin * u)  subject to  a @ u == b."""

    quad: np.ndarray
    lin: np.ndarray
    a: np.ndarray
    b: float

    def __post_init__(self):
        quad = np.asarray(self.quad, dtype=np.float64).ravel()
        lin = np.asarray(self.lin, dtype=np.float64).ravel()
        a = np.asarray(self.a, dtype=np.float64).ravel()
        if not (quad.shape == lin.shape == a.shape) or quad.size == 0:
            raise ValueError("quad, lin and a must be non-empty vectors of equal length")
        if not (quad > 0).all():
            raise ValueError("quadratic coefficients must be strictly positive")
        if not (np.isfinite(lin).all() and np.isfinite(a).all() and np.isfinite(self.b)):
            raise ValueError("QP coefficients must be finite")
        object.__setattr__(self, "quad", quad)
        object.__setattr__(self, "lin", lin)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))

    @property
    def k(self) -> int:
        return self.quad.size

    def objective(self, u: np.ndarray) -> float:
        return float(0.5 * np.sum(self.quad * u * u) - np.sum(self.lin * u))


@numba.njit(cache=True, nogil=True)
def _eq_qp(quad, lin, a, b):
    # Stationarity gives u = (lin + nu * a) / quad; the constraint fixes nu.
    k = quad.size
    s_ap = 0.0
    s_aa = 0.0
    for i in range(k):
        s_ap += a[i] * lin[i] / quad[i]
        s_aa += a[i] * a[i] / quad[i]
    nu = (b - s_ap) / s_aa if s_aa > 0.0 else 0.0
    u = np.empty(k)
    for i in range(k):
        u[i] = (lin[i] + nu * a[i]) / quad[i]
    if s_aa > 0.0:
        # One refinement pass on the rounding left in the constraint.
        res = b
        for i in range(k):
            res -= a[i] * u[i]
        for i in range(k):
            u[i] += res * a[i] / (quad[i] * s_aa)
        nu += res / s_aa
    return u, nu


def solve_eq_qp(problem: EqQpProblem, return_multiplier: bool = False):
    """Unique minimizer of a strictly convex, diagonal, single-constraint QP."""
    s_aa = float(np.sum(problem.a**2 / problem.quad))
    if s_aa == 0.0 and problem.b != 0.0:
        raise InfeasibleQpError("infeasible direction: constraint vector is zero but offset is not")
    u, nu = _eq_qp(problem.quad, problem.lin, problem.a, problem.b)
    return (u, float(nu)) if return_multiplier else u


# --------------------------------------------------------------------------
# Fitted model container


@dataclass(frozen=True)
class ShiftedModel:
    """``base.predict(X) + shift``."""

    base: Any
    shift: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.base.predict(X) + self.shift

    __call__ = predict


@dataclass(frozen=True, eq=False)
class ConstrainedOutcomeModel:
    mu0: Any
    mu1: Any
    encoded_effect: float
    fit_method: str
    training_loss: float
    params: dict = field(default_factory=dict)

    def predict(self, X: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Arm-specific prediction ``mu_w(x)`` for each row."""
        w = np.asarray(w)
        return np.where(w == 1, self.mu1.predict(X), self.mu0.predict(X))

    def effect_on(self, X: np.ndarray) -> float:
        """Average of mu1 - mu0 over the rows of ``X``."""
        return float(np.mean(self.mu1.predict(X) - self.mu0.predict(X)))


def _training_mse(d: ObservationalDataset, mu0, mu1) -> float:
    pred = np.where(d.treatment == 1, mu1.predict(d.covariates), mu0.predict(d.covariates))
    return float(np.mean((d.outcome - pred) ** 2))


# --------------------------------------------------------------------------
# Fit-plus-constant


def fit_fpc_bases(
    d: ObservationalDataset,
    base: str = "linear",
    cv: CvConfig | None = None,
    rng: RngSeed | int = 0,
) -> tuple[Any, Any]:
    """Unconstrained per-arm fits h0 (untreated rows) and h1 (treated rows).

    The fits do not depend on the encoded effect, so one pair serves a
    whole effect grid.
    """
    cv = cv or CvConfig()
    rng = as_seed(rng)
    fits = []
    for arm in (0, 1):
        rows = arm_indices(d, arm)
        X, y = d.covariates[rows], d.outcome[rows]
        if base == "linear":
            fits.append(fit_ols(X, y))
        elif base == "treeboost":
            params = _tuned_gbt(X, y, cv, rng.child(arm)) if cv.tune_fpc_treeboost else GbtParams()
            fits.append(fit_gbt(X, y, params))
        else:
            raise ValueError(f"unknown fit-plus-constant base learner {base!r}")
    return fits[0], fits[1]


def _tuned_gbt(X, y, cv: CvConfig, rng: RngSeed) -> GbtParams:
    try:
        return gbt_cv_select(X, y, cv.gbt_grid, cv.n_folds, rng)
    except CvError:
        # Too few rows to cross-validate: keep the first (simplest) grid point.
        return cv.gbt_grid[0]


def fpc_constants(
    d: ObservationalDataset, pred0: np.ndarray, pred1: np.ndarray, effect: float
) -> tuple[float, float]:
    """Shifts (c0, c1) minimizing squared error subject to the effect.

    ``pred0``/``pred1`` are h0 and h1 at every row. Expanding the loss,
    sum over arm w of (r_i - c_w)^2 gives quadratic n_w*c_w^2 and linear
    -2*c_w*sum(r_i); the constraint is c1 - c0 = effect - mean(h1 - h0).
    """
    w = d.treatment
    resid = d.outcome - np.where(w == 1, pred1, pred0)
    n0, n1 = int((w == 0).sum()), int((w == 1).sum())
    gap = effect - float(np.mean(pred1 - pred0))
    problem = EqQpProblem(
        quad=[2.0 * n0, 2.0 * n1],
        lin=[2.0 * resid[w == 0].sum(), 2.0 * resid[w == 1].sum()],
        a=[-1.0, 1.0],
        b=gap,
    )
    c0, c1 = solve_eq_qp(problem)
    return float(c0), float(c1)


def fpc_fit(
    d: ObservationalDataset,
    effect: float,
    base: str = "linear",
    cv: CvConfig | None = None,
    rng: RngSeed | int = 0,
    bases: tuple[Any, Any] | None = None,
) -> ConstrainedOutcomeModel:
    """Fit-plus-constant with a linear (``"linear"``) or boosted (``"treeboost"``) base."""
    h0, h1 = bases if bases is not None else fit_fpc_bases(d, base, cv, rng)
    pred0, pred1 = h0.predict(d.covariates), h1.predict(d.covariates)
    c0, c1 = fpc_constants(d, pred0, pred1, effect)
    mu0, mu1 = ShiftedModel(h0, c0), ShiftedModel(h1, c1)
    fitted = np.where(d.treatment == 1, pred1 + c1, pred0 + c0)
    return ConstrainedOutcomeModel(
        mu0, mu1, float(effect), f"fpc-{base}",
        float(np.mean((d.outcome - fitted) ** 2)),
        {"c0": c0, "c1": c1},
    )


# --------------------------------------------------------------------------
# Constrained gradient boosting


@dataclass(frozen=True, eq=False)
class CgbModel:
    """Per-arm boosted ensembles whose stages were solved jointly.

    Each arm is a :class:`BoostedModel` with initial value c0 or c1 and
    unit shrinkage; the leaf values are the constrained QP solutions.
    """

    arm0: BoostedModel
    arm1: BoostedModel
    lam: float
    encoded_effect: float
    train_sse: np.ndarray
    eval_sse: np.ndarray | None = None

    @property
    def n_stages(self) -> int:
        return self.arm0.n_stages

    @property
    def constants(self) -> tuple[float, float]:
        return self.arm0.initial_value, self.arm1.initial_value

    @property
    def stages(self) -> list[tuple[RegressionTree, RegressionTree]]:
        return list(zip(self.arm0.stages, self.arm1.stages))

    def truncated(self, n_stages: int) -> "CgbModel":
        """The model after its first ``n_stages`` stages."""
        return CgbModel(
            _truncate(self.arm0, n_stages), _truncate(self.arm1, n_stages),
            self.lam, self.encoded_effect, self.train_sse[: n_stages + 1],
            None if self.eval_sse is None else self.eval_sse[: n_stages + 1],
        )


def _truncate(m: BoostedModel, s: int) -> BoostedModel:
    return BoostedModel(
        m.initial_value, m.feature[:s], m.threshold[:s], m.left[:s], m.right[:s],
        m.value[:s], m.params, m.train_sse[: s + 1],
    )


def _stacked_model(init: float, trees: Sequence[np.ndarray], depth: int, min_leaf: int, sse) -> BoostedModel:
    return BoostedModel(float(init), *trees, GbtParams(trees[0].shape[0], 1.0, depth, min_leaf), sse)


def cgb_init(d: ObservationalDataset, effect: float) -> tuple[float, float]:
    """Best pair of constants with c1 - c0 = effect.

    Closed form: c0 = (sum(y) - n1 * effect) / n, c1 = c0 + effect.
    """
    n1 = d.n_treated
    c0 = (float(d.outcome.sum()) - n1 * effect) / d.n
    return c0, c0 + effect


@numba.njit(cache=True, nogil=True)
def _cgb_path(X, y, w, train, X0, order0, rows0, X1, order1, rows1,
              c0, c1, n_stages, lam, max_depth, min_leaf, target_sum):
    n = X.shape[0]
    cap = 2 ** (max_depth + 1) - 1
    feats = np.full((2, n_stages, cap), -1, dtype=np.int64)
    thrs = np.zeros((2, n_stages, cap))
    lefts = np.full((2, n_stages, cap), -1, dtype=np.int64)
    rights = np.full((2, n_stages, cap), -1, dtype=np.int64)
    vals = np.zeros((2, n_stages, cap))
    F0 = np.full(n, c0)
    F1 = np.full(n, c1)
    train_sse = np.empty(n_stages + 1)
    eval_sse = np.empty(n_stages + 1)
    ones0 = np.ones(rows0.size)
    ones1 = np.ones(rows1.size)
    r0 = np.empty(rows0.size)
    r1 = np.empty(rows1.size)
    for s in range(n_stages + 1):
        tr = 0.0
        ev = 0.0
        for i in range(n):
            e = y[i] - (F1[i] if w[i] == 1 else F0[i])
            if train[i]:
                tr += e * e
            else:
                ev += e * e
        train_sse[s] = tr
        eval_sse[s] = ev
        if s == n_stages:
            break
        for j in range(rows0.size):
            r0[j] = y[rows0[j]] - F0[rows0[j]]
        for j in range(rows1.size):
            r1[j] = y[rows1[j]] - F1[rows1[j]]
        t0 = _grow(X0, r0, ones0, order0, max_depth, min_leaf)
        t1 = _grow(X1, r1, ones1, order1, max_depth, min_leaf)
        k0 = t0[0].size
        k1 = t1[0].size
        nodes0 = _apply(X, t0[0], t0[1], t0[2], t0[3])
        nodes1 = _apply(X, t1[0], t1[1], t1[2], t1[3])
        # One variable per node; internal nodes get lin = a = 0 and stay at 0.
        quad = np.ones(k0 + k1)
        lin = np.zeros(k0 + k1)
        a = np.zeros(k0 + k1)
        for i in range(n):
            a[nodes0[i]] -= 1.0
            a[k0 + nodes1[i]] += 1.0
        for k in range(k0):
            if t0[0][k] == -1 and t0[6][k] > 0:
                quad[k] = 2.0 * (t0[6][k] + lam)
                lin[k] = 2.0 * t0[6][k] * t0[4][k]
            else:
                a[k] = 0.0
        for k in range(k1):
            if t1[0][k] == -1 and t1[6][k] > 0:
                quad[k0 + k] = 2.0 * (t1[6][k] + lam)
                lin[k0 + k] = 2.0 * t1[6][k] * t1[4][k]
            else:
                a[k0 + k] = 0.0
        # Offset is the (rounding-level) drift of the running constraint sum.
        b = target_sum
        for i in range(n):
            b -= F1[i] - F0[i]
        u, _ = _eq_qp(quad, lin, a, b)
        for i in range(n):
            F0[i] += u[nodes0[i]]
            F1[i] += u[k0 + nodes1[i]]
        for arm in range(2):
            t = t0 if arm == 0 else t1
            off = 0 if arm == 0 else k0
            k = t[0].size
            feats[arm, s, :k] = t[0]
            thrs[arm, s, :k] = t[1]
            lefts[arm, s, :k] = t[2]
            rights[arm, s, :k] = t[3]
            for j in range(k):
                vals[arm, s, j] = u[off + j] if t[0][j] == -1 else 0.0
    return feats, thrs, lefts, rights, vals, train_sse, eval_sse


def fit_cgb_model(
    d: ObservationalDataset,
    effect: float,
    params: CgbParams,
    train: np.ndarray | None = None,
) -> CgbModel:
    """Run constrained boosting for ``params.n_stages`` stages.

    Loss terms use only ``train`` rows (all rows by default); the effect
    constraint always sums over every row of ``d``.
    """
    n = d.n
    train = np.ones(n, dtype=bool) if train is None else np.asarray(train, dtype=bool)
    w = d.treatment
    rows0 = np.flatnonzero(train & (w == 0))
    rows1 = np.flatnonzero(train & (w == 1))
    if rows0.size == 0 or rows1.size == 0:
        raise ValueError("both arms need training rows")
    y_tr = d.outcome[train]
    n1_tr = rows1.size
    c0 = (float(y_tr.sum()) - n1_tr * effect) / train.sum()
    c1 = c0 + effect
    X = np.ascontiguousarray(d.covariates)
    X0, X1 = X[rows0], X[rows1]
    feats, thrs, lefts, rights, vals, train_sse, eval_sse = _cgb_path(
        X, d.outcome, w, train, X0, presort(X0), rows0, X1, presort(X1), rows1,
        c0, c1, int(params.n_stages), float(params.lam), int(params.max_depth),
        int(params.min_leaf), n * float(effect),
    )
    arms = [
        _stacked_model(c, (feats[a], thrs[a], lefts[a], rights[a], vals[a]),
                       params.max_depth, params.min_leaf, train_sse)
        for a, c in ((0, c0), (1, c1))
    ]
    return CgbModel(arms[0], arms[1], float(params.lam), float(effect), train_sse, eval_sse)


def cgb_stage(
    d: ObservationalDataset,
    model: CgbModel,
    lam: float,
    max_depth: int = 2,
    min_leaf: int = 10,
    train: np.ndarray | None = None,
) -> CgbModel:
    """Append one constrained stage to ``model``.

    Trees are fit to each arm's residuals for structure only. Leaf values
    then solve one QP: each leaf contributes n_leaf*v^2 - 2*v*sum(resid)
    + lam*v^2, and the treated-tree leaf values summed over all rows minus
    the untreated-tree ones must not move the constraint sum.
    """
    X, y, w = d.covariates, d.outcome, d.treatment
    train = np.ones(d.n, dtype=bool) if train is None else np.asarray(train, dtype=bool)
    F0, F1 = model.arm0.predict(X), model.arm1.predict(X)
    resid = y - np.where(w == 1, F1, F0)
    trees, leaves, blocks = [], [], []
    for arm, sign in ((0, -1.0), (1, 1.0)):
        rows = train & (w == arm)
        tree = fit_tree(X[rows], resid[rows], max_depth=max_depth, min_leaf=min_leaf)
        leaf = tree.apply(X)
        n_leaf = np.bincount(leaf[rows], minlength=tree.n_leaves).astype(float)
        s_leaf = np.bincount(leaf[rows], weights=resid[rows], minlength=tree.n_leaves)
        count = np.bincount(leaf, minlength=tree.n_leaves).astype(float)
        trees.append(tree)
        leaves.append(leaf)
        blocks.append((n_leaf, s_leaf, sign * count))
    n_leaf = np.concatenate([b[0] for b in blocks])
    used = n_leaf > 0
    quad = 2.0 * (n_leaf + lam)
    lin = 2.0 * np.concatenate([b[1] for b in blocks])
    a = np.concatenate([b[2] for b in blocks])
    b = d.n * model.encoded_effect - float(np.sum(F1 - F0))
    u = np.zeros(n_leaf.size)
    u[used] = solve_eq_qp(EqQpProblem(quad[used], lin[used], a[used], b))
    L0 = trees[0].n_leaves
    new0 = _append_tree(model.arm0, trees[0].with_leaf_values(u[:L0]))
    new1 = _append_tree(model.arm1, trees[1].with_leaf_values(u[L0:]))
    F0, F1 = F0 + u[:L0][leaves[0]], F1 + u[L0:][leaves[1]]
    err = y - np.where(w == 1, F1, F0)
    train_sse = np.append(model.train_sse, np.sum(err[train] ** 2))
    eval_sse = None if model.eval_sse is None else np.append(model.eval_sse, np.sum(err[~train] ** 2))
    return CgbModel(new0, new1, float(lam), model.encoded_effect, train_sse, eval_sse)


def _append_tree(m: BoostedModel, tree: RegressionTree) -> BoostedModel:
    k = tree.feature.size
    cap = max(m.feature.shape[1], k)

    def grow(arr, new, fill):
        out = np.full((arr.shape[0] + 1, cap), fill, dtype=arr.dtype)
        out[:-1, : arr.shape[1]] = arr
        out[-1, :k] = new
        return out

    params = GbtParams(m.n_stages + 1, 1.0, max(m.params.max_depth, tree.max_depth), m.params.min_leaf)
    return BoostedModel(
        m.initial_value,
        grow(m.feature, tree.feature, -1),
        grow(m.threshold, tree.threshold, 0.0),
        grow(m.left, tree.left, -1),
        grow(m.right, tree.right, -1),
        grow(m.value, np.where(tree.feature == -1, tree.value, 0.0), 0.0),
        params,
        m.train_sse,
    )


def cgb_start(d: ObservationalDataset, effect: float, max_depth: int = 2, min_leaf: int = 10) -> CgbModel:
    """Zero-stage model holding the constrained constants."""
    c0, c1 = cgb_init(d, effect)
    empty = (
        np.full((0, 1), -1, dtype=np.int64), np.zeros((0, 1)),
        np.full((0, 1), -1, dtype=np.int64), np.full((0, 1), -1, dtype=np.int64),
        np.zeros((0, 1)),
    )
    pred = np.where(d.treatment == 1, c1, c0)
    sse = np.array([np.sum((d.outcome - pred) ** 2)])
    return CgbModel(
        _stacked_model(c0, empty, max_depth, min_leaf, sse),
        _stacked_model(c1, empty, max_depth, min_leaf, sse),
        0.0, float(effect), sse, np.array([0.0]),
    )


def constrained_cv_scores(
    d: ObservationalDataset,
    effect: float,
    grid: Sequence[CgbParams],
    n_folds: int,
    rng: RngSeed | int,
) -> list[float]:
    """Pooled held-out MSE per grid point.

    Folds are stratified by arm. Within a fold, stage QPs keep the effect
    constraint over all rows while the loss covers training rows only.
    Points differing only in ``n_stages`` share one boosting path.
    """
    folds = make_folds(d.n, n_folds, rng, strata=d.treatment)
    groups: dict[tuple, list[int]] = defaultdict(list)
    for i, g in enumerate(grid):
        groups[(g.lam, g.max_depth, g.min_leaf)].append(i)
    sse = np.zeros(len(grid))
    for k in range(n_folds):
        train = folds != k
        for (lam, depth, min_leaf), members in groups.items():
            longest = max(grid[i].n_stages for i in members)
            model = fit_cgb_model(d, effect, CgbParams(longest, lam, depth, min_leaf), train)
            for i in members:
                sse[i] += model.eval_sse[grid[i].n_stages]
    return list(sse / d.n)


def constrained_cv(
    d: ObservationalDataset,
    effect: float,
    grid: Sequence[CgbParams],
    n_folds: int = 5,
    rng: RngSeed | int = 0,
) -> CgbParams:
    """Grid point with the lowest held-out MSE; ties go to the earliest point."""
    if not grid:
        raise ValueError("parameter grid is empty")
    if len(grid) == 1:
        return grid[0]
    scores = constrained_cv_scores(d, effect, grid, n_folds, rng)
    best = 0
    for i, s in enumerate(scores):
        if s < scores[best]:
            best = i
    return grid[best]


def cgb_fit(
    d: ObservationalDataset,
    effect: float,
    params: CgbParams | None = None,
    cv: CvConfig | None = None,
    rng: RngSeed | int = 0,
) -> ConstrainedOutcomeModel:
    """Constrained gradient boosting; hyperparameters by constrained CV unless given."""
    cv = cv or CvConfig()
    if params is None:
        try:
            params = constrained_cv(d, effect, cv.cgb_grid(d.n), cv.n_folds, rng)
        except CvError:
            params = cv.cgb_grid(d.n)[0]
    model = fit_cgb_model(d, effect, params)
    return ConstrainedOutcomeModel(
        model.arm0, model.arm1, float(effect), "cgb-tree",
        float(model.train_sse[-1] / d.n),
        {"n_stages": params.n_stages, "lam": params.lam, "max_depth": params.max_depth,
         "min_leaf": params.min_leaf},
    )


def fit_constrained(
    d: ObservationalDataset,
    effect: float,
    fit_method: str,
    cv: CvConfig | None = None,
    rng: RngSeed | int = 0,
    bases: tuple[Any, Any] | None = None,
) -> ConstrainedOutcomeModel:
    """Dispatch on ``fit_method`` in {fpc-linear, fpc-treeboost, cgb-tree}."""
    if fit_method == "fpc-linear":
        return fpc_fit(d, effect, "linear", cv, rng, bases)
    if fit_method == "fpc-treeboost":
        return fpc_fit(d, effect, "treeboost", cv, rng, bases)
    if fit_method == "cgb-tree":
        return cgb_fit(d, effect, cv=cv, rng=rng)
    raise ValueError(f"unknown fit method {fit_method!r}")
