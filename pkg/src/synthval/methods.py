"""Average treatment effect estimators compared by synth-validation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .config import CvConfig, METHOD_IDS
from .dataset import ObservationalDataset, RngSeed, arm_indices, as_seed
from .learners.boosting import fit_gbt
from .learners.cv import CvError, gbt_cv_select
from .learners.linear import LogisticFitError, LogisticModel, fit_logistic, fit_ols

CALIPER_MULTIPLIER = 0.2
PROPENSITY_CLAMP = (0.01, 0.99)

DISPLAY_NAMES = {
    "raw": "Raw difference in means",
    "adjusted": "Covariate-adjusted regression",
    "matched": "1:1 propensity-matched regression",
    "iptw": "Stabilized IPTW regression",
    "boosting": "Boosted potential-outcome models",
}


class MethodError(RuntimeError):
    """An estimator could not produce an estimate on this dataset."""

    def __init__(self, method: str, message: str):
        super().__init__(f"{method}: {message}")
        self.method = method


@dataclass(frozen=True)
class EffectEstimate:
    method: str
    value: float
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise MethodError(self.method, f"non-finite estimate {self.value}")


@dataclass(frozen=True)
class MethodFailure:
    method: str
    message: str


@dataclass(frozen=True)
class MatchedSample:
    pairs: tuple[tuple[int, int], ...]
    caliper_width: float
    n_unmatched: int = 0


def _logit(p):
    return np.log(p) - np.log1p(-p)


def estimate_raw(d: ObservationalDataset, **_) -> EffectEstimate:
    y, w = d.outcome, d.treatment
    return EffectEstimate("raw", float(y[w == 1].mean() - y[w == 0].mean()))


def estimate_adjusted(d: ObservationalDataset, **_) -> EffectEstimate:
    """Treatment coefficient from OLS of y on (1, w, X)."""
    design = np.column_stack([d.treatment, d.covariates])
    fit = fit_ols(design, d.outcome)
    return EffectEstimate(
        "adjusted", float(fit.coefficients[0]), {"rank_deficient": fit.rank_deficient}
    )


def fit_propensity(d: ObservationalDataset, method: str = "propensity") -> LogisticModel:
    """Logistic regression of treatment on all covariates."""
    try:
        return fit_logistic(d.covariates, d.treatment)
    except LogisticFitError as exc:
        raise MethodError(method, f"propensity model failed: {exc}") from exc


def match_pairs(
    d: ObservationalDataset,
    scores: np.ndarray,
    caliper_scale: str = "logit",
) -> MatchedSample:
    """Greedy 1:1 nearest-neighbour matching without replacement.

    Distances are on the logit of the score. Treated rows are taken in order
    of descending score; each takes the closest unused control (lowest index
    on ties) if it lies within 0.2 standard deviations of the logit scores,
    otherwise it is dropped. With ``caliper_scale="probability"`` the width
    is 0.2 SD of the raw scores instead, still compared on the logit scale.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not ((scores > 0) & (scores < 1)).all():
        raise ValueError("propensity scores must lie strictly inside (0, 1)")
    lg = _logit(scores)
    spread = scores if caliper_scale == "probability" else lg
    caliper = CALIPER_MULTIPLIER * float(np.std(spread, ddof=1))
    treated = arm_indices(d, 1)
    controls = arm_indices(d, 0)
    treated = treated[np.argsort(-scores[treated], kind="stable")]
    available = np.ones(controls.size, dtype=bool)
    ctrl_logit = lg[controls]
    pairs = []
    for t in treated:
        if not available.any():
            break
        dist = np.where(available, np.abs(ctrl_logit - lg[t]), np.inf)
        j = int(np.argmin(dist))
        if dist[j] <= caliper:
            pairs.append((int(t), int(controls[j])))
            available[j] = False
    if not pairs:
        raise MethodError("matched", "no overlap: no treated row has a control within the caliper")
    return MatchedSample(tuple(pairs), caliper, int(treated.size - len(pairs)))


def estimate_matched(
    d: ObservationalDataset, caliper_scale: str = "logit", scores: np.ndarray | None = None, **_
) -> EffectEstimate:
    """Treatment coefficient of OLS of y on (1, w) over the matched rows."""
    if scores is None:
        scores = fit_propensity(d, "matched").predict_proba(d.covariates)
    sample = match_pairs(d, scores, caliper_scale)
    rows = np.array(sample.pairs).ravel()
    fit = fit_ols(d.treatment[rows], d.outcome[rows])
    return EffectEstimate(
        "matched",
        float(fit.coefficients[0]),
        {"pairs": len(sample.pairs), "unmatched_treated": sample.n_unmatched,
         "caliper": sample.caliper_width},
    )


def compute_iptw_weights(d: ObservationalDataset, scores: np.ndarray) -> np.ndarray:
    """Stabilized inverse-propensity weights with scores clamped to [0.01, 0.99]."""
    e = np.clip(np.asarray(scores, dtype=np.float64), *PROPENSITY_CLAMP)
    w = d.treatment
    treated_frac = w.mean()
    return np.where(w == 1, treated_frac / e, (1 - treated_frac) / (1 - e))


def estimate_iptw(
    d: ObservationalDataset, scores: np.ndarray | None = None, **_
) -> EffectEstimate:
    """Treatment coefficient of weighted OLS of y on (1, w)."""
    if scores is None:
        scores = fit_propensity(d, "iptw").predict_proba(d.covariates)
    weights = compute_iptw_weights(d, scores)
    fit = fit_ols(d.treatment, d.outcome, weights=weights)
    return EffectEstimate(
        "iptw",
        float(fit.coefficients[0]),
        {"min_weight": float(weights.min()), "max_weight": float(weights.max())},
    )


def estimate_boosting(
    d: ObservationalDataset,
    cv: CvConfig | None = None,
    rng: RngSeed | int = 0,
    **_,
) -> EffectEstimate:
    """Mean over all rows of h1(x) - h0(x), each arm fit by tuned boosting."""
    cv = cv or CvConfig()
    rng = as_seed(rng)
    preds, chosen = [], []
    for arm in (0, 1):
        rows = arm_indices(d, arm)
        X, y = d.covariates[rows], d.outcome[rows]
        try:
            params = gbt_cv_select(X, y, cv.gbt_grid, cv.n_folds, rng.child(arm))
        except CvError:
            params = cv.gbt_grid[0]
        if rows.size < 2:
            preds.append(np.full(d.n, float(y.mean())))
        else:
            preds.append(fit_gbt(X, y, params).predict(d.covariates))
        chosen.append(params)
    return EffectEstimate(
        "boosting",
        float(np.mean(preds[1] - preds[0])),
        {f"arm{a}": {"n_stages": p.n_stages, "max_depth": p.max_depth} for a, p in enumerate(chosen)},
    )


ESTIMATORS: dict[str, Callable[..., EffectEstimate]] = {
    "raw": estimate_raw,
    "adjusted": estimate_adjusted,
    "matched": estimate_matched,
    "iptw": estimate_iptw,
    "boosting": estimate_boosting,
}


@dataclass(frozen=True)
class CausalMethod:
    """A registry entry: id, display name and the estimator callable.

    The callable receives ``(d, cv=..., rng=..., caliper_scale=...)`` and
    must return an :class:`EffectEstimate`.
    """

    id: str
    display_name: str
    estimator: Callable[..., EffectEstimate]

    def __call__(self, d, **kw) -> EffectEstimate:
        return self.estimator(d, **kw)


def make_registry(ids: Sequence[str] = METHOD_IDS) -> tuple[CausalMethod, ...]:
    if not ids:
        raise ValueError("registry must not be empty")
    if len(set(ids)) != len(ids):
        raise ValueError("registry ids must be unique")
    out = []
    for mid in ids:
        if mid not in ESTIMATORS:
            raise KeyError(f"unknown method {mid!r}; valid ids: {', '.join(ESTIMATORS)}")
        out.append(CausalMethod(mid, DISPLAY_NAMES[mid], ESTIMATORS[mid]))
    return tuple(out)


def run_method(
    method: CausalMethod,
    d: ObservationalDataset,
    cv: CvConfig | None = None,
    rng: RngSeed | int = 0,
    caliper_scale: str = "logit",
) -> EffectEstimate | MethodFailure:
    try:
        est = method(d, cv=cv, rng=rng, caliper_scale=caliper_scale)
    except (MethodError, ValueError, ArithmeticError, np.linalg.LinAlgError, CvError) as exc:
        return MethodFailure(method.id, str(exc))
    if est.method != method.id:
        est = EffectEstimate(method.id, est.value, est.diagnostics)
    return est


class AllMethodsFailed(RuntimeError):
    pass


def estimate_all(
    d: ObservationalDataset,
    registry: Sequence[CausalMethod] | None = None,
    cv: CvConfig | None = None,
    rng: RngSeed | int = 0,
    caliper_scale: str = "logit",
) -> list[EffectEstimate | MethodFailure]:
    """Run every registry method in order; failures are recorded, not raised.

    Method ``i`` draws from substream ``i`` of ``rng``.
    """
    registry = make_registry() if registry is None else tuple(registry)
    if not registry:
        raise ValueError("registry must not be empty")
    rng = as_seed(rng)
    results = [
        run_method(m, d, cv, rng.child(i), caliper_scale) for i, m in enumerate(registry)
    ]
    if all(isinstance(r, MethodFailure) for r in results):
        raise AllMethodsFailed(
            "every method failed: " + "; ".join(r.message for r in results)
        )
    return results
