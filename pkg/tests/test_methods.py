import numpy as np
import pytest

from synthval.config import CvConfig
from synthval.dataset import ObservationalDataset, RngSeed
from synthval.learners.boosting import GbtParams
from synthval.learners.linear import fit_ols
from synthval.methods import (
    AllMethodsFailed,
    EffectEstimate,
    MethodError,
    MethodFailure,
    compute_iptw_weights,
    estimate_adjusted,
    estimate_all,
    estimate_boosting,
    estimate_iptw,
    estimate_matched,
    estimate_raw,
    fit_propensity,
    make_registry,
    match_pairs,
)
from synthval.scenarios import didactic_toy

from conftest import make_dataset

ONE_POINT_CV = CvConfig(n_folds=3, gbt_grid=(GbtParams(100, 0.1, 2, 10),))
SMALL_GBT_CV = CvConfig(n_folds=3, gbt_grid=(GbtParams(50, 0.1, 2, 10), GbtParams(200, 0.1, 2, 10)))


def dataset(x, w, y):
    return ObservationalDataset(np.asarray(x, float).reshape(len(w), -1), np.asarray(w), np.asarray(y, float))


def randomized(n, seed, effect=0.0, p=2):
    gen = np.random.default_rng(seed)
    X = gen.standard_normal((n, p))
    w = gen.integers(0, 2, n)
    w[:2] = (0, 1)
    y = X.sum(axis=1) + effect * w + gen.standard_normal(n)
    return ObservationalDataset(X, w, y)


def test_raw_examples():
    d = dataset([0] * 6, [0, 0, 0, 1, 1, 1], [1, 2, 3, 2, 3, 4])
    assert estimate_raw(d).value == 1.0
    d = dataset([0] * 6, [0, 0, 0, 1, 1, 1], [1, 5, 2, 1, 5, 2])
    assert estimate_raw(d).value == 0.0


def test_raw_on_toy_matches_population_contrast():
    d, _ = didactic_toy(5000, RngSeed(0))
    # With e(x) = expit(2x) and x ~ U(-pi, pi), P(W=1) = 1/2 by symmetry, so
    # E[Y|W=1] - E[Y|W=0] = 2 E[sin(x) (2 e(x) - 1)] = 2 E[sin(x) tanh(x)].
    mid = -np.pi + (np.arange(200_000) + 0.5) * (2 * np.pi / 200_000)
    truth = 2 * np.mean(np.sin(mid) * np.tanh(mid))
    y, w = d.outcome, d.treatment
    se = np.sqrt(y[w == 1].var(ddof=1) / w.sum() + y[w == 0].var(ddof=1) / (w == 0).sum())
    est = estimate_raw(d).value
    assert est > 0
    assert abs(est - truth) <= 3 * se


def test_adjusted_exact_and_shift_invariant():
    gen = np.random.default_rng(1)
    x = gen.normal(size=30)
    w = (gen.random(30) < 0.5).astype(int)
    w[:2] = (0, 1)
    d = dataset(x, w, 2 * w + x)
    assert estimate_adjusted(d).value == pytest.approx(2.0, abs=1e-12)
    d2 = make_dataset(n=300, seed=2)
    shifted = ObservationalDataset(d2.covariates, d2.treatment, d2.outcome + 17.0)
    assert estimate_adjusted(shifted).value == pytest.approx(estimate_adjusted(d2).value, abs=1e-10)


def test_adjusted_null_effect_within_sampling_error():
    d = randomized(1000, 3)
    X1 = np.column_stack([np.ones(d.n), d.treatment, d.covariates])
    beta, *_ = np.linalg.lstsq(X1, d.outcome, rcond=None)
    resid = d.outcome - X1 @ beta
    sigma2 = resid @ resid / (d.n - X1.shape[1])
    se = np.sqrt(sigma2 * np.linalg.inv(X1.T @ X1)[1, 1])
    assert abs(estimate_adjusted(d).value) <= 3 * se


def test_propensity_randomized_and_deterministic():
    gen = np.random.default_rng(4)
    X = gen.uniform(-1, 1, (2000, 2))
    d = ObservationalDataset(X, gen.integers(0, 2, 2000), gen.normal(size=2000))
    m = fit_propensity(d)
    p = m.predict_proba(d.covariates)
    assert p.min() >= 0.4 and p.max() <= 0.6
    assert np.array_equal(m.coefficients, fit_propensity(d).coefficients)


def test_propensity_separation_has_method_context():
    x = np.linspace(-1, 1, 40)
    d = dataset(x, (x > 0).astype(int), x)
    with pytest.raises(MethodError, match="iptw: propensity model failed: quasi-separation"):
        fit_propensity(d, "iptw")


def test_matching_exact_ties():
    d = dataset([0, 0, 1, 1], [1, 0, 1, 0], [3.0, 1.0, 5.0, 3.0])
    scores = np.array([0.3, 0.3, 0.6, 0.6])
    sample = match_pairs(d, scores)
    assert sorted(sample.pairs) == [(0, 1), (2, 3)]
    assert sample.n_unmatched == 0
    assert estimate_matched(d, scores=scores).value == pytest.approx(2.0, abs=1e-12)


def test_matching_drops_treated_outside_caliper():
    d = dataset([0] * 6, [1, 1, 0, 0, 0, 0], np.zeros(6))
    scores = np.array([0.999, 0.5, 0.49, 0.51, 0.52, 0.48])
    sample = match_pairs(d, scores)
    assert sample.pairs == ((1, 2),)
    assert sample.n_unmatched == 1
    est = estimate_matched(d, scores=scores)
    assert est.value == 0.0
    assert est.diagnostics["unmatched_treated"] == 1


def test_matching_no_overlap():
    d = dataset([0] * 4, [1, 1, 0, 0], np.zeros(4))
    with pytest.raises(MethodError, match="no overlap"):
        match_pairs(d, np.array([0.99, 0.98, 0.01, 0.011]))


def greedy_oracle(w, scores):
    lg = [np.log(s / (1 - s)) for s in scores]
    mean = sum(lg) / len(lg)
    caliper = 0.2 * (sum((v - mean) ** 2 for v in lg) / (len(lg) - 1)) ** 0.5
    treated = sorted((i for i in range(len(w)) if w[i] == 1), key=lambda i: (-scores[i], i))
    free = [i for i in range(len(w)) if w[i] == 0]
    pairs = []
    for t in treated:
        best = None
        for c in free:
            if best is None or abs(lg[c] - lg[t]) < abs(lg[best] - lg[t]):
                best = c
        if best is not None and abs(lg[best] - lg[t]) <= caliper:
            pairs.append((t, best))
            free.remove(best)
    return pairs


@pytest.mark.parametrize("seed", range(5))
def test_matching_matches_independent_greedy(seed):
    gen = np.random.default_rng(seed)
    w = gen.integers(0, 2, 20)
    w[:2] = (0, 1)
    scores = gen.uniform(0.05, 0.95, 20)
    d = dataset(np.zeros(20), w, np.zeros(20))
    sample = match_pairs(d, scores)
    assert list(sample.pairs) == greedy_oracle(list(w), list(scores))
    lg = np.log(scores / (1 - scores))
    assert all(abs(lg[t] - lg[c]) <= sample.caliper_width for t, c in sample.pairs)
    used = [i for pair in sample.pairs for i in pair]
    assert len(used) == len(set(used))


def test_matched_estimate_is_mean_pair_difference():
    d = make_dataset(n=400, seed=5)
    scores = fit_propensity(d).predict_proba(d.covariates)
    pairs = match_pairs(d, scores).pairs
    diff = np.mean([d.outcome[t] - d.outcome[c] for t, c in pairs])
    est = estimate_matched(d)
    assert est.value == pytest.approx(diff, abs=1e-10)
    assert est.diagnostics["pairs"] == len(pairs)


def test_iptw_weights():
    d = dataset([0] * 4, [0, 1, 0, 1], np.zeros(4))
    assert np.allclose(compute_iptw_weights(d, np.full(4, 0.5)), 1.0)
    wts = compute_iptw_weights(d, np.array([0.5, 0.999, 0.5, 0.5]))
    assert wts[1] == pytest.approx(0.5 / 0.99)
    assert np.all(wts <= 0.5 / 0.01)


def test_iptw_weights_average_one_per_arm():
    d = make_dataset(n=2000, seed=6)
    wts = compute_iptw_weights(d, fit_propensity(d).predict_proba(d.covariates))
    w = d.treatment
    # Each arm's stabilized weights average to about 1 when the model is right.
    for arm in (0, 1):
        assert abs(wts[w == arm].mean() - 1) <= 0.2


def test_iptw_equal_scores_is_raw():
    d = make_dataset(n=200, seed=7)
    assert estimate_iptw(d, scores=np.full(d.n, 0.3)).value == pytest.approx(estimate_raw(d).value, abs=1e-12)


def test_iptw_reduces_toy_confounding():
    d, _ = didactic_toy(5000, RngSeed(8))
    assert abs(estimate_iptw(d).value) < abs(estimate_raw(d).value)


def test_iptw_weight_scale_invariance():
    d = make_dataset(n=300, seed=9)
    wts = compute_iptw_weights(d, fit_propensity(d).predict_proba(d.covariates))
    a = fit_ols(d.treatment, d.outcome, weights=wts).coefficients[0]
    b = fit_ols(d.treatment, d.outcome, weights=2 * wts).coefficients[0]
    assert a == pytest.approx(b, abs=1e-12)
    assert estimate_iptw(d).value == pytest.approx(a, abs=1e-12)


def test_boosting_constant_outcomes():
    d = dataset(np.arange(60), np.tile([0, 1], 30), np.full(60, 4.0))
    assert estimate_boosting(d, SMALL_GBT_CV, 0).value == 0.0


def test_boosting_linear_truth():
    gen = np.random.default_rng(10)
    x = gen.uniform(-2, 2, 2000)
    w = gen.integers(0, 2, 2000)
    d = dataset(x, w, x + 3 * w + 0.5 * gen.standard_normal(2000))
    est = estimate_boosting(d, SMALL_GBT_CV, RngSeed(1))
    assert abs(est.value - 3) <= 0.2
    assert est == estimate_boosting(d, SMALL_GBT_CV, RngSeed(1))


def test_estimate_all_shapes():
    d = make_dataset(n=200, seed=11)
    out = estimate_all(d, make_registry(), SMALL_GBT_CV, RngSeed(0))
    assert [e.method for e in out] == ["raw", "adjusted", "matched", "iptw", "boosting"]
    assert all(isinstance(e, EffectEstimate) and np.isfinite(e.value) for e in out)
    (only,) = estimate_all(d, make_registry(["raw"]))
    assert only.value == estimate_raw(d).value


def test_estimate_all_partial_failure():
    x = np.linspace(-1, 1, 60)
    d = dataset(x, (x > 0).astype(int), x + np.sin(7 * x))
    out = {e.method: e for e in estimate_all(d, make_registry(), SMALL_GBT_CV, RngSeed(0))}
    assert isinstance(out["iptw"], MethodFailure) and isinstance(out["matched"], MethodFailure)
    assert "quasi-separation" in out["iptw"].message
    for m in ("raw", "adjusted", "boosting"):
        assert isinstance(out[m], EffectEstimate)
    with pytest.raises(AllMethodsFailed):
        estimate_all(d, make_registry(["matched", "iptw"]))


def test_registry_validation():
    with pytest.raises(KeyError, match="valid ids"):
        make_registry(["raw", "tmle"])
    with pytest.raises(ValueError):
        make_registry(["raw", "raw"])
    with pytest.raises(ValueError):
        make_registry([])


def test_permutation_invariance():
    d = make_dataset(n=300, seed=12)
    perm = np.random.default_rng(0).permutation(d.n)
    dp = ObservationalDataset(d.covariates[perm], d.treatment[perm], d.outcome[perm])
    for f in (estimate_raw, estimate_adjusted, estimate_matched, estimate_iptw):
        assert f(dp).value == pytest.approx(f(d).value, abs=1e-10)
    # A one-point grid skips cross-validation, so fold membership cannot differ.
    a = estimate_boosting(d, ONE_POINT_CV, 0).value
    assert estimate_boosting(dp, ONE_POINT_CV, 0).value == pytest.approx(a, abs=1e-10)


def test_randomized_null_effect_unbiased():
    reps = 50
    est = {m.id: [] for m in make_registry()}
    for r in range(reps):
        d = randomized(1000, 100 + r)
        for e in estimate_all(d, make_registry(), SMALL_GBT_CV, RngSeed(r)):
            est[e.method].append(e.value)
    for m, vals in est.items():
        vals = np.asarray(vals)
        assert len(vals) == reps, m
        assert abs(vals.mean()) <= 3 * vals.std(ddof=1) / np.sqrt(reps), m
