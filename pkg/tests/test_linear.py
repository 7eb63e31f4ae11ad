import warnings

import numpy as np
import pytest

from synthval.learners.linear import (
    LogisticFitError,
    RankDeficiencyWarning,
    SeparationError,
    fit_logistic,
    fit_ols,
    logistic_gradient,
    logistic_loglik,
)


def test_exact_line():
    x = np.arange(10.0)
    m = fit_ols(x, 3 + 2 * x)
    assert m.intercept == pytest.approx(3)
    assert m.coefficients[0] == pytest.approx(2)
    assert not m.rank_deficient


def test_orthogonal_target_has_zero_slope():
    x = np.array([-2.0, -1.0, 1.0, 2.0])
    y = np.array([1.0, 0.0, 0.0, 1.0])  # symmetric in x, so orthogonal to centred x
    assert abs(fit_ols(x, y).coefficients[0]) < 1e-12


def test_weights_equal_row_duplication():
    gen = np.random.default_rng(0)
    X = gen.standard_normal((4, 1))
    y = gen.standard_normal(4)
    weighted = fit_ols(X, y, weights=[2, 2, 1, 1])
    dup = fit_ols(np.vstack([X, X[:2]]), np.concatenate([y, y[:2]]))
    assert weighted.intercept == pytest.approx(dup.intercept)
    assert np.allclose(weighted.coefficients, dup.coefficients)


def test_residuals_orthogonal_to_design():
    gen = np.random.default_rng(1)
    X = gen.standard_normal((100, 4))
    y = X @ [1, -2, 0.5, 0] + gen.standard_normal(100)
    wts = gen.random(100)
    m = fit_ols(X, y, weights=wts)
    Z = np.column_stack([np.ones(100), X])
    score = Z.T @ (wts * (y - m.predict(X)))
    assert np.max(np.abs(score)) <= 1e-8 * np.linalg.norm(Z.T @ (wts * y))


def test_rank_deficient_design_is_flagged():
    x = np.arange(6.0)
    with pytest.warns(RankDeficiencyWarning):
        m = fit_ols(np.column_stack([x, 2 * x]), 1 + x)
    assert m.rank_deficient
    assert np.allclose(m.predict(np.column_stack([x, 2 * x])), 1 + x)


def test_independent_treatment():
    gen = np.random.default_rng(2)
    n = 5000
    X = gen.standard_normal((n, 2))
    w = np.zeros(n)
    w[: int(0.4 * n)] = 1
    gen.shuffle(w)
    m = fit_logistic(X, w)
    assert np.all(np.abs(m.coefficients) < 0.1)
    assert m.intercept == pytest.approx(np.log(0.4 / 0.6), abs=0.1)
    params = np.r_[m.intercept, m.coefficients]
    assert np.max(np.abs(logistic_gradient(X, w, params))) <= 1e-8


def test_gradient_matches_finite_differences():
    gen = np.random.default_rng(3)
    X = gen.standard_normal((200, 3))
    w = (gen.random(200) < 0.5).astype(float)
    params = gen.standard_normal(4) * 0.5
    h = 1e-5
    fd = np.array([
        (logistic_loglik(X, w, params + h * e) - logistic_loglik(X, w, params - h * e)) / (2 * h)
        for e in np.eye(4)
    ])
    g = logistic_gradient(X, w, params)
    assert np.max(np.abs(fd - g)) <= 1e-6 * np.max(np.abs(g))


def test_saturated_binary_feature():
    x = np.array([0] * 10 + [1] * 10, dtype=float)
    w = np.array([1] * 3 + [0] * 7 + [1] * 8 + [0] * 2, dtype=float)
    p = fit_logistic(x, w).predict_proba(np.array([0.0, 1.0]))
    assert p == pytest.approx([0.3, 0.8], abs=1e-7)


def test_score_equation():
    gen = np.random.default_rng(4)
    X = gen.standard_normal((300, 2))
    w = (gen.random(300) < 1 / (1 + np.exp(-X[:, 0]))).astype(float)
    m = fit_logistic(X, w)
    assert m.predict_proba(X).mean() == pytest.approx(w.mean(), abs=1e-6)


def test_separation_and_nonconvergence():
    x = np.array([-2.0, -1.0, 1.0, 2.0])
    w = np.array([0, 0, 1, 1])
    with pytest.raises(SeparationError, match="quasi-separation") as info:
        fit_logistic(x, w)
    assert info.value.params is not None
    gen = np.random.default_rng(5)
    X = gen.standard_normal((100, 2))
    w = (gen.random(100) < 0.5).astype(float)
    with pytest.raises(LogisticFitError, match="did not converge") as info:
        fit_logistic(X, w, max_iter=1, tol=1e-14)
    assert info.value.n_iter == 1
    with pytest.raises(ValueError):
        fit_logistic(X, np.zeros(100))


def test_probabilities_in_unit_interval():
    gen = np.random.default_rng(6)
    X = gen.standard_normal((100, 1))
    w = (gen.random(100) < 1 / (1 + np.exp(-3 * X[:, 0]))).astype(float)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        p = fit_logistic(X, w).predict_proba(X * 100)
    assert np.all((p >= 0) & (p <= 1))
