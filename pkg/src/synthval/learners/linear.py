"""Least squares and logistic regression."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

SEPARATION_CAP = 30.0


class RankDeficiencyWarning(UserWarning):
    pass


class LogisticFitError(RuntimeError):
    """Logistic regression failed; ``params`` holds the last iterate (intercept first)."""

    def __init__(self, message: str, params: np.ndarray | None = None, n_iter: int = 0):
        super().__init__(message)
        self.params = params
        self.n_iter = n_iter


class SeparationError(LogisticFitError):
    pass


@dataclass(frozen=True)
class LinearModel:
    intercept: float
    coefficients: np.ndarray
    feature_map: tuple[str, ...] = ()
    rank_deficient: bool = False

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64).reshape(len(X), -1)
        return self.intercept + X @ self.coefficients

    __call__ = predict


@dataclass(frozen=True)
class LogisticModel:
    intercept: float
    coefficients: np.ndarray
    n_iter: int = field(default=0, compare=False)

    def linear_predictor(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64).reshape(len(X), -1)
        return self.intercept + X @ self.coefficients

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _expit(self.linear_predictor(X))


def _expit(z):
    # Sign-split form avoids overflow in exp.
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def fit_ols(
    X: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray | None = None,
    names: tuple[str, ...] = (),
) -> LinearModel:
    """(Weighted) least squares of ``y`` on an intercept plus the columns of ``X``.

    A rank-deficient design is solved with the minimum-norm (pseudoinverse)
    solution and flagged, with a :class:`RankDeficiencyWarning`.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    n = y.shape[0]
    X = np.asarray(X, dtype=np.float64).reshape(n, -1)
    Z = np.column_stack([np.ones(n), X])
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64).ravel()
        if weights.shape[0] != n or (weights < 0).any() or weights.sum() <= 0:
            raise ValueError("weights must be nonnegative, one per row, with positive sum")
        sw = np.sqrt(weights)
        Z, y = Z * sw[:, None], y * sw
    beta, _, rank, _ = np.linalg.lstsq(Z, y, rcond=None)
    deficient = rank < Z.shape[1]
    if deficient:
        warnings.warn(
            f"design has rank {rank} < {Z.shape[1]} columns; using the pseudoinverse solution",
            RankDeficiencyWarning,
            stacklevel=2,
        )
    return LinearModel(float(beta[0]), beta[1:].copy(), tuple(names), bool(deficient))


def _design(X, n):
    return np.column_stack([np.ones(n), np.asarray(X, dtype=np.float64).reshape(n, -1)])


def logistic_loglik(X: np.ndarray, w: np.ndarray, params: np.ndarray) -> float:
    """Average log-likelihood at ``params = (intercept, *coefficients)``."""
    w = np.asarray(w, dtype=np.float64).ravel()
    eta = _design(X, w.size) @ params
    return float(np.mean(w * eta - np.logaddexp(0.0, eta)))


def logistic_gradient(X: np.ndarray, w: np.ndarray, params: np.ndarray) -> np.ndarray:
    """Gradient of :func:`logistic_loglik` with respect to ``params``."""
    w = np.asarray(w, dtype=np.float64).ravel()
    Z = _design(X, w.size)
    return Z.T @ (w - _expit(Z @ params)) / w.size


def fit_logistic(
    X: np.ndarray, w: np.ndarray, max_iter: int = 100, tol: float = 1e-8
) -> LogisticModel:
    """Logistic regression with intercept by Newton's method (IRLS).

    Convergence is declared when the max-norm of the gradient of the
    *average* log-likelihood is at most ``tol`` and the Newton step is at
    most ``sqrt(tol)``. Any coefficient exceeding
    ``SEPARATION_CAP`` in magnitude is reported as quasi-separation.
    """
    w = np.asarray(w, dtype=np.float64).ravel()
    n = w.shape[0]
    X = np.asarray(X, dtype=np.float64).reshape(n, -1)
    if not ((w == 0) | (w == 1)).all():
        raise ValueError("w must be binary")
    if w.min() == w.max():
        raise ValueError("both classes must be present")
    Z = _design(X, n)
    beta = np.zeros(Z.shape[1])
    beta[0] = np.log(w.mean() / (1 - w.mean()))

    def loglik(b):
        eta = Z @ b
        return np.mean(w * eta - np.logaddexp(0.0, eta))

    ll = loglik(beta)
    for it in range(1, max_iter + 1):
        prob = _expit(Z @ beta)
        grad = Z.T @ (w - prob) / n
        hess = (Z * (prob * (1 - prob))[:, None]).T @ Z / n
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        # Under separation the gradient vanishes while Newton steps stay
        # large, so a small step is required as well.
        if np.max(np.abs(grad)) <= tol and np.max(np.abs(step)) <= np.sqrt(tol):
            return LogisticModel(float(beta[0]), beta[1:].copy(), it - 1)
        # Step halving keeps each Newton step an ascent step.
        t = 1.0
        while True:
            cand = beta + t * step
            ll_cand = loglik(cand)
            if ll_cand >= ll - 1e-15 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        beta, ll = cand, ll_cand
        if np.max(np.abs(beta[1:]), initial=0.0) > SEPARATION_CAP:
            raise SeparationError(
                f"quasi-separation: |coefficient| exceeded {SEPARATION_CAP:g}", beta.copy(), it
            )
    raise LogisticFitError(
        f"logistic regression did not converge in {max_iter} iterations", beta.copy(), max_iter
    )
