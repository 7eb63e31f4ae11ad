"""Generative distributions with a known average treatment effect.

A generative distribution pairs a constrained outcome model with the
observed (x, w) rows and the model's residuals. Sampling resamples rows and
residuals independently and rebuilds outcomes from the arm-specific mean,
so the population effect equals the encoded effect exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .constrained import ConstrainedOutcomeModel
from .dataset import ObservationalDataset, RngSeed, as_seed

MAX_REDRAWS = 100
FALLBACK_SD_FRACTION = 0.25
FALLBACK_FLOOR = 1e-6


class DegenerateBootstrapError(RuntimeError):
    pass


@dataclass(frozen=True)
class SyntheticEffectGrid:
    effects: tuple[float, ...]
    gamma: float
    mode: str
    source_estimates: tuple[float, ...]

    @property
    def Q(self) -> int:
        return len(self.effects)


def fallback_half_width(outcome: np.ndarray) -> float:
    """Half-width used when every estimate agrees: a quarter of SD(y)."""
    sd = float(np.std(outcome, ddof=1)) if len(outcome) > 1 else 0.0
    return max(FALLBACK_SD_FRACTION * sd, FALLBACK_FLOOR)


def choose_effects(
    estimates: Sequence[float],
    gamma: float,
    Q: int,
    fallback: float = FALLBACK_FLOOR,
    mode: str = "narrow",
) -> SyntheticEffectGrid:
    """Q evenly spaced effects on median(estimates) +/- gamma * range(estimates).

    ``fallback`` is the half-width used when the range is zero.
    """
    est = np.asarray(list(estimates), dtype=np.float64)
    if est.size == 0:
        raise ValueError("no estimates to build an effect grid from")
    if not np.isfinite(est).all():
        raise ValueError("estimates must be finite")
    if Q < 1 or gamma <= 0:
        raise ValueError("need Q >= 1 and gamma > 0")
    center = float(np.median(est))
    spread = float(est.max() - est.min())
    half = gamma * spread if spread > 0 else max(float(fallback), FALLBACK_FLOOR)
    if Q == 1:
        effects = (center,)
    else:
        effects = tuple(float(v) for v in np.linspace(center - half, center + half, Q))
        # Pin the midpoint for odd Q so the median is in the grid exactly.
        if Q % 2 == 1:
            effects = effects[: Q // 2] + (center,) + effects[Q // 2 + 1 :]
    return SyntheticEffectGrid(effects, float(gamma), mode, tuple(float(v) for v in est))


def combined_grid(narrow: SyntheticEffectGrid, wide: SyntheticEffectGrid) -> SyntheticEffectGrid:
    """Sorted union of two grids; values equal to 1e-12 relative are merged."""
    if narrow.source_estimates != wide.source_estimates:
        raise ValueError("grids were built from different estimates")
    merged: list[float] = []
    for v in sorted(narrow.effects + wide.effects):
        if merged and np.isclose(v, merged[-1], rtol=1e-12, atol=1e-12):
            continue
        merged.append(v)
    return SyntheticEffectGrid(tuple(merged), wide.gamma, "combined", narrow.source_estimates)


@dataclass(frozen=True, eq=False)
class GenerativeDistribution:
    """Semi-parametric bootstrap distribution around a constrained model.

    ``mu0``/``mu1`` cache the model's predictions at the pool rows, which is
    all sampling needs since synthetic covariates are always pool rows.
    """

    model: ConstrainedOutcomeModel | None
    covariates: np.ndarray
    treatment: np.ndarray
    residual_pool: np.ndarray
    mu0: np.ndarray
    mu1: np.ndarray
    encoded_effect: float
    column_names: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.treatment.shape[0]

    @property
    def true_effect(self) -> float:
        """Population ATE under this distribution: mean of mu1 - mu0 over the pool."""
        return float(np.mean(self.mu1 - self.mu0))


def build_generative(d: ObservationalDataset, model: ConstrainedOutcomeModel) -> GenerativeDistribution:
    X = d.covariates
    mu0 = np.asarray(model.mu0.predict(X), dtype=np.float64)
    mu1 = np.asarray(model.mu1.predict(X), dtype=np.float64)
    fitted = np.where(d.treatment == 1, mu1, mu0)
    return GenerativeDistribution(
        model, X, d.treatment, d.outcome - fitted, mu0, mu1,
        float(model.encoded_effect), d.column_names,
    )


def sample_dataset(g: GenerativeDistribution, rng: RngSeed | int) -> ObservationalDataset:
    """Draw n rows: (x, w) and residuals resampled independently.

    y = mu_w(x) + r. Draws leaving an arm empty are repeated, up to
    ``MAX_REDRAWS`` times.
    """
    gen = as_seed(rng).generator()
    n = g.n
    for _ in range(MAX_REDRAWS):
        rows = gen.integers(0, n, size=n)
        resid = g.residual_pool[gen.integers(0, n, size=n)]
        w = g.treatment[rows]
        if 0 < w.sum() < n:
            y = np.where(w == 1, g.mu1[rows], g.mu0[rows]) + resid
            return ObservationalDataset(
                g.covariates[rows], w, y, g.column_names or (), true_ate=g.encoded_effect
            )
    raise DegenerateBootstrapError(
        f"degenerate bootstrap: an arm was empty in {MAX_REDRAWS} consecutive draws"
    )
