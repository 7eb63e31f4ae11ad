"""Benchmark estimators on synthetic data and pick the one with least error."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .config import CvConfig, RunConfig, resolve_workers
from .constrained import fit_constrained, fit_fpc_bases
from .dataset import ObservationalDataset, RngSeed, as_seed
from .methods import (
    AllMethodsFailed,
    CausalMethod,
    EffectEstimate,
    MethodFailure,
    estimate_all,
    make_registry,
    run_method,
)
from .parallel import run_tasks
from .synthgen import (
    SyntheticEffectGrid,
    build_generative,
    choose_effects,
    combined_grid,
    fallback_half_width,
    sample_dataset,
)


class SelectionError(RuntimeError):
    """A synth-validation stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True, eq=False)
class MethodErrorTable:
    """Absolute errors indexed (method, effect, replicate); failures are masked."""

    errors: np.ndarray
    estimates: np.ndarray
    method_ids: tuple[str, ...]
    effect_values: tuple[float, ...]
    failure_mask: np.ndarray

    @property
    def K(self) -> int:
        return self.errors.shape[2]

    @classmethod
    def from_estimates(
        cls, estimates: np.ndarray, method_ids: Sequence[str], effects: Sequence[float]
    ) -> "MethodErrorTable":
        estimates = np.asarray(estimates, dtype=np.float64)
        mask = ~np.isfinite(estimates)
        errors = np.abs(np.asarray(effects, dtype=np.float64)[None, :, None] - estimates)
        errors[mask] = np.nan
        return cls(errors, estimates, tuple(method_ids), tuple(float(e) for e in effects), mask)


@dataclass
class SelectionReport:
    chosen: str
    method_ids: tuple[str, ...]
    mean_errors: dict[str, float | None]
    eligible: dict[str, bool]
    table: MethodErrorTable | None = None
    real_estimates: dict[str, float | None] = field(default_factory=dict)
    real_failures: dict[str, str] = field(default_factory=dict)
    effects: tuple[float, ...] = ()
    config: dict[str, Any] = field(default_factory=dict)

    @property
    def chosen_estimate(self) -> float | None:
        return self.real_estimates.get(self.chosen)

    def to_dict(self, include_errors: bool = False) -> dict[str, Any]:
        out = {
            "chosen": self.chosen,
            "chosen_estimate": self.chosen_estimate,
            "methods": list(self.method_ids),
            "mean_abs_errors": {k: _clean(v) for k, v in self.mean_errors.items()},
            "eligible": dict(self.eligible),
            "real_estimates": {k: _clean(v) for k, v in self.real_estimates.items()},
            "real_failures": dict(self.real_failures),
            "synthetic_effects": [float(e) for e in self.effects],
            "config": self.config,
        }
        if include_errors and self.table is not None:
            out["errors"] = _nested(self.table.errors)
        return out

    def to_json(self, include_errors: bool = False) -> str:
        return json.dumps(self.to_dict(include_errors), indent=2, sort_keys=True) + "\n"


def _clean(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def _nested(arr: np.ndarray):
    return [[[_clean(v) for v in row] for row in plane] for plane in arr]


# --------------------------------------------------------------------------
# Benchmark


def _fit_task(d, effect, fit_method, cv, rng, bases):
    try:
        model = fit_constrained(d, effect, fit_method, cv, rng, bases)
        return build_generative(d, model), None
    except Exception as exc:  # any fit failure masks this effect's slice
        return None, f"{type(exc).__name__}: {exc}"


def _replicate_task(g, registry, cv, rng, caliper_scale):
    try:
        synth = sample_dataset(g, rng.child(0))
    except Exception:
        return [math.nan] * len(registry)
    out = []
    for i, method in enumerate(registry):
        res = run_method(method, synth, cv, rng.child(1, i), caliper_scale)
        out.append(res.value if isinstance(res, EffectEstimate) else math.nan)
    return out


def benchmark(
    d: ObservationalDataset,
    registry: Sequence[CausalMethod],
    grid: SyntheticEffectGrid | Sequence[float],
    fit_method: str,
    K: int,
    rng: RngSeed | int,
    cv: CvConfig | None = None,
    caliper_scale: str = "logit",
    workers: int = 1,
    return_models: bool = False,
):
    """Errors of every method on K bootstrap datasets per synthetic effect.

    One constrained model and generative distribution is fit per effect
    (substream (1, q)); replicate k of effect q samples and estimates on
    substream (2, q, k).
    """
    effects = tuple(grid.effects if isinstance(grid, SyntheticEffectGrid) else grid)
    registry = tuple(registry)
    if not effects or K < 1 or not registry:
        raise ValueError("need a non-empty grid, K >= 1 and a non-empty registry")
    cv = cv or CvConfig()
    rng = as_seed(rng)
    bases = None
    if fit_method in ("fpc-linear", "fpc-treeboost"):
        bases = fit_fpc_bases(d, fit_method.split("-")[1], cv, rng.child(0))
    fits = run_tasks(
        _fit_task,
        [(d, eff, fit_method, cv, rng.child(1, q), bases) for q, eff in enumerate(effects)],
        workers,
    )
    if all(g is None for g, _ in fits):
        raise SelectionError("fit", "constrained fit failed for every effect: " + fits[0][1])
    tasks, index = [], []
    for q, (g, _) in enumerate(fits):
        if g is None:
            continue
        for k in range(K):
            tasks.append((g, registry, cv, rng.child(2, q, k), caliper_scale))
            index.append((q, k))
    results = run_tasks(_replicate_task, tasks, workers)
    est = np.full((len(registry), len(effects), K), np.nan)
    for (q, k), values in zip(index, results):
        est[:, q, k] = values
    table = MethodErrorTable.from_estimates(est, [m.id for m in registry], effects)
    if table.failure_mask.all():
        raise SelectionError("benchmark", "every synthetic estimate failed")
    if return_models:
        return table, [g for g, _ in fits]
    return table


# --------------------------------------------------------------------------
# Selection


def select_method(tbl: MethodErrorTable) -> SelectionReport:
    """Method with the least mean error over all (effect, replicate) cells.

    A method that failed on any synthetic dataset is ineligible. Ties go to
    the earliest method in registry order.
    """
    ids = tbl.method_ids
    eligible = {m: not tbl.failure_mask[i].any() for i, m in enumerate(ids)}
    means: dict[str, float | None] = {}
    for i, m in enumerate(ids):
        ok = ~tbl.failure_mask[i]
        means[m] = float(tbl.errors[i][ok].mean()) if ok.any() else None
    best = None
    for m in ids:
        if eligible[m] and (best is None or means[m] < means[best]):
            best = m
    if best is None:
        raise SelectionError("select", "no method succeeded on every synthetic dataset")
    return SelectionReport(best, ids, means, eligible, tbl, effects=tbl.effect_values)


def oracle_select(
    estimates: Sequence[EffectEstimate | MethodFailure], true_effect: float
) -> str:
    """Method whose estimate is closest to the known truth; ties by order."""
    best, best_err = None, math.inf
    for e in estimates:
        if isinstance(e, MethodFailure):
            continue
        err = abs(e.value - true_effect)
        if err < best_err:
            best, best_err = e.method, err
    if best is None:
        raise ValueError("no estimates to choose from")
    return best


def effect_grid(estimates: Sequence[float], outcome: np.ndarray, config: RunConfig) -> SyntheticEffectGrid:
    fallback = fallback_half_width(outcome)
    narrow = choose_effects(estimates, config.gamma_narrow, config.Q, fallback, "narrow")
    if config.effect_mode == "narrow":
        return narrow
    wide = choose_effects(estimates, config.gamma_wide, config.Q, fallback, "wide")
    return wide if config.effect_mode == "wide" else combined_grid(narrow, wide)


def run_synth_validation(
    d: ObservationalDataset,
    config: RunConfig | None = None,
    registry: Sequence[CausalMethod] | None = None,
    workers: int | None = None,
    real_estimates: Sequence[EffectEstimate | MethodFailure] | None = None,
) -> SelectionReport:
    """Estimate on the real data, build the effect grid, benchmark, select.

    ``real_estimates`` may be passed to reuse estimates already computed on
    ``d`` with substream 0 of ``config.seed``.
    """
    config = config or RunConfig()
    registry = make_registry(config.methods) if registry is None else tuple(registry)
    workers = resolve_workers(config.threads if workers is None else workers)
    rng = RngSeed(config.seed)
    if real_estimates is None:
        try:
            real_estimates = estimate_all(d, registry, config.cv, rng.child(0), config.caliper_scale)
        except AllMethodsFailed as exc:
            raise SelectionError("estimate", str(exc)) from None
    finite = [e.value for e in real_estimates if isinstance(e, EffectEstimate)]
    if not finite:
        raise SelectionError("estimate", "every method failed on the observed data")
    try:
        grid = effect_grid(finite, d.outcome, config)
    except ValueError as exc:
        raise SelectionError("effects", str(exc)) from None
    try:
        table = benchmark(
            d, registry, grid, config.fit_method, config.K, rng.child(1),
            config.cv, config.caliper_scale, workers,
        )
    except SelectionError:
        raise
    except Exception as exc:
        raise SelectionError("benchmark", f"{type(exc).__name__}: {exc}") from exc
    report = select_method(table)
    report.real_estimates = {
        e.method: (e.value if isinstance(e, EffectEstimate) else None) for e in real_estimates
    }
    report.real_failures = {
        e.method: e.message for e in real_estimates if isinstance(e, MethodFailure)
    }
    report.effects = grid.effects
    echo = config.to_dict()
    echo.pop("threads")
    echo["effect_grid_mode"] = grid.mode
    echo["Q_actual"] = grid.Q
    report.config = echo
    return report
