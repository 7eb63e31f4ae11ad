"""Simulated data-generating processes with known average treatment effect.

Built-in scenarios 1-8 assign treatment at random; 9-16 reuse the same
outcome and effect functions of 1-8 but treat subjects with larger
individual effects more often. Scenario 17 is the one-confounder toy
(X ~ U(-pi, pi), P(W=1|x) = 1/(1+exp(-2x)), Y ~ N(sin x, 0.15)).

Outcomes follow y = mean(x) + (w - 1/2) * scale * effect(x) + noise, so the
individual effect is scale * effect(x). Every built-in effect function has
population mean exactly zero under its covariate law (odd functions of
symmetric covariates, or centred even ones), so the true ATE is 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .config import ConfigError, RunConfig
from .dataset import ObservationalDataset, RngSeed, as_seed

MAX_REDRAWS = 100
TOY_ID = 17
ASSIGN_FLOOR, ASSIGN_CEIL = 0.05, 0.95
_SQRT3 = math.sqrt(3.0)


# Mean functions of the covariate matrix (n x p, p >= 5).
def _linear(x):
    return x[:, 0] - 0.5 * x[:, 1] + 0.5 * x[:, 2] + 0.25 * x[:, 3]


def _quadratic(x):
    return x[:, 0] ** 2 + 0.5 * x[:, 1] ** 2 - x[:, 2]


def _piecewise(x):
    return 2.0 * (x[:, 0] > 0) - 1.5 * (x[:, 1] > 0.5) + 1.0 * (x[:, 2] < -0.5)


def _sinusoidal(x):
    return 2.0 * np.sin(1.5 * x[:, 0]) + np.cos(x[:, 1])


def _interaction(x):
    return x[:, 0] * x[:, 1] + x[:, 2] * x[:, 3] + 0.5 * x[:, 0]


def _sparse(x):
    return 3.0 * x[:, 0]


def _dense(x):
    return 2.0 * x.sum(axis=1) / math.sqrt(x.shape[1])


def _step(x):
    return 3.0 * (x[:, 0] > 0.0) + 1.0 * (x[:, 1] > 0.0)


MEAN_FUNCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "linear": _linear,
    "quadratic": _quadratic,
    "piecewise": _piecewise,
    "sinusoidal": _sinusoidal,
    "interaction": _interaction,
    "sparse": _sparse,
    "dense": _dense,
    "step": _step,
}

# Effect functions with their population SD under standard normal covariates
# (used to standardize the assignment score). All have mean exactly zero for
# independent covariates symmetric about 0 with unit variance.
EFFECT_FUNCTIONS: dict[str, tuple[Callable[[np.ndarray], np.ndarray], float]] = {
    "linear": (lambda x: x[:, 0], 1.0),
    "product": (lambda x: x[:, 0] * x[:, 1], 1.0),
    "centred-square": (lambda x: x[:, 0] ** 2 - 1.0, math.sqrt(2.0)),
    "sine": (lambda x: np.sin(x[:, 0]), math.sqrt((1 - math.exp(-2.0)) / 2)),
    "sign": (lambda x: np.sign(x[:, 1]), 1.0),
    "two-linear": (lambda x: (x[:, 0] + x[:, 2]) / math.sqrt(2.0), 1.0),
    "shifted-linear": (lambda x: x[:, 1], 1.0),
    "cubic": (lambda x: x[:, 0] ** 3 / math.sqrt(15.0), 1.0),
}


@dataclass(frozen=True)
class ScenarioSpec:
    id: int
    n: int = 500
    p: int = 10
    covariate_law: str = "normal"
    mean_fn: str = "linear"
    effect_fn: str = "linear"
    effect_scale: float = 1.0
    assignment: str = "randomized"
    prob: float = 0.5
    noise_sd: float = 1.0
    true_ate: float = 0.0

    def __post_init__(self):
        if self.id == TOY_ID:
            return
        if self.covariate_law not in ("normal", "uniform"):
            raise ConfigError(f"scenario {self.id}: unknown covariate_law {self.covariate_law!r}")
        if self.mean_fn not in MEAN_FUNCTIONS:
            raise ConfigError(f"scenario {self.id}: unknown mean_fn {self.mean_fn!r}")
        if self.effect_fn not in EFFECT_FUNCTIONS:
            raise ConfigError(f"scenario {self.id}: unknown effect_fn {self.effect_fn!r}")
        if self.assignment not in ("randomized", "biased"):
            raise ConfigError(f"scenario {self.id}: assignment must be randomized or biased")
        if not ASSIGN_FLOOR <= self.prob <= ASSIGN_CEIL:
            raise ConfigError(f"scenario {self.id}: prob must lie in [0.05, 0.95]")
        if self.p < 5 or self.n < 2 or self.noise_sd < 0:
            raise ConfigError(f"scenario {self.id}: need p >= 5, n >= 2, noise_sd >= 0")

    @property
    def is_toy(self) -> bool:
        return self.id == TOY_ID

    def with_n(self, n: int) -> "ScenarioSpec":
        data = asdict(self)
        data["n"] = int(n)
        return ScenarioSpec(**data)


_FAMILIES = (
    ("linear", "linear"),
    ("quadratic", "product"),
    ("piecewise", "sign"),
    ("sinusoidal", "sine"),
    ("interaction", "centred-square"),
    ("sparse", "two-linear"),
    ("dense", "cubic"),
    ("step", "shifted-linear"),
)


def builtin_scenarios(n: int = 500) -> dict[int, ScenarioSpec]:
    out = {}
    for i, (mean_fn, effect_fn) in enumerate(_FAMILIES):
        for offset, assignment in ((1, "randomized"), (9, "biased")):
            sid = i + offset
            out[sid] = ScenarioSpec(sid, n=n, mean_fn=mean_fn, effect_fn=effect_fn, assignment=assignment)
    out[TOY_ID] = ScenarioSpec(TOY_ID, n=n, p=1, covariate_law="uniform", mean_fn="toy",
                               effect_fn="none", assignment="biased", noise_sd=0.15)
    return out


def individual_effects(spec: ScenarioSpec, x: np.ndarray) -> np.ndarray:
    if spec.is_toy:
        return np.zeros(x.shape[0])
    fn, _ = EFFECT_FUNCTIONS[spec.effect_fn]
    return spec.effect_scale * fn(x)


def assignment_probability(spec: ScenarioSpec, x: np.ndarray) -> np.ndarray:
    """P(W=1 | x); for biased designs a logistic of the standardized effect in [0.05, 0.95]."""
    if spec.is_toy:
        return 1.0 / (1.0 + np.exp(-2.0 * x[:, 0]))
    if spec.assignment == "randomized":
        return np.full(x.shape[0], spec.prob)
    fn, sd = EFFECT_FUNCTIONS[spec.effect_fn]
    z = fn(x) / sd
    return ASSIGN_FLOOR + (ASSIGN_CEIL - ASSIGN_FLOOR) / (1.0 + np.exp(-z))


def _covariates(spec: ScenarioSpec, gen: np.random.Generator) -> np.ndarray:
    if spec.covariate_law == "normal":
        return gen.standard_normal((spec.n, spec.p))
    return gen.uniform(-_SQRT3, _SQRT3, size=(spec.n, spec.p))


def generate(spec: ScenarioSpec, rng: RngSeed | int) -> tuple[ObservationalDataset, float]:
    """One dataset of ``spec.n`` rows and the analytic population ATE."""
    if spec.is_toy:
        return didactic_toy(spec.n, rng)
    gen = as_seed(rng).generator()
    mean_fn = MEAN_FUNCTIONS[spec.mean_fn]
    for _ in range(MAX_REDRAWS):
        x = _covariates(spec, gen)
        w = (gen.random(spec.n) < assignment_probability(spec, x)).astype(np.int64)
        noise = gen.normal(0.0, spec.noise_sd, spec.n) if spec.noise_sd > 0 else np.zeros(spec.n)
        if 0 < w.sum() < spec.n:
            y = mean_fn(x) + (w - 0.5) * individual_effects(spec, x) + noise
            return ObservationalDataset(x, w, y, true_ate=spec.true_ate), spec.true_ate
    raise RuntimeError(f"scenario {spec.id}: an arm was empty in {MAX_REDRAWS} draws")


def didactic_toy(n: int, rng: RngSeed | int) -> tuple[ObservationalDataset, float]:
    """Single confounder; outcome independent of treatment, so the ATE is 0."""
    if n < 10:
        raise ValueError(f"toy dataset needs n >= 10, got {n}")
    gen = as_seed(rng).generator()
    for _ in range(MAX_REDRAWS):
        x = gen.uniform(-math.pi, math.pi, n)
        w = gen.binomial(1, 1.0 / (1.0 + np.exp(-2.0 * x)))
        y = gen.normal(np.sin(x), 0.15)
        if 0 < w.sum() < n:
            return ObservationalDataset(x[:, None], w, y, ("x",), true_ate=0.0), 0.0
    raise RuntimeError(f"toy: an arm was empty in {MAX_REDRAWS} draws")


def load_scenarios(path: str | Path) -> dict[int, ScenarioSpec]:
    """Read scenario specs from a JSON list of objects with ScenarioSpec fields."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(raw, dict):
        raw = raw.get("scenarios", [])
    known = {f.name for f in fields(ScenarioSpec)}
    out = {}
    for item in raw:
        unknown = set(item) - known
        if unknown:
            raise ConfigError(f"scenario entry has unknown keys {sorted(unknown)}")
        spec = ScenarioSpec(**item)
        out[spec.id] = spec
    return out


# --------------------------------------------------------------------------
# Evaluation harness

HARNESS_COLUMNS = (
    "scenario", "rep", "assignment", "row_type", "name", "chosen",
    "estimate", "true_ate", "error", "status",
)


@dataclass(frozen=True)
class Selector:
    """A synth-validation variant evaluated by the harness."""

    name: str
    config: RunConfig


def default_selectors(base: RunConfig | None = None) -> tuple[Selector, ...]:
    base = base or RunConfig()
    return (Selector(f"sv-{base.fit_method}-{base.effect_mode}", base),)


def cell_seed(seed: int, scenario: int, rep: int) -> int:
    """Independent 64-bit seed for one (scenario, repetition) cell."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(scenario), int(rep)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _cell(spec: ScenarioSpec, rep: int, seed: int, selectors: Sequence[Selector]) -> list[dict]:
    # Imported here to keep scenario generation free of the selection stack.
    from .methods import EffectEstimate, estimate_all, make_registry
    from .selection import oracle_select, run_synth_validation

    cseed = cell_seed(seed, spec.id, rep)
    label = "biased" if spec.assignment == "biased" else "randomized"
    d, truth = generate(spec, RngSeed(cseed))
    base = {"scenario": spec.id, "rep": rep, "assignment": label, "true_ate": truth}
    rows = []
    first = selectors[0].config if selectors else RunConfig()
    registry = make_registry(first.methods)
    try:
        real = estimate_all(d, registry, first.cv, RngSeed(cseed).child(0), first.caliper_scale)
    except Exception as exc:
        return [dict(base, row_type="error", name=m.id, chosen=m.id, estimate=None,
                     error=None, status=f"failed: {exc}") for m in registry]
    values = {}
    for e in real:
        if isinstance(e, EffectEstimate):
            values[e.method] = e.value
            rows.append(dict(base, row_type="error", name=e.method, chosen=e.method,
                             estimate=e.value, error=e.value - truth, status="ok"))
        else:
            rows.append(dict(base, row_type="error", name=e.method, chosen=e.method,
                             estimate=None, error=None, status=f"failed: {e.message}"))
    choices = []
    for sel in selectors:
        try:
            cfg = sel.config.replace(seed=cseed, threads=1)
            report = run_synth_validation(d, cfg, registry, workers=1, real_estimates=real)
            choices.append((sel.name, report.chosen, "ok"))
        except Exception as exc:
            choices.append((sel.name, None, f"failed: {exc}"))
    try:
        choices.append(("oracle", oracle_select(real, truth), "ok"))
    except ValueError as exc:
        choices.append(("oracle", None, f"failed: {exc}"))
    for name, chosen, status in choices:
        est = values.get(chosen)
        ok = status == "ok" and est is not None
        rows.append(dict(base, row_type="error", name=name, chosen=chosen,
                         estimate=est if ok else None, error=(est - truth) if ok else None,
                         status=status))
    for name, chosen, status in choices:
        rows.append(dict(base, row_type="choice", name=name, chosen=chosen,
                         estimate=None, error=None, status=status))
    return rows


def evaluate_harness(
    scenario_ids: Sequence[int],
    reps: int,
    n: int,
    selectors: Sequence[Selector] | None = None,
    seed: int = 0,
    workers: int = 1,
    scenarios: dict[int, ScenarioSpec] | None = None,
) -> list[dict]:
    """Long-format results for every (scenario, repetition) cell.

    Per cell: one error row per method (signed error estimate - truth), one
    error row per selector and for the oracle (the error of the method it
    chose), and one choice row per selector and the oracle. Failures are
    recorded in ``status`` and the run continues.
    """
    from .parallel import run_tasks

    if not scenario_ids:
        raise ValueError("no scenarios requested")
    if reps < 1 or n < 2:
        raise ValueError("need reps >= 1 and n >= 2")
    catalogue = dict(builtin_scenarios(n))
    if scenarios:
        catalogue.update({sid: s.with_n(n) for sid, s in scenarios.items()})
    missing = [s for s in scenario_ids if s not in catalogue]
    if missing:
        raise KeyError(f"unknown scenario ids {missing}")
    selectors = tuple(default_selectors() if selectors is None else selectors)
    tasks = [(catalogue[s], r, seed, selectors) for s in scenario_ids for r in range(reps)]
    rows = []
    for cell_rows in run_tasks(_cell, tasks, workers):
        rows.extend(cell_rows)
    return rows


def summarize(rows: Sequence[dict]) -> dict[str, Any]:
    """Mean |error| per method/selector (overall and by assignment) and
    per-scenario choice counts of each selector next to the oracle's."""
    errors = [r for r in rows if r["row_type"] == "error"]
    names = list(dict.fromkeys(r["name"] for r in errors))
    mean_abs: dict[str, dict[str, float | None]] = {}
    for name in names:
        mine = [r for r in errors if r["name"] == name]
        entry = {}
        for label, subset in (("all", mine),
                              ("biased", [r for r in mine if r["assignment"] == "biased"]),
                              ("randomized", [r for r in mine if r["assignment"] == "randomized"])):
            vals = [abs(r["error"]) for r in subset if r["error"] is not None]
            entry[label] = float(np.mean(vals)) if vals else None
        entry["failed"] = sum(r["error"] is None for r in mine)
        mean_abs[name] = entry
    counts: dict[str, dict[str, dict[str, int]]] = {}
    for r in rows:
        if r["row_type"] != "choice" or r["chosen"] is None:
            continue
        per = counts.setdefault(r["name"], {}).setdefault(str(r["scenario"]), {})
        per[r["chosen"]] = per.get(r["chosen"], 0) + 1
    total = len(errors)
    complete = sum(r["status"] == "ok" for r in errors)
    return {
        "mean_abs_error": mean_abs,
        "selection_counts": counts,
        "cells": len({(r["scenario"], r["rep"]) for r in rows}),
        "complete_fraction": complete / total if total else 0.0,
    }


@dataclass(frozen=True)
class BenchmarkConfig:
    """Settings for a harness run; selectors are RunConfig overrides by name."""

    scenarios: tuple[int, ...] = tuple(range(1, 17))
    reps: int = 3
    n: int = 500
    seed: int = 0
    threads: int = 1
    selectors: tuple[Selector, ...] = field(default_factory=default_selectors)
    custom_scenarios: dict[int, ScenarioSpec] = field(default_factory=dict)

    def __post_init__(self):
        if not self.scenarios:
            raise ConfigError("benchmark: at least one scenario is required")
        if self.reps < 1 or self.n < 10:
            raise ConfigError("benchmark: need reps >= 1 and n >= 10")
        if not self.selectors:
            raise ConfigError("benchmark: at least one selector is required")
        names = [s.name for s in self.selectors]
        if len(set(names)) != len(names) or "oracle" in names:
            raise ConfigError("benchmark: selector names must be unique and not 'oracle'")
        known = set(builtin_scenarios(self.n)) | set(self.custom_scenarios)
        unknown = [s for s in self.scenarios if s not in known]
        if unknown:
            raise ConfigError(f"benchmark: unknown scenario ids {unknown}")

    def replace(self, **changes) -> "BenchmarkConfig":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update({k: v for k, v in changes.items() if v is not None})
        return BenchmarkConfig(**data)

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenarios": list(self.scenarios),
            "reps": self.reps,
            "n": self.n,
            "seed": self.seed,
            "selectors": [{"name": s.name, "config": s.config.to_dict()} for s in self.selectors],
            "custom_scenarios": [asdict(s) for _, s in sorted(self.custom_scenarios.items())],
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "BenchmarkConfig":
        if not isinstance(raw, dict):
            raise ConfigError("benchmark config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"benchmark: unknown keys {unknown}")
        kw = dict(raw)
        if "scenarios" in kw:
            kw["scenarios"] = tuple(int(s) for s in kw["scenarios"])
        if "selectors" in kw:
            sels = []
            for item in kw["selectors"]:
                if not isinstance(item, dict) or set(item) - {"name", "config"} or "name" not in item:
                    raise ConfigError("benchmark: each selector needs 'name' and optional 'config'")
                sels.append(Selector(str(item["name"]), RunConfig.from_dict(item.get("config", {}))))
            kw["selectors"] = tuple(sels)
        if "custom_scenarios" in kw:
            specs = {}
            for item in kw["custom_scenarios"]:
                try:
                    spec = ScenarioSpec(**item)
                except TypeError as exc:
                    raise ConfigError(f"benchmark: bad scenario entry ({exc})") from None
                specs[spec.id] = spec
            kw["custom_scenarios"] = specs
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def run_benchmark(cfg: BenchmarkConfig, workers: int = 1) -> tuple[list[dict], dict[str, Any]]:
    rows = evaluate_harness(
        cfg.scenarios, cfg.reps, cfg.n, cfg.selectors, cfg.seed, workers, cfg.custom_scenarios
    )
    summary = summarize(rows)
    summary["config"] = cfg.to_dict()
    return rows, summary
