"""Run configuration: defaults, JSON loading and validation."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .learners.boosting import GbtParams

FIT_METHODS = ("fpc-linear", "fpc-treeboost", "cgb-tree")
EFFECT_MODES = ("narrow", "wide", "combined")
METHOD_IDS = ("raw", "adjusted", "matched", "iptw", "boosting")


class ConfigError(ValueError):
    pass


def default_gbt_grid() -> tuple[GbtParams, ...]:
    return tuple(
        GbtParams(n_stages=m, shrinkage=0.1, max_depth=depth, min_leaf=10)
        for depth in (2, 3, 5)
        for m in (50, 200, 500)
    )


@dataclass(frozen=True)
class CgbParams:
    """Constrained boosting hyperparameters; ``lam`` is the per-leaf ridge weight."""

    n_stages: int = 200
    lam: float = 1.0
    max_depth: int = 2
    min_leaf: int = 10

    def __post_init__(self):
        if self.n_stages < 0 or self.max_depth < 0 or self.min_leaf < 1 or self.lam < 0:
            raise ValueError(f"invalid constrained boosting parameters {self}")


@dataclass(frozen=True)
class CvConfig:
    """Cross-validation grids shared by every learner that tunes itself.

    The ridge grid for constrained boosting is ``lam_factors * n / 100``.
    """

    n_folds: int = 5
    gbt_grid: tuple[GbtParams, ...] = field(default_factory=default_gbt_grid)
    cgb_stages: tuple[int, ...] = (50, 200, 500)
    cgb_lam_factors: tuple[float, ...] = (0.1, 1.0, 10.0)
    cgb_depths: tuple[int, ...] = (2, 3)
    cgb_min_leaf: int = 10
    tune_fpc_treeboost: bool = True

    def __post_init__(self):
        if self.n_folds < 2:
            raise ConfigError("n_folds must be >= 2")
        if not self.gbt_grid or not self.cgb_stages or not self.cgb_lam_factors or not self.cgb_depths:
            raise ConfigError("cross-validation grids must be non-empty")

    def cgb_grid(self, n: int) -> tuple[CgbParams, ...]:
        return tuple(
            CgbParams(m, factor * n / 100.0, depth, self.cgb_min_leaf)
            for depth in self.cgb_depths
            for factor in self.cgb_lam_factors
            for m in self.cgb_stages
        )

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["gbt_grid"] = [asdict(g) for g in self.gbt_grid]
        return out

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "CvConfig":
        _reject_unknown(cls, raw, "cv")
        kw = dict(raw)
        if "gbt_grid" in kw:
            kw["gbt_grid"] = tuple(GbtParams(**g) for g in kw["gbt_grid"])
        for key in ("cgb_stages", "cgb_lam_factors", "cgb_depths"):
            if key in kw:
                kw[key] = tuple(kw[key])
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"cv: {exc}") from None


@dataclass(frozen=True)
class RunConfig:
    fit_method: str = "cgb-tree"
    effect_mode: str = "narrow"
    gamma_narrow: float = 2.0
    gamma_wide: float = 5.0
    Q: int = 5
    K: int = 20
    seed: int = 0
    threads: int = 1
    methods: tuple[str, ...] = METHOD_IDS
    caliper_scale: str = "logit"
    cv: CvConfig = field(default_factory=CvConfig)

    def __post_init__(self):
        if self.fit_method not in FIT_METHODS:
            raise ConfigError(f"fit_method must be one of {FIT_METHODS}, got {self.fit_method!r}")
        if self.effect_mode not in EFFECT_MODES:
            raise ConfigError(f"effect_mode must be one of {EFFECT_MODES}, got {self.effect_mode!r}")
        if self.Q < 1 or self.K < 1:
            raise ConfigError("Q and K must be >= 1")
        if self.gamma_narrow <= 0 or self.gamma_wide <= 0:
            raise ConfigError("gammas must be > 0")
        if self.threads < 0:
            raise ConfigError("threads must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if not self.methods:
            raise ConfigError("at least one method is required")
        unknown = [m for m in self.methods if m not in METHOD_IDS]
        if unknown or len(set(self.methods)) != len(self.methods):
            raise ConfigError(f"methods must be distinct ids from {METHOD_IDS}, got {list(self.methods)}")
        if self.caliper_scale not in ("logit", "probability"):
            raise ConfigError("caliper_scale must be 'logit' or 'probability'")

    @property
    def gamma(self) -> float:
        return self.gamma_wide if self.effect_mode == "wide" else self.gamma_narrow

    def replace(self, **changes) -> "RunConfig":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(changes)
        return RunConfig(**data)

    def to_dict(self) -> dict[str, Any]:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["methods"] = list(self.methods)
        out["cv"] = self.cv.to_dict()
        return out

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        _reject_unknown(cls, raw, "config")
        kw = dict(raw)
        if "cv" in kw:
            kw["cv"] = CvConfig.from_dict(kw["cv"])
        if "methods" in kw:
            kw["methods"] = tuple(kw["methods"])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def _reject_unknown(cls, raw: dict, where: str) -> None:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")


def load_json(path: str | Path | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def load_run_config(path: str | Path | None = None, **overrides) -> RunConfig:
    """Defaults, then the JSON file (if any), then non-None ``overrides``."""
    raw = load_json(path)
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(raw)


def resolve_workers(threads: int | None) -> int:
    """0 means all cores; ``None`` falls back to $SYNTHVAL_THREADS, then 1."""
    if threads is None:
        threads = int(os.environ.get("SYNTHVAL_THREADS", "1"))
    if threads < 0:
        raise ConfigError("threads must be >= 0")
    return threads or (os.cpu_count() or 1)
