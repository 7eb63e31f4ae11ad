"""Observational datasets, CSV I/O and seeded resampling."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class DatasetError(ValueError):
    """Raised when data violates the observational dataset contract."""


@dataclass(frozen=True)
class RngSeed:
    """A root seed plus a path naming a derived, independent substream.

    Two seeds with the same ``(seed, stream_path)`` always produce the same
    random sequence, regardless of which process or thread draws from them.
    """

    seed: int
    stream_path: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        object.__setattr__(self, "stream_path", tuple(int(s) for s in self.stream_path))

    def child(self, *path: int) -> "RngSeed":
        return RngSeed(self.seed, self.stream_path + tuple(path))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.stream_path)
        return np.random.Generator(np.random.PCG64(ss))


def as_seed(rng: RngSeed | int | None) -> RngSeed:
    if rng is None:
        return RngSeed(0)
    if isinstance(rng, RngSeed):
        return rng
    return RngSeed(int(rng))


@dataclass(frozen=True, eq=False)
class ObservationalDataset:
    """n rows of (covariates, binary treatment, real outcome).

    Arrays are copied on construction and made read-only. Covariates are
    stored column-major since the tree learners scan columns.
    ``true_ate`` is optional metadata, set only for simulated data.
    """

    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    column_names: tuple[str, ...] = ()
    treatment_name: str = "w"
    outcome_name: str = "y"
    true_ate: float | None = field(default=None, compare=False)

    def __post_init__(self):
        x = np.asarray(self.covariates, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2:
            raise DatasetError("covariates must be a 2-d array")
        x = np.asfortranarray(x).copy(order="F")
        w_raw = np.asarray(self.treatment)
        y = np.array(self.outcome, dtype=np.float64).ravel()
        n = x.shape[0]
        if w_raw.ndim != 1 or w_raw.shape[0] != n or y.shape[0] != n:
            raise DatasetError(
                f"row counts differ: covariates {n}, treatment {w_raw.shape[0]}, outcome {y.shape[0]}"
            )
        if n < 2:
            raise DatasetError(f"need at least 2 rows, got {n}")
        w_float = w_raw.astype(np.float64)
        bad = np.flatnonzero((w_float != 0) & (w_float != 1))
        if bad.size:
            raise DatasetError(
                f"treatment value {w_raw[bad[0]].item()!r} at row {bad[0] + 1} is not 0 or 1"
            )
        w = w_float.astype(np.int64)
        for name, arr in (("covariates", x), ("outcome", y)):
            finite = np.isfinite(arr)
            if not finite.all():
                loc = np.argwhere(~finite)[0]
                where = f"row {loc[0] + 1}" + (f", column {loc[1] + 1}" if arr.ndim == 2 else "")
                raise DatasetError(f"non-finite {name} value at {where}")
        if not (w == 1).any():
            raise DatasetError("empty treated arm")
        if not (w == 0).any():
            raise DatasetError("empty untreated arm")
        names = tuple(self.column_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise DatasetError(f"{len(names)} column names for {x.shape[1]} covariates")
        for arr in (x, w, y):
            arr.setflags(write=False)
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "treatment", w)
        object.__setattr__(self, "outcome", y)
        object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_treated(self) -> int:
        return int(self.treatment.sum())

    def take(self, rows: Sequence[int] | np.ndarray) -> "ObservationalDataset":
        """Dataset restricted to ``rows`` (validated again, so both arms must remain)."""
        rows = np.asarray(rows, dtype=np.int64)
        return ObservationalDataset(
            self.covariates[rows],
            self.treatment[rows],
            self.outcome[rows],
            self.column_names,
            self.treatment_name,
            self.outcome_name,
            self.true_ate,
        )

    def same_data(self, other: "ObservationalDataset") -> bool:
        return (
            self.column_names == other.column_names
            and np.array_equal(self.covariates, other.covariates)
            and np.array_equal(self.treatment, other.treatment)
            and np.array_equal(self.outcome, other.outcome)
        )


def arm_indices(d: ObservationalDataset, w: int) -> np.ndarray:
    """Sorted row indices with treatment equal to ``w``."""
    if w not in (0, 1):
        raise ValueError(f"arm must be 0 or 1, got {w!r}")
    return np.flatnonzero(d.treatment == w)


def resample_indices(n: int, m: int, rng: RngSeed | np.random.Generator) -> np.ndarray:
    gen = rng if isinstance(rng, np.random.Generator) else as_seed(rng).generator()
    return gen.integers(0, n, size=m)


def resample_xw(
    d: ObservationalDataset, m: int, rng: RngSeed | int
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``m`` (x, w) pairs i.i.d. with replacement from the observed rows.

    Rows are copied whole, so covariates and treatment stay paired.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    idx = resample_indices(d.n, m, as_seed(rng))
    return d.covariates[idx].copy(), d.treatment[idx].copy()


def _parse_float(text: str, row: int, col: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DatasetError(f"non-numeric value {text!r} at row {row}, column {col!r}") from None
    if not math.isfinite(value):
        raise DatasetError(f"missing or non-finite value {text!r} at row {row}, column {col!r}")
    return value


def load_csv(
    path: str | Path, treatment_col: str = "w", outcome_col: str = "y"
) -> ObservationalDataset:
    """Read a header-row CSV; every other column becomes a covariate.

    Row numbers in error messages count data rows from 1 (the header is row 0).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        for col in (treatment_col, outcome_col):
            if col not in header:
                raise DatasetError(f"{path}: missing column {col!r}")
        if len(set(header)) != len(header):
            raise DatasetError(f"{path}: duplicate column names in header")
        w_pos = header.index(treatment_col)
        y_pos = header.index(outcome_col)
        x_pos = [j for j in range(len(header)) if j not in (w_pos, y_pos)]
        xs, ws, ys = [], [], []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DatasetError(
                    f"{path}: row {row_no} has {len(row)} fields, expected {len(header)}"
                )
            w = _parse_float(row[w_pos], row_no, treatment_col)
            if w not in (0.0, 1.0):
                raise DatasetError(
                    f"{path}: treatment value {row[w_pos]!r} at row {row_no} is not 0 or 1"
                )
            ws.append(int(w))
            ys.append(_parse_float(row[y_pos], row_no, outcome_col))
            xs.append([_parse_float(row[j], row_no, header[j]) for j in x_pos])
    n = len(ys)
    x = np.array(xs, dtype=np.float64).reshape(n, len(x_pos))
    try:
        return ObservationalDataset(
            x,
            np.array(ws, dtype=np.int64),
            np.array(ys),
            tuple(header[j] for j in x_pos),
            treatment_col,
            outcome_col,
        )
    except DatasetError as exc:
        raise DatasetError(f"{path}: {exc}") from None


def write_csv(d: ObservationalDataset, path: str | Path) -> None:
    """Write covariates, then treatment, then outcome; floats use shortest round-trip repr."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*d.column_names, d.treatment_name, d.outcome_name])
        for i in range(d.n):
            writer.writerow(
                [repr(float(v)) for v in d.covariates[i]]
                + [str(int(d.treatment[i])), repr(float(d.outcome[i]))]
            )
