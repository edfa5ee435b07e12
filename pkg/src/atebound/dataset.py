"""Observed datasets: (noisy covariates, outcome, binary treatment) rows plus CSV I/O.

The CSV schema is ``z,y,x1,...,xd`` with ``z`` in {0,1}, LF line endings,
UTF-8. Floats are written with shortest round-trip ``repr`` so that
write -> read -> write is byte-identical.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DatasetParseError(ValueError):
    """Raised when a dataset CSV violates the schema."""


@dataclass(frozen=True)
class ObservedDataset:
    """n rows of (covariate vector, outcome, treatment in {0,1}).

    The covariate slot holds whatever the estimator conditions on: confounders
    for backdoor/IPW, mediators for frontdoor. Arrays are not copied; treat
    them as immutable after construction.
    """

    covariates: np.ndarray
    outcome: np.ndarray
    treatment: np.ndarray

    def __post_init__(self) -> None:
        x = np.asarray(self.covariates, dtype=float)
        y = np.asarray(self.outcome, dtype=float)
        z = np.asarray(self.treatment)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise ValueError(f"covariates must be 2-d, got shape {x.shape}")
        n = x.shape[0]
        if y.shape != (n,) or z.shape != (n,):
            raise ValueError(
                f"row mismatch: covariates {x.shape}, outcome {y.shape}, treatment {z.shape}"
            )
        if not np.all(np.isin(z, (0, 1))):
            raise ValueError("treatment must be binary 0/1")
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "outcome", y)
        object.__setattr__(self, "treatment", z.astype(np.int64))

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def dim(self) -> int:
        return self.covariates.shape[1]

    def arm_rows(self, z: int) -> np.ndarray:
        """Indices of rows with treatment == z, in dataset order."""
        return np.flatnonzero(self.treatment == z)

    def n_arm(self, z: int) -> int:
        return int(np.sum(self.treatment == z))

    def with_covariates(self, covariates: np.ndarray) -> "ObservedDataset":
        """Copy with the covariate block replaced; outcome/treatment shared."""
        return ObservedDataset(covariates, self.outcome, self.treatment)

    def standardized(self) -> "ObservedDataset":
        """Covariates centered and scaled to unit variance (per column).

        Columns with zero variance are centered only.
        """
        x = self.covariates
        mu = x.mean(axis=0)
        sd = x.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        return self.with_covariates((x - mu) / sd)


def _fmt(value: float) -> str:
    return repr(float(value))


def write_dataset_csv(data: ObservedDataset, path: str | Path) -> None:
    """Write a dataset using the ``z,y,x1,...,xd`` schema."""
    buf = io.StringIO()
    header = ["z", "y"] + [f"x{j + 1}" for j in range(data.dim)]
    buf.write(",".join(header) + "\n")
    for i in range(data.n):
        row = [str(int(data.treatment[i])), _fmt(data.outcome[i])]
        row.extend(_fmt(v) for v in data.covariates[i])
        buf.write(",".join(row) + "\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="\n")


def read_dataset_csv(path: str | Path) -> ObservedDataset:
    """Parse a dataset CSV, raising DatasetParseError with row/column context."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.split("\n") if ln != ""]
    if not lines:
        raise DatasetParseError(f"{path}: empty file")
    header = lines[0].split(",")
    if len(header) < 3 or header[0] != "z" or header[1] != "y":
        missing = [c for c in ("z", "y") if c not in header[:2]]
        raise DatasetParseError(
            f"{path}: column {missing[0] if missing else header[0]} not found "
            f"(expected header z,y,x1,...)"
        )
    dim = len(header) - 2
    expected_x = [f"x{j + 1}" for j in range(dim)]
    if header[2:] != expected_x:
        raise DatasetParseError(f"{path}: covariate columns must be x1..x{dim}, got {header[2:]}")
    z = np.empty(len(lines) - 1, dtype=np.int64)
    y = np.empty(len(lines) - 1)
    x = np.empty((len(lines) - 1, dim))
    for i, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != dim + 2:
            raise DatasetParseError(f"{path}: row {i} has {len(parts)} fields, expected {dim + 2}")
        try:
            zi = int(parts[0])
            y[i - 2] = float(parts[1])
            x[i - 2] = [float(v) for v in parts[2:]]
        except ValueError as exc:
            raise DatasetParseError(f"{path}: row {i}: {exc}") from exc
        if zi not in (0, 1):
            raise DatasetParseError(f"{path}: row {i}: column z must be 0 or 1, got {zi}")
        z[i - 2] = zi
    return ObservedDataset(x, y, z)
