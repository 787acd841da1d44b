"""Time-ordered datasets of (x, y, weight) rows and their CSV representation."""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass

import numpy as np


class DataError(ValueError):
    """Raised for malformed or inconsistent datasets."""


@dataclass(frozen=True)
class Observation:
    x: np.ndarray
    y: float
    weight: float = 1.0
    t: int = 0


@dataclass(frozen=True, eq=False)
class Dataset:
    """Columnar dataset.

    Attributes
    ----------
    X : ndarray, shape (n, p)
    y : ndarray, shape (n,)
    w : ndarray, shape (n,)
        Positive observation weights.
    t : ndarray of int, shape (n,)
        Strictly increasing time index.
    """

    X: np.ndarray
    y: np.ndarray
    w: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        n = X.shape[0]
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        t = np.asarray(self.t, dtype=np.int64).reshape(-1)
        if not (y.shape[0] == w.shape[0] == t.shape[0] == n):
            raise DataError("X, y, w and t must have the same number of rows")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
            raise DataError("dataset contains NaN or Inf")
        if np.any(w <= 0):
            raise DataError("weights must be positive")
        if n > 1 and np.any(np.diff(t) <= 0):
            raise DataError("time index must be strictly increasing")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "t", t)

    @classmethod
    def from_arrays(cls, X, y, w=None, t=None, t0=0):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        n = X.shape[0]
        w = np.ones(n) if w is None else w
        t = np.arange(t0, t0 + n) if t is None else t
        return cls(X, y, w, t)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return self.n

    def __getitem__(self, idx) -> "Dataset":
        if isinstance(idx, (int, np.integer)):
            idx = slice(idx, idx + 1)
        return Dataset(self.X[idx], self.y[idx], self.w[idx], self.t[idx])

    def observation(self, i: int) -> Observation:
        return Observation(self.X[i].copy(), float(self.y[i]), float(self.w[i]), int(self.t[i]))

    def since(self, t_start: int) -> "Dataset":
        """Rows with time index >= ``t_start``."""
        return self[self.t >= t_start]

    @staticmethod
    def concat(parts) -> "Dataset":
        parts = list(parts)
        return Dataset(
            np.vstack([d.X for d in parts]),
            np.concatenate([d.y for d in parts]),
            np.concatenate([d.w for d in parts]),
            np.concatenate([d.t for d in parts]),
        )


_XCOL = re.compile(r"^x([1-9][0-9]*)$")


def read_csv(path) -> Dataset:
    """Read a dataset CSV with columns ``t`` (optional), ``y``, ``weight`` (optional), ``x1..xp``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, expected a header row") from None
        rows = [r for r in reader if r]

    seen = set()
    xidx = {}
    for col in header:
        if col in seen:
            raise DataError(f"{path}: duplicate column {col!r}")
        seen.add(col)
        m = _XCOL.match(col)
        if m:
            xidx[int(m.group(1))] = col
        elif col not in ("t", "y", "weight"):
            raise DataError(f"{path}: unexpected column {col!r}")
    if "y" not in seen:
        raise DataError(f"{path}: missing required column 'y'")
    if not xidx:
        raise DataError(f"{path}: no covariate columns (expected x1..xp)")
    p = max(xidx)
    for j in range(1, p + 1):
        if j not in xidx:
            raise DataError(f"{path}: missing covariate column 'x{j}'")

    pos = {c: i for i, c in enumerate(header)}
    n = len(rows)
    try:
        table = np.array([[float(v) for v in r] for r in rows], dtype=np.float64).reshape(n, len(header))
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric or ragged row ({exc})") from None
    X = table[:, [pos[f"x{j}"] for j in range(1, p + 1)]]
    y = table[:, pos["y"]]
    w = table[:, pos["weight"]] if "weight" in pos else None
    if "t" in pos:
        tcol = table[:, pos["t"]]
        if np.any(tcol != np.round(tcol)):
            raise DataError(f"{path}: column 't' must hold integers")
        t = tcol.astype(np.int64)
    else:
        t = None
    return Dataset.from_arrays(X, y, w, t)


def write_csv(path, data: Dataset) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t", "y", "weight"] + [f"x{j + 1}" for j in range(data.p)])
        for i in range(data.n):
            wr.writerow([int(data.t[i]), repr(float(data.y[i])), repr(float(data.w[i]))]
                        + [repr(float(v)) for v in data.X[i]])
