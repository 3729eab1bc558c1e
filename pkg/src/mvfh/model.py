"""Area-level dataset model, validation, and JSON/CSV ingestion.

A dataset holds m areas, each with a k-vector of direct survey estimates y_i,
a k x s covariate matrix X_i, and a known k x k sampling covariance D_i.
Datasets are immutable after validation and safe to share across threads.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidInput,
    NonPDSamplingCovariance,
    ParseError,
    RankDeficientDesign,
)
from .numkernel import symmetrize

__all__ = [
    "AreaData",
    "Dataset",
    "ModelParams",
    "validate",
    "load_dataset",
    "save_dataset",
]

# Relative singular-value cutoff for the full-column-rank check.
RANK_TOL = 1e-10


@dataclass(frozen=True)
class AreaData:
    """One area's direct estimate vector, covariates, and sampling covariance."""

    y: np.ndarray  # (k,)
    X: np.ndarray  # (k, s)
    D: np.ndarray  # (k, k), stored symmetric

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.y, dtype=np.float64))
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        D = np.asarray(self.D, dtype=np.float64)
        if D.ndim == 0:
            D = D.reshape(1, 1)
        k = y.shape[0]
        if y.ndim != 1 or X.ndim != 2 or X.shape[0] != k:
            raise DimensionMismatch(f"X must be k x s with k={k}, got shape {X.shape}")
        if D.shape != (k, k):
            raise DimensionMismatch(f"D must be {k} x {k}, got shape {D.shape}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X)) and np.all(np.isfinite(D))):
            raise InvalidInput("area data has non-finite entries")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "D", 0.5 * (D + D.T))

    @property
    def k(self) -> int:
        return self.y.shape[0]

    @property
    def s(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True, eq=False)
class Dataset:
    """m areas stacked as arrays: y (m, k), X (m, k, s), D (m, k, k)."""

    y: np.ndarray
    X: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        X = np.asarray(self.X, dtype=np.float64)
        D = np.asarray(self.D, dtype=np.float64)
        if y.ndim != 2:
            raise DimensionMismatch(f"y must be (m, k), got shape {y.shape}")
        m, k = y.shape
        if X.ndim != 3 or X.shape[:2] != (m, k):
            raise DimensionMismatch(f"X must be (m, k, s) = ({m}, {k}, s), got {X.shape}")
        if D.shape != (m, k, k):
            raise DimensionMismatch(f"D must be ({m}, {k}, {k}), got {D.shape}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "D", 0.5 * (D + np.swapaxes(D, 1, 2)))

    @property
    def m(self) -> int:
        return self.y.shape[0]

    @property
    def k(self) -> int:
        return self.y.shape[1]

    @property
    def s(self) -> int:
        return self.X.shape[2]

    def area(self, i: int) -> AreaData:
        return AreaData(self.y[i], self.X[i], self.D[i])

    @property
    def areas(self) -> list[AreaData]:
        return [self.area(i) for i in range(self.m)]

    @classmethod
    def from_areas(cls, areas) -> "Dataset":
        areas = list(areas)
        if not areas:
            raise DimensionMismatch("dataset needs at least one area")
        k, s = areas[0].k, areas[0].s
        for i, a in enumerate(areas):
            if a.k != k or a.s != s:
                raise DimensionMismatch(
                    f"area {i} has (k, s)=({a.k}, {a.s}), expected ({k}, {s})"
                )
        return cls(
            np.stack([a.y for a in areas]),
            np.stack([a.X for a in areas]),
            np.stack([a.D for a in areas]),
        )


@dataclass(frozen=True)
class ModelParams:
    """Regression coefficients beta (s,) and random-effect covariance psi (k, k PSD)."""

    beta: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))
        psi = symmetrize(self.psi)
        if np.linalg.eigvalsh(psi).min() < -1e-10:
            raise InvalidInput("psi must be positive semi-definite")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "psi", psi)


def validate(dataset: Dataset) -> Dataset:
    """Check all dataset invariants, returning the dataset unchanged on success.

    Raises DimensionMismatch (m < 2, s >= km, non-finite entries),
    NonPDSamplingCovariance (some D_i fails Cholesky), or RankDeficientDesign
    (stacked X has rank < s at relative tolerance 1e-10).
    """
    m, k, s = dataset.m, dataset.k, dataset.s
    if m < 2:
        raise DimensionMismatch(f"need at least 2 areas, got m={m}")
    if s >= m * k:
        raise DimensionMismatch(f"s={s} must be smaller than km={m * k}")
    for arr, name in ((dataset.y, "y"), (dataset.X, "X"), (dataset.D, "D")):
        if not np.all(np.isfinite(arr)):
            raise DimensionMismatch(f"{name} has non-finite entries")
    try:
        np.linalg.cholesky(dataset.D)
    except np.linalg.LinAlgError:
        for i in range(m):
            try:
                np.linalg.cholesky(dataset.D[i])
            except np.linalg.LinAlgError:
                raise NonPDSamplingCovariance(
                    f"sampling covariance of area {i} is not positive definite"
                ) from None
    sv = np.linalg.svd(dataset.X.reshape(m * k, s), compute_uv=False)
    if sv.size == 0 or np.sum(sv > RANK_TOL * sv[0]) < s:
        raise RankDeficientDesign(
            f"stacked covariate matrix has rank {int(np.sum(sv > RANK_TOL * sv[0]))} < s={s}"
        )
    return dataset


# ---------------------------------------------------------------------------
# File ingestion
# ---------------------------------------------------------------------------

CSV_FILES = ("y.csv", "X.csv", "D.csv")


def _infer_format(path: str, fmt: str | None) -> str:
    if fmt is not None:
        fmt = fmt.lower()
        if fmt not in ("json", "csv"):
            raise InvalidInput(f"unknown dataset format {fmt!r}")
        return fmt
    return "json" if str(path).endswith(".json") else "csv"


def load_dataset(path, format: str | None = None) -> Dataset:
    """Load and validate a dataset from a JSON file or a CSV directory.

    JSON schema: {"k": int, "s": int, "areas": [{"y": [...], "X": [[...]],
    "D": [[...]]}]}. The CSV form is a directory holding y.csv (area,row,value),
    X.csv and D.csv (area,row,col,value), areas indexed from 0.
    """
    path = str(path)
    fmt = _infer_format(path, format)
    dataset = _load_json(path) if fmt == "json" else _load_csv(path)
    return validate(dataset)


def save_dataset(dataset: Dataset, path, format: str | None = None) -> None:
    """Write a dataset as JSON or as the y/X/D CSV triple (floats round-trip exactly)."""
    path = str(path)
    fmt = _infer_format(path, format)
    if fmt == "json":
        _save_json(dataset, path)
    else:
        _save_csv(dataset, path)


def _load_json(path: str) -> Dataset:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict) or "areas" not in doc:
        raise ParseError(f"{path}: top-level object must contain an 'areas' list")
    k, s = doc.get("k"), doc.get("s")
    areas = []
    for i, rec in enumerate(doc["areas"]):
        try:
            area = AreaData(rec["y"], rec["X"], rec["D"])
        except KeyError as exc:
            raise ParseError(f"{path}: area {i}: missing field {exc.args[0]!r}") from None
        except (DimensionMismatch, InvalidInput, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: area {i}: {exc}") from None
        if k is not None and area.k != int(k):
            raise ParseError(f"{path}: area {i}: k={area.k} does not match declared k={k}")
        if s is not None and area.s != int(s):
            raise ParseError(f"{path}: area {i}: s={area.s} does not match declared s={s}")
        areas.append(area)
    if not areas:
        raise ParseError(f"{path}: 'areas' list is empty")
    return Dataset.from_areas(areas)


def _save_json(dataset: Dataset, path: str) -> None:
    doc = {
        "k": dataset.k,
        "s": dataset.s,
        "areas": [
            {
                "y": [float(v) for v in dataset.y[i]],
                "X": [[float(v) for v in row] for row in dataset.X[i]],
                "D": [[float(v) for v in row] for row in dataset.D[i]],
            }
            for i in range(dataset.m)
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _read_csv_rows(path: str, ncols: int):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise ParseError(f"{path}: empty file")
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != ncols:
                    raise ParseError(f"{path}: line {lineno}: expected {ncols} columns")
                try:
                    yield [int(c) for c in row[:-1]] + [float(row[-1])]
                except ValueError as exc:
                    raise ParseError(f"{path}: line {lineno}: {exc}") from None
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc


def _load_csv(dirpath: str) -> Dataset:
    paths = {name: os.path.join(dirpath, name) for name in CSV_FILES}
    for name, p in paths.items():
        if not os.path.exists(p):
            raise ParseError(f"{dirpath}: missing {name}")

    y_cells: dict[int, dict[int, float]] = {}
    for area, row, value in _read_csv_rows(paths["y.csv"], 3):
        y_cells.setdefault(area, {})[row] = value
    x_cells: dict[int, dict[tuple[int, int], float]] = {}
    for area, row, col, value in _read_csv_rows(paths["X.csv"], 4):
        x_cells.setdefault(area, {})[(row, col)] = value
    d_cells: dict[int, dict[tuple[int, int], float]] = {}
    for area, row, col, value in _read_csv_rows(paths["D.csv"], 4):
        d_cells.setdefault(area, {})[(row, col)] = value

    if not y_cells:
        raise ParseError(f"{dirpath}: y.csv holds no records")
    area_ids = sorted(y_cells)
    if area_ids != list(range(len(area_ids))):
        raise ParseError(f"{dirpath}: area indices must be contiguous from 0, got {area_ids}")
    k = 1 + max(max(rows) for rows in y_cells.values())
    s = 1 + max(c for cells in x_cells.values() for (_, c) in cells)

    def dense(cells, shape, path, area):
        out = np.full(shape, np.nan)
        for idx, v in cells.items():
            out[idx] = v
        if np.any(np.isnan(out)):
            raise ParseError(f"{path}: area {area}: missing entries")
        return out

    areas = []
    for i in area_ids:
        if i not in x_cells:
            raise ParseError(f"{dirpath}: area {i}: no rows in X.csv")
        if i not in d_cells:
            raise ParseError(f"{dirpath}: area {i}: no rows in D.csv")
        y_i = dense({(r,): v for r, v in y_cells[i].items()}, (k,), paths["y.csv"], i)
        x_i = dense(x_cells[i], (k, s), paths["X.csv"], i)
        d_i = dense(d_cells[i], (k, k), paths["D.csv"], i)
        try:
            areas.append(AreaData(y_i, x_i, d_i))
        except (DimensionMismatch, InvalidInput) as exc:
            raise ParseError(f"{dirpath}: area {i}: {exc}") from None
    return Dataset.from_areas(areas)


def _save_csv(dataset: Dataset, dirpath: str) -> None:
    os.makedirs(dirpath, exist_ok=True)

    def write(name, header, rows):
        with open(os.path.join(dirpath, name), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)

    write(
        "y.csv",
        ["area", "row", "value"],
        (
            (i, r, repr(float(dataset.y[i, r])))
            for i in range(dataset.m)
            for r in range(dataset.k)
        ),
    )
    write(
        "X.csv",
        ["area", "row", "col", "value"],
        (
            (i, r, c, repr(float(dataset.X[i, r, c])))
            for i in range(dataset.m)
            for r in range(dataset.k)
            for c in range(dataset.s)
        ),
    )
    write(
        "D.csv",
        ["area", "row", "col", "value"],
        (
            (i, r, c, repr(float(dataset.D[i, r, c])))
            for i in range(dataset.m)
            for r in range(dataset.k)
            for c in range(dataset.k)
        ),
    )
