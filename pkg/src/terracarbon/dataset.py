"""Sample tables, target transforms, one-hot layers and the Model A-H registry."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .grid import AlignmentError, Grid, GridStack

S1 = ("VH", "VV")
S2_BANDS = ("B2", "B3", "B4", "B5", "B6", "B7", "B8A", "B11", "B12")
S2_INDICES = ("EVI", "NDVI", "SATVI")
S2 = S2_BANDS + S2_INDICES
DEM = ("Elevation", "CS", "LSF", "TWI")
L8 = tuple(f"L{i}" for i in range(1, 12))
INVENTORY = ("Woodland",)


class TargetTransform(str, Enum):
    IDENTITY = "identity"
    NATURAL_LOG = "natural_log"

    def forward(self, y: np.ndarray) -> np.ndarray:
        return np.log(y) if self is TargetTransform.NATURAL_LOG else np.asarray(y, dtype=np.float64)

    def inverse(self, y: np.ndarray) -> np.ndarray:
        return np.exp(y) if self is TargetTransform.NATURAL_LOG else np.asarray(y, dtype=np.float64)


@dataclass(frozen=True)
class ModelSpec:
    name: str
    target: str
    feature_names: tuple[str, ...]
    transform: TargetTransform

    @property
    def key(self) -> str:
        return f"{self.target}/{self.name}"


def _spec(name: str, target: str, *groups: Sequence[str]) -> ModelSpec:
    features = tuple(f for group in groups for f in group)
    transform = TargetTransform.NATURAL_LOG if target == "SOC" else TargetTransform.IDENTITY
    return ModelSpec(name, target, features, transform)


_AGB_SPECS = [
    _spec("A", "AGB", S1, S2, DEM),
    _spec("B", "AGB", L8, INVENTORY),
    _spec("C", "AGB", S1, DEM, INVENTORY),
    _spec("D", "AGB", S1, S2, L8, DEM, INVENTORY),
    _spec("F", "AGB", S1, ("B4", "B8A", "NDVI"), DEM, ("L5", "L6", "L8", "L9"), INVENTORY),
    _spec(
        "H",
        "AGB",
        S1,
        ("B4", "B5", "B6", "B7", "B8A", "B11", "B12") + S2_INDICES,
        ("CS", "Elevation"),
        ("L5", "L6", "L7", "L10", "L11"),
        INVENTORY,
        ("SOC", "SOCD"),
    ),
]
_SOC_SPECS = [
    _spec("A", "SOC", S1, S2, DEM),
    _spec("B", "SOC", L8, INVENTORY),
    _spec("C", "SOC", S1, DEM, INVENTORY),
    _spec("D", "SOC", S1, S2, L8, DEM, INVENTORY),
    _spec("E", "SOC", S1, ("B2", "B8A", "EVI"), DEM, ("L4", "L5", "L6", "L10"), INVENTORY),
    _spec("G", "SOC", S1, S2, DEM, ("AGB",)),
]

REGISTRY: dict[tuple[str, str], ModelSpec] = {(s.target, s.name): s for s in _AGB_SPECS + _SOC_SPECS}


def get_spec(target: str, name: str) -> ModelSpec:
    try:
        return REGISTRY[(target.upper(), name.upper())]
    except KeyError:
        known = ", ".join(sorted(f"{t}/{n}" for t, n in REGISTRY))
        raise KeyError(f"no model spec {target}/{name}; known: {known}") from None


def specs_for(target: str) -> list[ModelSpec]:
    return [s for (t, _), s in REGISTRY.items() if t == target.upper()]


@dataclass(frozen=True, eq=False)
class SampleTable:
    """Feature matrix and (transformed) target extracted from co-registered grids."""

    feature_names: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray
    target_name: str = "y"
    transform: TargetTransform = TargetTransform.IDENTITY
    cell_index: np.ndarray | None = None

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[1] != len(self.feature_names):
            raise ValueError(f"X shape {self.X.shape} does not match {len(self.feature_names)} feature names")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise ValueError("feature names must be unique")
        if self.y.shape != (self.X.shape[0],):
            raise ValueError(f"y shape {self.y.shape} does not match {self.X.shape[0]} samples")

    @classmethod
    def from_arrays(cls, X, y, feature_names=None, target_name="y", transform=TargetTransform.IDENTITY):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        names = tuple(feature_names) if feature_names is not None else tuple(f"x{i}" for i in range(X.shape[1]))
        return cls(names, X, np.asarray(y, dtype=np.float64), target_name, TargetTransform(transform))

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> SampleTable:
        rows = np.asarray(rows)
        cells = None if self.cell_index is None else self.cell_index[rows]
        return SampleTable(self.feature_names, self.X[rows], self.y[rows], self.target_name, self.transform, cells)

    def select(self, names: Sequence[str]) -> SampleTable:
        cols = [self.feature_names.index(n) for n in names]
        return SampleTable(tuple(names), self.X[:, cols], self.y, self.target_name, self.transform, self.cell_index)

    def raw_target(self) -> np.ndarray:
        return self.transform.inverse(self.y)


class CategoryError(ValueError):
    pass


def one_hot(grid: Grid, categories: Sequence[float] | Mapping[str, float]) -> GridStack:
    """One indicator grid per category (1.0 where equal, else 0.0); nodata propagates.

    ``categories`` is either an ordered sequence of values (indicator names become
    ``"<grid name>_<value>"``) or an ordered mapping of indicator name to value.
    """
    if isinstance(categories, Mapping):
        labelled = list(categories.items())
    else:
        labelled = [(f"{grid.name}_{v:g}", v) for v in categories]
    valid = grid.valid_mask()
    known = np.zeros(grid.shape, dtype=bool)
    for _, value in labelled:
        known |= grid.values == value
    bad = valid & ~known
    if bad.any():
        r, c = map(int, np.argwhere(bad)[0])
        raise CategoryError(f"value {grid.values[r, c]!r} at cell ({r}, {c}) of {grid.name!r} is not a known category")
    out = []
    for label, value in labelled:
        ind = np.where(grid.values == value, 1.0, 0.0)
        ind[~valid] = grid.nodata
        out.append(grid.with_values(ind, name=label))
    return GridStack(out)


class MissingFeatureError(KeyError):
    pass


def extract_samples(stack: GridStack, spec: ModelSpec, target: Grid) -> SampleTable:
    """One sample per cell where the target and every selected feature are valid, row-major."""
    missing = [f for f in spec.feature_names if f not in stack]
    if missing:
        raise MissingFeatureError(f"stack lacks feature(s): {', '.join(missing)}")
    if target.shape != stack.shape or not target.transform.aligned(stack.transform):
        raise AlignmentError(f"target {target.name!r} is not aligned with the stack")
    grids = [stack[f] for f in spec.feature_names]
    valid = target.valid_mask()
    for g in grids:
        valid &= g.valid_mask()
    rows, cols = np.nonzero(valid)  # row-major order
    raw = target.values[rows, cols]
    if spec.transform is TargetTransform.NATURAL_LOG:
        nonpositive = int(np.count_nonzero(raw <= 0))
        if nonpositive:
            raise ValueError(f"natural_log target transform needs positive values; {nonpositive} cell(s) are <= 0")
    X = np.column_stack([g.values[rows, cols] for g in grids]) if grids else np.empty((len(rows), 0))
    return SampleTable(
        spec.feature_names,
        X,
        spec.transform.forward(raw),
        spec.target,
        spec.transform,
        np.column_stack([rows, cols]).astype(np.int64),
    )


def train_test_folds(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Seeded shuffle of ``range(n)`` split into ``k`` folds whose sizes differ by at most one."""
    if k < 2:
        raise ValueError(f"need at least 2 folds, got {k}")
    if k > n:
        raise ValueError(f"cannot split {n} samples into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, k)
    folds, start = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append(np.sort(perm[start : start + size]))
        start += size
    return folds


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_table_csv(table: SampleTable, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*table.feature_names, table.target_name])
        for row, y in zip(table.X, table.y):
            writer.writerow([*(_fmt(v) for v in row), _fmt(y)])


def read_table_csv(path, transform=TargetTransform.IDENTITY) -> SampleTable:
    """Read a table written by :func:`write_table_csv`; the last column is the target."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array(body, dtype=np.float64).reshape(len(body), len(header))
    return SampleTable(tuple(header[:-1]), data[:, :-1], data[:, -1], header[-1], TargetTransform(transform))


def write_folds(folds: Sequence[np.ndarray], path) -> None:
    with open(path, "w") as fh:
        json.dump([[int(i) for i in f] for f in folds], fh)
        fh.write("\n")


def read_folds(path) -> list[np.ndarray]:
    with open(path) as fh:
        return [np.asarray(f, dtype=np.int64) for f in json.load(fh)]
