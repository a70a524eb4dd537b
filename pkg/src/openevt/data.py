"""Dataset model, distance semantics, and shared result types.

A :class:`LabeledDataset` is an immutable (points, labels) pair; classifiers
treat the label set as opaque strings and collapse it when they need a single
"known" class.  Distances default to Euclidean but Manhattan and general
Minkowski norms are supported everywhere.
"""

import csv
import math
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import DataError, UsageError

KNOWN = "known"
UNKNOWN = "unknown"


@dataclass(frozen=True)
class DistanceMetric:
    """A Minkowski-family metric identified by its order ``q`` (q >= 1)."""

    order: float = 2.0

    def __post_init__(self):
        if not (self.order >= 1.0):
            raise UsageError(f"Minkowski order must be >= 1, got {self.order}")

    @classmethod
    def euclidean(cls) -> "DistanceMetric":
        return cls(2.0)

    @classmethod
    def manhattan(cls) -> "DistanceMetric":
        return cls(1.0)

    @classmethod
    def minkowski(cls, q: float) -> "DistanceMetric":
        return cls(float(q))

    @classmethod
    def parse(cls, text: str) -> "DistanceMetric":
        """Parse ``"euclidean"``, ``"manhattan"`` or ``"minkowski:Q"``."""
        name = text.strip().lower()
        if name == "euclidean":
            return cls.euclidean()
        if name == "manhattan":
            return cls.manhattan()
        if name.startswith("minkowski:"):
            try:
                return cls.minkowski(float(name.split(":", 1)[1]))
            except ValueError:
                raise UsageError(f"bad Minkowski order in metric {text!r}") from None
        raise UsageError(f"unknown metric {text!r}")

    @property
    def name(self) -> str:
        if self.order == 2.0:
            return "euclidean"
        if self.order == 1.0:
            return "manhattan"
        return f"minkowski:{self.order:g}"


EUCLIDEAN = DistanceMetric.euclidean()


def distance(a, b, metric: DistanceMetric = EUCLIDEAN) -> float:
    """Metric distance between two points of equal dimension."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise UsageError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(_minkowski(a[None, :] - b[None, :], metric.order)[0])


def distances_to(q, points: np.ndarray, metric: DistanceMetric = EUCLIDEAN) -> np.ndarray:
    """Vector of distances from query ``q`` to every row of ``points``."""
    q = np.asarray(q, dtype=float)
    if q.ndim != 1 or q.shape[0] != points.shape[1]:
        raise UsageError(
            f"dimension mismatch: query has {q.shape[0] if q.ndim == 1 else q.shape} "
            f"coordinates, points have {points.shape[1]}"
        )
    return _minkowski(points - q[None, :], metric.order)


def _minkowski(diff: np.ndarray, order: float) -> np.ndarray:
    if order == 2.0:
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))
    if order == 1.0:
        return np.abs(diff).sum(axis=1)
    return np.power(np.power(np.abs(diff), order).sum(axis=1), 1.0 / order)


def negate_distances(d: Iterable[float], sort: bool = False) -> np.ndarray:
    """Elementwise negation; with ``sort=True`` the result is ascending,
    i.e. the order statistics R_(1) <= ... <= R_(n) of the negated values."""
    r = -np.asarray(list(d) if not isinstance(d, np.ndarray) else d, dtype=float)
    if sort:
        r = np.sort(r)
    return r


@dataclass(frozen=True)
class Verdict:
    """Outcome of scoring one point: ``label`` is ``"known"``/``"unknown"``,
    ``score`` is a classifier-specific finite statistic (see each classifier's
    docs for its orientation), ``evidence`` a classifier-specific record."""

    label: str
    score: float
    evidence: Any = None

    @property
    def is_unknown(self) -> bool:
        return self.label == UNKNOWN


class LabeledDataset:
    """Immutable training corpus: an (n, p) float matrix plus n class labels.

    Labels are opaque strings; internally they are mapped to dense integer
    ids in lexicographic order. Points are validated to be finite and of a
    common dimension p >= 1, with n >= 2.
    """

    def __init__(self, points, labels):
        pts = np.array(points, dtype=float)
        if pts.ndim != 2:
            raise UsageError("points must be a 2-d array of shape (n, p)")
        n, p = pts.shape
        if p < 1:
            raise UsageError("points must have dimension p >= 1")
        if n < 2:
            raise UsageError(f"need at least 2 points, got {n}")
        if not np.all(np.isfinite(pts)):
            bad = np.argwhere(~np.isfinite(pts))[0]
            raise UsageError(f"non-finite coordinate at row {bad[0]}, column {bad[1]}")
        labels = np.array([str(l) for l in labels], dtype=object)
        if labels.shape != (n,):
            raise UsageError(f"need exactly {n} labels, got {labels.shape}")
        names, ids = np.unique(labels, return_inverse=True)
        pts.setflags(write=False)
        labels.setflags(write=False)
        ids.setflags(write=False)
        self._points = pts
        self._labels = labels
        self._label_ids = ids
        self._class_names = tuple(str(c) for c in names)

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def labels(self) -> np.ndarray:
        return self._labels

    @property
    def label_ids(self) -> np.ndarray:
        """Dense integer ids aligned with :attr:`class_names`."""
        return self._label_ids

    @property
    def class_names(self) -> tuple:
        return self._class_names

    @property
    def n(self) -> int:
        return self._points.shape[0]

    @property
    def p(self) -> int:
        return self._points.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self._class_names)

    def class_count(self, name: str) -> int:
        return int(np.sum(self._labels == name))

    def subset(self, mask) -> "LabeledDataset":
        mask = np.asarray(mask)
        return LabeledDataset(self._points[mask], self._labels[mask])

    def restrict_to_classes(self, names: Sequence[str]) -> "LabeledDataset":
        keep = set(names)
        mask = np.array([l in keep for l in self._labels], dtype=bool)
        if not mask.any():
            raise UsageError(f"no rows with labels in {sorted(keep)}")
        return self.subset(mask)

    def __repr__(self):
        return f"LabeledDataset(n={self.n}, p={self.p}, classes={self.n_classes})"


def load_dataset_csv(
    path,
    label_column: str = "last",
    delimiter: str = ",",
    header: bool | None = None,
) -> LabeledDataset:
    """Read one observation per row from a delimited text file.

    ``label_column`` selects the first or last field as the class label; all
    other fields must parse as finite numbers.  ``header=None`` auto-detects a
    header row by attempting to parse the first row's feature fields.
    Non-numeric feature values are rejected with row/column diagnostics.
    """
    if label_column not in ("first", "last"):
        raise UsageError(f"label_column must be 'first' or 'last', got {label_column!r}")
    rows = []
    with open(path, newline="") as fh:
        for raw in csv.reader(fh, delimiter=delimiter):
            cells = [c.strip() for c in raw]
            if not cells or all(c == "" for c in cells):
                continue
            rows.append(cells)
    if not rows:
        raise DataError(f"{path}: file contains no data rows")

    def split_row(cells):
        if label_column == "first":
            return cells[0], cells[1:]
        return cells[-1], cells[:-1]

    start = 0
    if header is None:
        _, feats = split_row(rows[0])
        header = any(not _is_number(c) for c in feats)
    if header:
        start = 1
    if len(rows) - start < 1:
        raise DataError(f"{path}: no data rows after header")

    width = len(rows[start])
    points, labels = [], []
    for r in range(start, len(rows)):
        cells = rows[r]
        if len(cells) != width:
            raise DataError(
                f"{path}: row {r + 1} has {len(cells)} fields, expected {width}"
            )
        label, feats = split_row(cells)
        vec = []
        for c, cell in enumerate(feats):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: row {r + 1}, feature column {c + 1}: "
                    f"non-numeric value {cell!r}"
                ) from None
            if not math.isfinite(v):
                raise DataError(
                    f"{path}: row {r + 1}, feature column {c + 1}: "
                    f"non-finite value {cell!r}"
                )
            vec.append(v)
        points.append(vec)
        labels.append(label)
    try:
        return LabeledDataset(points, labels)
    except UsageError as exc:
        raise DataError(f"{path}: {exc}") from None


def load_points_csv(
    path,
    delimiter: str = ",",
    header: bool | None = None,
    label_column: str = "none",
) -> np.ndarray:
    """Read unlabeled feature rows; ``label_column`` may name a column
    ("first"/"last") to skip. Returns an (m, p) array, (0, 0) for a file
    with no data rows."""
    if label_column not in ("none", "first", "last"):
        raise UsageError(
            f"label_column must be 'none', 'first' or 'last', got {label_column!r}"
        )
    rows = []
    with open(path, newline="") as fh:
        for raw in csv.reader(fh, delimiter=delimiter):
            cells = [c.strip() for c in raw]
            if not cells or all(c == "" for c in cells):
                continue
            if label_column == "first":
                cells = cells[1:]
            elif label_column == "last":
                cells = cells[:-1]
            rows.append(cells)
    if not rows:
        return np.empty((0, 0))
    start = 0
    if header is None:
        header = any(not _is_number(c) for c in rows[0])
    if header:
        start = 1
    if len(rows) - start < 1:
        return np.empty((0, 0))
    width = len(rows[start])
    out = []
    for r in range(start, len(rows)):
        cells = rows[r]
        if len(cells) != width:
            raise DataError(
                f"{path}: row {r + 1} has {len(cells)} fields, expected {width}"
            )
        vec = []
        for c, cell in enumerate(cells):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: row {r + 1}, column {c + 1}: "
                    f"non-numeric value {cell!r}"
                ) from None
            if not math.isfinite(v):
                raise DataError(
                    f"{path}: row {r + 1}, column {c + 1}: non-finite value"
                )
            vec.append(v)
        out.append(vec)
    return np.array(out, dtype=float)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


@dataclass(frozen=True)
class Standardizer:
    """Per-feature affine transform fitted on training data (mean/scale)."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, points: np.ndarray) -> "Standardizer":
        mean = points.mean(axis=0)
        scale = points.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        return cls(mean=mean, scale=scale)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return (pts - self.mean) / self.scale
