"""Tabular datasets: CSV loading, IQR outlier filtering, standardization, splits."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

MISSING_TOKENS = {"", "?", "na", "nan", "null", "none"}


class ParseError(ValueError):
    pass


class SchemaError(ValueError):
    pass


class DegenerateDataError(ValueError):
    pass


class StratificationError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.float64).ravel()
        if x.ndim != 2:
            raise SchemaError(f"features must be 2-D, got shape {x.shape}")
        if x.shape[0] != y.shape[0]:
            raise SchemaError(f"{x.shape[0]} feature rows but {y.shape[0]} labels")
        if x.shape[0] < 1:
            raise DegenerateDataError("dataset has no rows")
        if len(self.feature_names) != x.shape[1]:
            raise SchemaError("feature_names length does not match feature columns")
        if not np.all(np.isin(y, (0.0, 1.0))):
            raise SchemaError("labels must be 0 or 1")
        if not (np.all(np.isfinite(x))):
            raise SchemaError("features contain non-finite values")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.feature_names)


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray


def load_csv(path: str | Path, label_column: str) -> Dataset:
    """Read a comma-separated file with a header row.

    Rows with any missing cell (empty, ``?``, ``NA``...) are dropped and the
    count is logged at WARNING level.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file, header row required") from None
        if label_column not in header:
            raise SchemaError(f"{path}: label column {label_column!r} not in header")
        rows: list[list[float]] = []
        dropped = 0
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            values = []
            missing = False
            for col, cell in zip(header, row):
                cell = cell.strip()
                if cell.lower() in MISSING_TOKENS:
                    missing = True
                    break
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: column {col!r}: cannot parse {cell!r}") from None
            if missing:
                dropped += 1
                continue
            rows.append(values)
    if dropped:
        log.warning("%s: dropped %d row(s) with missing values", path, dropped)
    if not rows:
        raise DegenerateDataError(f"{path}: no complete rows")
    table = np.array(rows, dtype=np.float64)
    li = header.index(label_column)
    labels = table[:, li]
    bad = ~np.isin(labels, (0.0, 1.0))
    if bad.any():
        raise SchemaError(f"{path}: label column {label_column!r} has non-binary value {labels[bad][0]:g}")
    names = tuple(h for i, h in enumerate(header) if i != li)
    return Dataset(np.delete(table, li, axis=1), labels, names)


def iqr_filter(ds: Dataset, coefficient: float = 2.5, columns: Sequence[str] | None = None) -> Dataset:
    """Drop rows with any selected value outside ``[Q1 - c*IQR, Q3 + c*IQR]``.

    Quartiles use linear interpolation between order statistics and are
    computed once over the input; all selected columns are filtered jointly.
    """
    if coefficient <= 0:
        raise ValueError("coefficient must be positive")
    names = list(ds.feature_names) if columns is None else list(columns)
    keep = np.ones(len(ds), dtype=bool)
    for name in names:
        try:
            col = ds.features[:, ds.feature_names.index(name)]
        except ValueError:
            raise SchemaError(f"unknown column {name!r}") from None
        q1, q3 = np.quantile(col, [0.25, 0.75], method="linear")
        spread = coefficient * (q3 - q1)
        keep &= (col >= q1 - spread) & (col <= q3 + spread)
    if not keep.any():
        raise DegenerateDataError("IQR filter removed every row")
    return ds.subset(keep)


def standardize(train: Dataset, others: Sequence[Dataset] = ()) -> tuple[list[Dataset], FeatureStats]:
    """Z-score every feature with training-split statistics.

    Returns ``[train, *others]`` transformed, plus the statistics used.
    """
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0)
    for name, s in zip(train.feature_names, std):
        if not s > 0:
            raise SchemaError(f"feature {name!r} has zero variance in the training split")
    stats = FeatureStats(mean, std)
    out = [Dataset((d.features - mean) / std, d.labels, d.feature_names) for d in (train, *others)]
    return out, stats


def split(ds: Dataset, val_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified train/validation split.

    The validation size is ``round(val_fraction * m)``, shared between the
    classes by largest remainder so each class keeps its proportion.
    """
    if not 0 < val_fraction < 1:
        raise ValueError("val_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    m = len(ds)
    n_val = int(round(val_fraction * m))
    classes = [np.flatnonzero(ds.labels == c) for c in (0.0, 1.0)]
    quotas = [val_fraction * len(idx) for idx in classes]
    counts = [math.floor(q) for q in quotas]
    by_remainder = sorted(range(2), key=lambda k: (-(quotas[k] - counts[k]), k))
    for k in by_remainder[: max(0, n_val - sum(counts))]:
        counts[k] += 1
    val_parts, train_parts = [], []
    for label, (idx, k) in enumerate(zip(classes, counts)):
        if k == 0 or k == len(idx):
            raise StratificationError(f"class {label} would be absent from one split "
                                      f"({len(idx)} rows, {k} for validation)")
        perm = rng.permutation(idx)
        val_parts.append(perm[:k])
        train_parts.append(perm[k:])
    val_idx = np.sort(np.concatenate(val_parts))
    train_idx = np.sort(np.concatenate(train_parts))
    return ds.subset(train_idx), ds.subset(val_idx)


def make_synthetic(kind: str, m: int, seed: int = 0) -> Dataset:
    """Two-feature toy problems with balanced classes.

    ``separable_blobs``: Gaussian clusters at (2, 2) and (-2, -2) with a
    guaranteed margin of 0.5 around the line x1 + x2 = 0.
    ``annulus``: label 1 inside radius 0.6, label 0 on the ring 0.8..1.2;
    no straight line separates them.
    """
    if m < 10:
        raise ValueError("m must be >= 10")
    rng = np.random.default_rng(seed)
    n1 = m // 2
    n0 = m - n1
    if kind in ("separable_blobs", "blobs"):
        def cluster(center, n):
            pts = np.empty((0, 2))
            while len(pts) < n:
                cand = rng.normal(center, 0.75, size=(2 * n, 2))
                side = np.sign(center) * (cand[:, 0] + cand[:, 1]) / math.sqrt(2)
                pts = np.vstack([pts, cand[side > 0.5]])
            return pts[:n]
        x = np.vstack([cluster(2.0, n1), cluster(-2.0, n0)])
    elif kind == "annulus":
        def ring(r_lo, r_hi, n):
            theta = rng.uniform(0, 2 * math.pi, n)
            # area-uniform radius
            r = np.sqrt(rng.uniform(r_lo**2, r_hi**2, n))
            return np.column_stack([r * np.cos(theta), r * np.sin(theta)])
        x = np.vstack([ring(0.0, 0.6, n1), ring(0.8, 1.2, n0)])
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    y = np.concatenate([np.ones(n1), np.zeros(n0)])
    perm = rng.permutation(m)
    return Dataset(x[perm], y[perm], ("x1", "x2"))
