"""Multivariate KPI series: representation, slicing, min-max normalization and
the on-disk dataset directory format.

Time indices in the public API are 1-based and inclusive (``slice_series(s, 1, T)``
is the whole series); arrays are indexed 0-based internally.

Dataset directory layout::

    <node>/series.csv   timestamp,<name1>,...,<named>
    <node>/labels.csv   start,end,class      (inclusive, seconds; `normal` elsewhere)
    <node>/meta.json    {"sample_rate_hz", "series_names", "bounds_overrides", "classes"}
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from telesto.errors import DataError, ShapeError

NORMAL = "normal"
ANOMALY_CLASSES = ("CPU", "ADU", "MEL", "AMA", "NOL")


@dataclass(frozen=True)
class MultivariateSeries:
    values: np.ndarray  # (d, T)
    series_names: tuple[str, ...]
    sample_rate_hz: float = 2.0
    labels: np.ndarray = None  # (T,) of str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ShapeError(f"values must be 2-D (d, T), got shape {values.shape}")
        d, T = values.shape
        if T == 0 or d == 0:
            raise DataError("series is empty")
        if not np.all(np.isfinite(values)):
            raise DataError("series contains NaN or infinite samples")
        if len(self.series_names) != d:
            raise ShapeError(f"{len(self.series_names)} names for {d} series")
        if not self.sample_rate_hz > 0:
            raise DataError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        labels = self.labels
        if labels is None:
            labels = np.full(T, NORMAL, dtype=object)
        labels = np.asarray(labels, dtype=object)
        if labels.shape != (T,):
            raise ShapeError(f"labels length {labels.shape} does not match T={T}")
        values.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "series_names", tuple(self.series_names))

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    @property
    def timestamps(self) -> np.ndarray:
        return np.arange(self.T) / self.sample_rate_hz

    def select_columns(self, mask: np.ndarray) -> "MultivariateSeries":
        """Sub-series of the timestamps where ``mask`` is true (order preserved)."""
        mask = np.asarray(mask, dtype=bool)
        return MultivariateSeries(
            self.values[:, mask], self.series_names, self.sample_rate_hz, self.labels[mask]
        )


@dataclass(frozen=True)
class SeriesSlice:
    """View on columns ``a..b`` (1-based, inclusive) of ``parent``."""

    parent: MultivariateSeries
    a: int
    b: int

    def __len__(self) -> int:
        return self.b - self.a + 1

    @property
    def values(self) -> np.ndarray:
        return self.parent.values[:, self.a - 1 : self.b]

    @property
    def labels(self) -> np.ndarray:
        return self.parent.labels[self.a - 1 : self.b]

    def to_series(self) -> MultivariateSeries:
        return MultivariateSeries(
            self.values, self.parent.series_names, self.parent.sample_rate_hz, self.labels
        )


def slice_series(series: MultivariateSeries | SeriesSlice, a: int, b: int) -> SeriesSlice:
    """Slice columns ``a..b`` inclusive, 1-based. Slicing a slice composes offsets."""
    if isinstance(series, SeriesSlice):
        if not 1 <= a <= b <= len(series):
            raise DataError(f"invalid slice bounds a={a}, b={b} for length {len(series)}")
        return SeriesSlice(series.parent, series.a + a - 1, series.a + b - 1)
    if not 1 <= a <= b <= series.T:
        raise DataError(f"invalid slice bounds a={a}, b={b} for T={series.T}")
    return SeriesSlice(series, a, b)


@dataclass(frozen=True)
class NormalizationBounds:
    mins: np.ndarray
    maxs: np.ndarray
    series_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        mins = np.asarray(self.mins, dtype=np.float64)
        maxs = np.asarray(self.maxs, dtype=np.float64)
        if mins.shape != maxs.shape or mins.ndim != 1:
            raise ShapeError("mins and maxs must be 1-D arrays of equal length")
        if np.any(maxs < mins):
            raise DataError("bounds with max < min")
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)
        object.__setattr__(self, "series_names", tuple(self.series_names))

    @property
    def degenerate(self) -> np.ndarray:
        return self.maxs == self.mins

    def to_dict(self) -> dict:
        return {
            name: [float(lo), float(hi)]
            for name, lo, hi in zip(self.series_names, self.mins, self.maxs)
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Sequence[float]]) -> "NormalizationBounds":
        names = tuple(data)
        return cls(
            np.array([data[n][0] for n in names]), np.array([data[n][1] for n in names]), names
        )


def fit_bounds(
    train: MultivariateSeries,
    known_bounds: Mapping[str, Sequence[float]] | None = None,
) -> NormalizationBounds:
    """Per-dimension min/max over the training series.

    Dimensions named in ``known_bounds`` take the given ``(min, max)`` instead of the
    observed extrema (for KPIs with well-known limits such as CPU percent).
    """
    known_bounds = known_bounds or {}
    mins = train.values.min(axis=1).copy()
    maxs = train.values.max(axis=1).copy()
    for i, name in enumerate(train.series_names):
        if name in known_bounds:
            lo, hi = known_bounds[name]
            mins[i], maxs[i] = float(lo), float(hi)
    return NormalizationBounds(mins, maxs, train.series_names)


def normalize_array(values: np.ndarray, bounds: NormalizationBounds, axis: int = 0) -> np.ndarray:
    """Min-max map ``values`` into [0, 1] along dimension ``axis``; degenerate dims map to 0."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[axis] != len(bounds.mins):
        raise ShapeError(
            f"bounds cover {len(bounds.mins)} dimensions, input has {values.shape[axis]}"
        )
    shape = [1] * values.ndim
    shape[axis] = -1
    lo = bounds.mins.reshape(shape)
    span = (bounds.maxs - bounds.mins).reshape(shape)
    safe = np.where(span > 0, span, 1.0)
    with np.errstate(over="ignore"):  # tiny spans overflow to inf, which clips to 1
        out = np.clip((values - lo) / safe, 0.0, 1.0)
    return np.where(span > 0, out, 0.0)


def normalize_minmax(series: MultivariateSeries, bounds: NormalizationBounds) -> MultivariateSeries:
    return MultivariateSeries(
        normalize_array(series.values, bounds), series.series_names, series.sample_rate_hz,
        series.labels,
    )


def label_intervals(labels: Sequence[str]) -> list[tuple[int, int, str]]:
    """Maximal runs of non-normal labels as 0-based inclusive ``(start, end, class)``."""
    out = []
    labels = list(labels)
    i = 0
    while i < len(labels):
        if labels[i] == NORMAL:
            i += 1
            continue
        j = i
        while j + 1 < len(labels) and labels[j + 1] == labels[i]:
            j += 1
        out.append((i, j, labels[i]))
        i = j + 1
    return out


def _fmt(v: float) -> str:
    return repr(float(v))


def write_dataset(
    path: str | Path,
    series: MultivariateSeries,
    bounds_overrides: Mapping[str, Sequence[float]] | None = None,
    classes: Sequence[str] = ANOMALY_CLASSES,
) -> Path:
    path = Path(path)
    path.mkdir(parents=False, exist_ok=True)
    ts = series.timestamps
    with open(path / "series.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", *series.series_names])
        for t in range(series.T):
            writer.writerow([_fmt(ts[t]), *(_fmt(v) for v in series.values[:, t])])
    with open(path / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["start", "end", "class"])
        for a, b, cls in label_intervals(series.labels):
            writer.writerow([_fmt(ts[a]), _fmt(ts[b]), cls])
    meta = {
        "sample_rate_hz": series.sample_rate_hz,
        "series_names": list(series.series_names),
        "bounds_overrides": {k: list(v) for k, v in (bounds_overrides or {}).items()},
        "classes": list(classes),
    }
    (path / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return path


@dataclass(frozen=True)
class Dataset:
    """One node's series plus the metadata stored next to it."""

    series: MultivariateSeries
    bounds_overrides: dict
    classes: tuple[str, ...]
    name: str = ""


def read_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    for fname in ("series.csv", "labels.csv", "meta.json"):
        if not (path / fname).is_file():
            raise DataError(f"{path}: missing {fname}")
    try:
        meta = json.loads((path / "meta.json").read_text())
        rate = float(meta["sample_rate_hz"])
        names = list(meta["series_names"])
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"{path / 'meta.json'}: {exc}") from exc
    classes = tuple(meta.get("classes", ANOMALY_CLASSES))

    with open(path / "series.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "timestamp" or rows[0][1:] != names:
        raise DataError(f"{path / 'series.csv'}: header does not match meta.json series_names")
    try:
        table = np.array([[float(x) for x in r] for r in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path / 'series.csv'}: {exc}") from exc
    if table.ndim != 2 or table.shape[0] == 0 or table.shape[1] != len(names) + 1:
        raise DataError(f"{path / 'series.csv'}: ragged or empty table")
    ts = table[:, 0]
    expected = ts[0] + np.arange(len(ts)) / rate
    if not np.allclose(ts, expected, atol=1e-6):
        raise DataError(f"{path / 'series.csv'}: timestamps not spaced at 1/{rate} s")

    labels = np.full(len(ts), NORMAL, dtype=object)
    with open(path / "labels.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["start", "end", "class"]:
            raise DataError(f"{path / 'labels.csv'}: expected header start,end,class")
        for row in reader:
            cls = row["class"]
            if cls not in classes and cls != NORMAL:
                raise DataError(f"{path / 'labels.csv'}: undeclared class {cls!r}")
            start, end = float(row["start"]), float(row["end"])
            labels[(ts >= start - 1e-9) & (ts <= end + 1e-9)] = cls

    series = MultivariateSeries(table[:, 1:].T, names, rate, labels)
    return Dataset(series, dict(meta.get("bounds_overrides", {})), classes, path.name)
