"""Daily resampling, gap filling, normalization and windowing."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np

from ._jsonio import dumps_17g
from .ingest import COLUMNS, INPUT_FEATURES, RawTable

EPS_STD = 1e-8


class PreprocessError(ValueError):
    pass


@dataclass
class TimeSeries:
    t: np.ndarray  # integer day index
    x: np.ndarray  # NaN marks an absent value

    def __post_init__(self):
        self.t = np.asarray(self.t)
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.t.shape != self.x.shape:
            raise PreprocessError("t and x must have the same length")
        if np.any(np.diff(self.t) <= 0):
            raise PreprocessError("t must be strictly increasing")


@dataclass
class AlignedFrame:
    start_date: date
    values: np.ndarray  # n_days x len(columns), no NaN
    columns: tuple[str, ...] = COLUMNS

    @property
    def n_days(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def dates(self) -> list[date]:
        return [self.start_date + timedelta(days=i) for i in range(self.n_days)]

    def select(self, names: Sequence[str]) -> np.ndarray:
        return self.values[:, [self.columns.index(n) for n in names]]


@dataclass
class NormalizationStats:
    columns: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    @property
    def scale(self) -> np.ndarray:
        # clamped columns are centred only
        return np.where(self.std > EPS_STD, self.std, 1.0)

    def to_dict(self) -> dict:
        return {"columns": list(self.columns),
                "mean": [float(v) for v in self.mean],
                "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(tuple(d["columns"]), np.array(d["mean"], dtype=np.float64),
                   np.array(d["std"], dtype=np.float64))

    def subset(self, names: Sequence[str]) -> "NormalizationStats":
        idx = [self.columns.index(n) for n in names]
        return NormalizationStats(tuple(names), self.mean[idx], self.std[idx])


@dataclass
class WindowedDataset:
    inputs: np.ndarray  # N x T x F
    targets: np.ndarray  # N x T x P
    starts: np.ndarray  # day offset of each window
    stride: int
    input_cols: tuple[str, ...]
    target_cols: tuple[str, ...]

    def __len__(self) -> int:
        return self.inputs.shape[0]


# ----------------------------------------------------------------------------

def resample_daily(raw: RawTable) -> tuple[date, dict[str, TimeSeries]]:
    """Average each column per UTC calendar day; days with no readings stay NaN."""
    if len(raw) == 0:
        raise PreprocessError("empty table")
    days = np.array([ts.date().toordinal() for ts in raw.timestamps])
    first = int(days.min())
    idx = days - first
    n = int(idx.max()) + 1
    t = np.arange(n)
    out = {}
    for name, col in raw.columns.items():
        ok = ~np.isnan(col)
        sums = np.bincount(idx[ok], weights=col[ok], minlength=n)
        counts = np.bincount(idx[ok], minlength=n)
        with np.errstate(invalid="ignore", divide="ignore"):
            x = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        out[name] = TimeSeries(t, x)
    return date.fromordinal(first), out


def interpolate_linear(s: TimeSeries) -> TimeSeries:
    """Fill interior gaps along the line between the neighbouring known points.

    Gaps before the first or after the last known value are left as NaN.
    """
    known = np.flatnonzero(~np.isnan(s.x))
    if known.size < 2:
        raise PreprocessError("interpolation needs at least two present values")
    x = s.x.copy()
    gaps = np.flatnonzero(np.isnan(x))
    gaps = gaps[(gaps > known[0]) & (gaps < known[-1])]
    if gaps.size:
        right = known[np.searchsorted(known, gaps)]
        left = known[np.searchsorted(known, gaps) - 1]
        ti, ti1 = s.t[left].astype(np.float64), s.t[right].astype(np.float64)
        xi, xi1 = x[left], x[right]
        t = s.t[gaps].astype(np.float64)
        x[gaps] = xi + (t - ti) / (ti1 - ti) * (xi1 - xi)
    return TimeSeries(s.t.copy(), x)


def impute_mean(s: TimeSeries) -> TimeSeries:
    present = ~np.isnan(s.x)
    if not present.any():
        raise PreprocessError("no data to impute")
    x = s.x.copy()
    x[~present] = np.sum(x[present]) / np.count_nonzero(present)
    return TimeSeries(s.t.copy(), x)


def fill_gaps(s: TimeSeries) -> TimeSeries:
    """Interpolate where possible, then mean-impute whatever is left."""
    if np.count_nonzero(~np.isnan(s.x)) >= 2:
        s = interpolate_linear(s)
    return impute_mean(s)


def build_frame(raw: RawTable, columns: Sequence[str] = COLUMNS) -> AlignedFrame:
    missing = [c for c in columns if c not in raw.columns]
    if missing:
        raise PreprocessError(f"missing column: {', '.join(missing)}")
    start, series = resample_daily(raw)
    cols = []
    for name in columns:
        try:
            cols.append(fill_gaps(series[name]).x)
        except PreprocessError as exc:
            raise PreprocessError(f"column {name}: {exc}") from None
    return AlignedFrame(start, np.column_stack(cols), tuple(columns))


def fit_stats(frame: AlignedFrame) -> NormalizationStats:
    mean = frame.values.mean(axis=0)
    std = frame.values.std(axis=0)  # population (ddof=0)
    return NormalizationStats(frame.columns, mean, np.maximum(std, EPS_STD))


def normalize_zscore(frame: AlignedFrame, stats: NormalizationStats) -> AlignedFrame:
    if tuple(stats.columns) != tuple(frame.columns):
        raise PreprocessError("normalization stats columns do not match frame columns")
    return AlignedFrame(frame.start_date, (frame.values - stats.mean) / stats.scale, frame.columns)


def denormalize(frame: AlignedFrame, stats: NormalizationStats) -> AlignedFrame:
    if tuple(stats.columns) != tuple(frame.columns):
        raise PreprocessError("normalization stats columns do not match frame columns")
    return AlignedFrame(frame.start_date, frame.values * stats.scale + stats.mean, frame.columns)


def denormalize_array(values: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Undo z-scoring on an array whose last axis follows ``stats.columns``."""
    return values * stats.scale + stats.mean


def split_chronological(frame: AlignedFrame, train_fraction: float,
                        window: int | None = None) -> tuple[AlignedFrame, AlignedFrame]:
    if not 0.0 < train_fraction < 1.0:
        raise PreprocessError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    k = int(math.floor(frame.n_days * train_fraction))
    train = AlignedFrame(frame.start_date, frame.values[:k], frame.columns)
    test = AlignedFrame(frame.start_date + timedelta(days=k), frame.values[k:], frame.columns)
    min_len = window if window is not None else 1
    for name, part in (("training", train), ("test", test)):
        if part.n_days < min_len:
            raise PreprocessError(
                f"{name} partition has {part.n_days} days, shorter than one window ({min_len})")
    return train, test


def make_windows(frame: AlignedFrame, T: int, stride: int,
                 input_cols: Sequence[str] = INPUT_FEATURES,
                 target_cols: Sequence[str] = ("o3_ppm", "co_ppm")) -> WindowedDataset:
    if T < 1 or stride < 1:
        raise PreprocessError("window length and stride must be positive")
    if frame.n_days < T:
        raise PreprocessError(f"frame shorter than window ({frame.n_days} < {T})")
    starts = np.arange(0, frame.n_days - T + 1, stride)
    xin = frame.select(input_cols)
    yout = frame.select(target_cols)
    inputs = np.stack([xin[s:s + T] for s in starts])
    targets = np.stack([yout[s:s + T] for s in starts])
    return WindowedDataset(inputs, targets, starts, stride, tuple(input_cols), tuple(target_cols))


# ---------------------------------------------------------------- pipeline

@dataclass
class Prepared:
    frame: AlignedFrame  # physical units, gap-free
    train: AlignedFrame  # normalized
    test: AlignedFrame  # normalized
    stats: NormalizationStats
    train_set: WindowedDataset
    test_set: WindowedDataset


def prepare(raw: RawTable, window: int, stride: int, train_fraction: float,
            input_cols: Sequence[str] = INPUT_FEATURES,
            target_cols: Sequence[str] = ("o3_ppm", "co_ppm")) -> Prepared:
    """resample -> interpolate -> impute -> split -> normalize (train stats) -> window."""
    frame = build_frame(raw)
    train_raw, test_raw = split_chronological(frame, train_fraction, window)
    stats = fit_stats(train_raw)
    train = normalize_zscore(train_raw, stats)
    test = normalize_zscore(test_raw, stats)
    return Prepared(
        frame, train, test, stats,
        make_windows(train, window, stride, input_cols, target_cols),
        make_windows(test, window, stride, input_cols, target_cols),
    )


def write_frame_csv(frame: AlignedFrame, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *frame.columns])
        for d, row in zip(frame.dates(), frame.values):
            w.writerow([d.isoformat(), *(f"{v:.17g}" for v in row)])


def read_frame_csv(path) -> AlignedFrame:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    cols = tuple(rows[0][1:])
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
    return AlignedFrame(date.fromisoformat(rows[1][0]), values, cols)


def write_stats(stats: NormalizationStats, path) -> None:
    Path(path).write_text(dumps_17g(stats.to_dict()) + "\n")


def read_stats(path) -> NormalizationStats:
    return NormalizationStats.from_dict(json.loads(Path(path).read_text()))
