"""Evaluation metrics and permutation feature importance."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from ._jsonio import dumps_17g

EPS_MAPE = 1e-8

# row order and labels used by the metrics table
TABLE_ORDER = ("so2_ppb", "no2_ppb", "o3_ppm", "co_ppm")
LABELS = {"so2_ppb": "SO2", "no2_ppb": "NO2", "o3_ppm": "O3", "co_ppm": "CO"}

METRICS_HEADER = ("pollutant", "mae", "rmse", "mse", "mape_pct")


@dataclass
class PollutantMetrics:
    mae: float
    rmse: float
    mse: float
    mape_pct: float
    n: int


@dataclass
class MetricsReport:
    rows: dict[str, PollutantMetrics]
    span: tuple[date, date] | None = None

    def ordered(self) -> list[tuple[str, PollutantMetrics]]:
        names = [n for n in TABLE_ORDER if n in self.rows]
        names += [n for n in self.rows if n not in TABLE_ORDER]
        return [(n, self.rows[n]) for n in names]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRICS_HEADER)
            for name, m in self.ordered():
                w.writerow([LABELS.get(name, name), *(f"{v:.17g}" for v in
                                                       (m.mae, m.rmse, m.mse, m.mape_pct))])

    def to_dict(self) -> dict:
        return {
            "span": [d.isoformat() for d in self.span] if self.span else None,
            "pollutants": {n: {"label": LABELS.get(n, n), "mae": m.mae, "rmse": m.rmse,
                               "mse": m.mse, "mape_pct": m.mape_pct, "n": m.n}
                           for n, m in self.ordered()},
        }

    def to_json(self, path) -> None:
        Path(path).write_text(dumps_17g(self.to_dict()) + "\n")


def pollutant_metrics(pred, truth) -> PollutantMetrics:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {truth.size} truths")
    if pred.size == 0:
        raise ValueError("empty series")
    e = pred - truth
    mse = float(np.mean(e * e))
    return PollutantMetrics(
        mae=float(np.mean(np.abs(e))),
        rmse=float(np.sqrt(mse)),
        mse=mse,
        mape_pct=float(100.0 * np.mean(np.abs(e) / np.maximum(np.abs(truth), EPS_MAPE))),
        n=int(pred.size),
    )


def compute_metrics(pred: Mapping[str, np.ndarray], truth: Mapping[str, np.ndarray],
                    span: tuple[date, date] | None = None) -> MetricsReport:
    if set(pred) != set(truth):
        raise ValueError("prediction and truth cover different pollutants")
    return MetricsReport({k: pollutant_metrics(pred[k], truth[k]) for k in pred}, span)


# ---------------------------------------------------------------- importance

@dataclass
class FeatureImportance:
    feature: str
    base_mae: float
    shuffled_mae: list[float] = field(default_factory=list)

    @property
    def mean_shuffled_mae(self) -> float:
        return float(np.mean(self.shuffled_mae))

    @property
    def importance(self) -> float:
        # mean of differences: exactly 0 when every repeat reproduces the base
        return float(np.mean(np.asarray(self.shuffled_mae) - self.base_mae))


@dataclass
class ImportanceReport:
    base_mae: float
    features: list[FeatureImportance]
    seed: int
    repeats: int

    def __getitem__(self, name: str) -> FeatureImportance:
        for f in self.features:
            if f.feature == name:
                return f
        raise KeyError(name)

    def header(self) -> list[str]:
        return ["feature", "base_mae", "mean_shuffled_mae", "importance",
                *(f"repeat_{r + 1}" for r in range(self.repeats))]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            for f in self.features:
                w.writerow([f.feature, *(f"{v:.17g}" for v in
                                         (f.base_mae, f.mean_shuffled_mae, f.importance,
                                          *f.shuffled_mae))])

    def to_dict(self) -> dict:
        return {"base_mae": self.base_mae, "seed": self.seed, "repeats": self.repeats,
                "features": [{"feature": f.feature, "mean_shuffled_mae": f.mean_shuffled_mae,
                              "importance": f.importance, "shuffled_mae": f.shuffled_mae}
                             for f in self.features]}

    def to_json(self, path) -> None:
        Path(path).write_text(dumps_17g(self.to_dict()) + "\n")


def random_permutation(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.permutation(n)


def identity_permutation(rng: np.random.Generator, n: int) -> np.ndarray:
    return np.arange(n)


def permutation_importance(model, dataset, seed: int = 0, repeats: int = 10,
                           permute: Callable[[np.random.Generator, int], np.ndarray] = random_permutation,
                           feature_names: Sequence[str] | None = None) -> ImportanceReport:
    """Rise in MAE (normalized target units) when one input feature is shuffled in time.

    Each (feature, repeat) pair draws from its own generator seeded with
    ``[seed, feature, repeat]``; within a repeat every window gets its own
    permutation of the time axis.
    """
    if model is None:
        raise ValueError("permutation importance needs a trained model")
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    x0 = dataset.inputs
    y = dataset.targets
    names = list(feature_names or dataset.input_cols)
    base = float(np.mean(np.abs(model.predict(x0) - y)))
    N, T, F = x0.shape
    feats = []
    for j in range(F):
        fi = FeatureImportance(names[j], base)
        for r in range(repeats):
            rng = np.random.default_rng([seed, j, r])
            x = x0.copy()
            for s in range(N):
                x[s, :, j] = x0[s, permute(rng, T), j]
            fi.shuffled_mae.append(float(np.mean(np.abs(model.predict(x) - y))))
        feats.append(fi)
    return ImportanceReport(base, feats, seed, repeats)


# ---------------------------------------------------------------- prediction series

def cover_starts(n_days: int, T: int, stride: int) -> np.ndarray:
    """Window starts at 0, stride, ... plus a final window flush with the end."""
    if n_days < T:
        raise ValueError(f"frame shorter than window ({n_days} < {T})")
    starts = list(range(0, n_days - T + 1, stride))
    if starts[-1] != n_days - T:
        starts.append(n_days - T)
    return np.array(starts)


def predict_series(model, inputs: np.ndarray, T: int, stride: int) -> np.ndarray:
    """Per-day predictions over a whole partition, averaging overlapping windows.

    ``inputs`` is n_days x F (normalized); returns n_days x P (normalized).
    """
    n = inputs.shape[0]
    starts = cover_starts(n, T, stride)
    windows = np.stack([inputs[s:s + T] for s in starts])
    pred = model.predict(windows)
    acc = np.zeros((n, pred.shape[2]))
    count = np.zeros(n)
    for s, p in zip(starts, pred):
        acc[s:s + T] += p
        count[s:s + T] += 1
    return acc / count[:, None]


def write_series_csv(path, dates: Sequence[date], targets: Sequence[str],
                     pred: np.ndarray, truth: np.ndarray) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["date"]
        for t in targets:
            head += [f"{t}_predicted", f"{t}_actual"]
        w.writerow(head)
        for i, d in enumerate(dates):
            row = [d.isoformat()]
            for k in range(len(targets)):
                row += [f"{pred[i, k]:.17g}", f"{truth[i, k]:.17g}"]
            w.writerow(row)
