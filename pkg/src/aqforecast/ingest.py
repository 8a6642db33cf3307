"""Reading NOAA / EPA CSV exports into a common raw table."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

ABSENT_TOKENS = {"", "NA", "NaN", "nan"}


class IngestError(ValueError):
    """Raised for unreadable or malformed source files."""


@dataclass(frozen=True)
class Variable:
    name: str
    source: str  # "NOAA" or "EPA"
    units: str
    role: str  # "input_feature" or "target_pollutant"


SCHEMA: tuple[Variable, ...] = (
    Variable("temperature_c", "NOAA", "C", "input_feature"),
    Variable("wind_speed_ms", "NOAA", "m/s", "input_feature"),
    Variable("wind_direction_deg", "NOAA", "degrees", "input_feature"),
    Variable("relative_humidity_pct", "NOAA", "%", "input_feature"),
    Variable("precipitable_water_cm", "NOAA", "cm", "input_feature"),
    Variable("pressure_mbar", "NOAA", "mbar", "input_feature"),
    Variable("o3_ppm", "EPA", "ppm", "target_pollutant"),
    Variable("co_ppm", "EPA", "ppm", "target_pollutant"),
    Variable("so2_ppb", "EPA", "ppb", "target_pollutant"),
    Variable("no2_ppb", "EPA", "ppb", "target_pollutant"),
)

COLUMNS = tuple(v.name for v in SCHEMA)
INPUT_FEATURES = tuple(v.name for v in SCHEMA if v.role == "input_feature")
TARGET_POLLUTANTS = tuple(v.name for v in SCHEMA if v.role == "target_pollutant")


@dataclass
class RawTable:
    """Timestamps plus named columns; absent cells are NaN."""

    timestamps: list[datetime]
    columns: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.timestamps)
        for name, col in self.columns.items():
            if len(col) != n:
                raise IngestError(f"column {name} has {len(col)} values, expected {n}")
        for a, b in zip(self.timestamps, self.timestamps[1:]):
            if not a < b:
                raise IngestError(f"non-monotonic timestamp: {b.isoformat()} after {a.isoformat()}")

    def __len__(self) -> int:
        return len(self.timestamps)

    def n_absent(self, name: str) -> int:
        return int(np.isnan(self.columns[name]).sum())

    def equals(self, other: "RawTable") -> bool:
        if self.timestamps != other.timestamps or set(self.columns) != set(other.columns):
            return False
        return all(np.array_equal(self.columns[k], other.columns[k], equal_nan=True)
                   for k in self.columns)


def parse_timestamp(text: str) -> datetime:
    s = text.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    ts = datetime.fromisoformat(s)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _parse_cell(text: str, column: str, row: int, path) -> float:
    s = text.strip()
    if s in ABSENT_TOKENS:
        return math.nan
    try:
        return float(s)
    except ValueError:
        raise IngestError(f"{path}: non-numeric value {text!r} in column {column}, row {row}") from None


def parse_source_csv(path, schema=SCHEMA) -> RawTable:
    path = Path(path)
    known = {v.name for v in schema}
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise IngestError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if "timestamp" not in header:
        raise IngestError(f"{path}: header has no 'timestamp' column")
    ts_idx = header.index("timestamp")
    keep = []
    for i, name in enumerate(header):
        if i == ts_idx:
            continue
        if name in known:
            keep.append((i, name))
        else:
            log.warning("%s: ignoring unknown column %r", path, name)

    stamps: list[datetime] = []
    values = {name: [] for _, name in keep}
    for r, row in enumerate(rows[1:], start=1):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            stamps.append(parse_timestamp(row[ts_idx]))
        except (ValueError, IndexError):
            raise IngestError(f"{path}: unparsable timestamp in row {r}") from None
        for i, name in keep:
            values[name].append(_parse_cell(row[i] if i < len(row) else "", name, r, path))
    try:
        return RawTable(stamps, {k: np.array(v, dtype=np.float64) for k, v in values.items()})
    except IngestError as exc:
        raise IngestError(f"{path}: {exc}") from None


def write_raw_csv(table: RawTable, path) -> None:
    names = list(table.columns)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", *names])
        for i, ts in enumerate(table.timestamps):
            cells = []
            for n in names:
                v = table.columns[n][i]
                cells.append("" if math.isnan(v) else f"{v:.17g}")
            w.writerow([ts.isoformat(), *cells])


def merge_tables(a: RawTable, b: RawTable) -> RawTable:
    """Outer-join two tables on timestamp; columns must be disjoint."""
    dup = set(a.columns) & set(b.columns)
    if dup:
        raise IngestError(f"duplicate column: {', '.join(sorted(dup))}")
    stamps = sorted(set(a.timestamps) | set(b.timestamps))
    pos = {ts: i for i, ts in enumerate(stamps)}
    cols: dict[str, np.ndarray] = {}
    for src in (a, b):
        idx = np.array([pos[ts] for ts in src.timestamps], dtype=np.intp)
        for name, col in src.columns.items():
            out = np.full(len(stamps), np.nan)
            out[idx] = col
            cols[name] = out
    return RawTable(stamps, cols)


@dataclass
class ValidationReport:
    missing_columns: list[str]
    absent_fraction: dict[str, float]
    range_flags: list[tuple[str, int, float]]

    @property
    def issues(self) -> list[str]:
        out = [f"missing column: {c}" for c in self.missing_columns]
        out += [f"out of range: {c} row {i} value {v!r}" for c, i, v in self.range_flags]
        return out

    def to_dict(self) -> dict:
        return {
            "missing_columns": self.missing_columns,
            "absent_fraction": self.absent_fraction,
            "range_flags": [{"column": c, "row": i, "value": v} for c, i, v in self.range_flags],
            "issues": self.issues,
        }


def validate_schema(table: RawTable, schema=SCHEMA) -> ValidationReport:
    missing = [v.name for v in schema if v.name not in table.columns]
    n = len(table)
    frac = {}
    for v in schema:
        if v.name in table.columns:
            frac[v.name] = table.n_absent(v.name) / n if n else 0.0
    flags = []
    checks = {
        "relative_humidity_pct": lambda x: (x < 0) | (x > 100),
        "wind_direction_deg": lambda x: (x < 0) | (x >= 360),
    }
    for name, bad in checks.items():
        if name in table.columns:
            col = table.columns[name]
            with np.errstate(invalid="ignore"):
                hits = np.flatnonzero(bad(col) & ~np.isnan(col))
            flags += [(name, int(i), float(col[i])) for i in hits]
    return ValidationReport(missing, frac, flags)
