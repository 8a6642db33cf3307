"""Synthetic NOAA/EPA-style exports with a known feature -> pollutant dependence.

Pollutants are smooth functions of same-day temperature and relative humidity
(``dependence="two"``) or of temperature alone (``dependence="temperature"``),
plus Gaussian noise.  A small fraction of cells is blanked to exercise gap
filling.
"""
from __future__ import annotations

from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .ingest import INPUT_FEATURES, TARGET_POLLUTANTS, RawTable, write_raw_csv

START = datetime(2015, 1, 1, 12, tzinfo=timezone.utc)


def _ar1(rng, n, phi, sigma):
    out = np.empty(n)
    out[0] = rng.normal(0.0, sigma / np.sqrt(1 - phi ** 2))
    eps = rng.normal(0.0, sigma, n)
    for i in range(1, n):
        out[i] = phi * out[i - 1] + eps[i]
    return out


def generate(n_days: int = 2190, seed: int = 0, dependence: str = "two",
             missing_fraction: float = 0.02, noise: float = 0.1) -> tuple[RawTable, RawTable]:
    """Return (meteorology table, pollutant table) over ``n_days`` daily stamps."""
    if dependence not in ("two", "temperature"):
        raise ValueError("dependence must be 'two' or 'temperature'")
    rng = np.random.default_rng(seed)
    d = np.arange(n_days)
    season = np.sin(2 * np.pi * d / 365.25)
    season2 = np.cos(2 * np.pi * d / 365.25)

    temp = 18.0 + 6.0 * season + _ar1(rng, n_days, 0.7, 2.0)
    wind = np.abs(3.0 + 0.8 * season2 + _ar1(rng, n_days, 0.5, 0.8))
    wdir = np.mod(220.0 + 50.0 * season2 + _ar1(rng, n_days, 0.6, 25.0), 360.0)
    rh = np.clip(60.0 + 12.0 * season2 + _ar1(rng, n_days, 0.7, 8.0), 5.0, 100.0)
    pw = np.abs(1.6 + 0.6 * season + _ar1(rng, n_days, 0.6, 0.3))
    pres = 1013.0 - 3.0 * season + _ar1(rng, n_days, 0.8, 2.5)
    met = {
        "temperature_c": temp, "wind_speed_ms": wind, "wind_direction_deg": wdir,
        "relative_humidity_pct": rh, "precipitable_water_cm": pw, "pressure_mbar": pres,
    }

    zt = (temp - 18.0) / 6.0
    zh = (rh - 60.0) / 12.0 if dependence == "two" else np.zeros(n_days)
    # each pollutant: base + scale * g(zt, zh) + noise
    shapes = {
        "o3_ppm": (0.040, 0.010, np.tanh(zt) - 0.5 * zh),
        "co_ppm": (0.60, 0.15, 0.6 * zh + 0.4 * np.sin(zt)),
        "so2_ppb": (2.5, 0.6, 0.5 * np.tanh(zt) + 0.5 * np.tanh(zh)),
        "no2_ppb": (18.0, 4.0, -0.7 * zt + 0.3 * zh * zh - 0.3),
    }
    pol = {}
    for name, (base, scale, g) in shapes.items():
        pol[name] = base + scale * (g + noise * rng.normal(size=n_days))

    for cols in (met, pol):
        for name in cols:
            drop = rng.random(n_days) < missing_fraction
            drop[[0, -1]] = False
            cols[name] = np.where(drop, np.nan, cols[name])

    stamps = [START + timedelta(days=int(i)) for i in d]
    return (RawTable(list(stamps), {k: met[k] for k in INPUT_FEATURES}),
            RawTable(list(stamps), {k: pol[k] for k in TARGET_POLLUTANTS}))


def write_fixture(out_dir, n_days: int = 2190, seed: int = 0, dependence: str = "two",
                  missing_fraction: float = 0.02, noise: float = 0.1) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    noaa, epa = generate(n_days, seed, dependence, missing_fraction, noise)
    paths = out / "noaa.csv", out / "epa.csv"
    write_raw_csv(noaa, paths[0])
    write_raw_csv(epa, paths[1])
    return paths
