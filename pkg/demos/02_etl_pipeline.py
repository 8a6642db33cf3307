"""Raw sub-daily tables -> validated, gap-free, normalized daily windows."""
import numpy as np

from aqforecast import ingest, preprocess as pp, synth

noaa, epa = synth.generate(n_days=400, seed=4, missing_fraction=0.05)
raw = ingest.merge_tables(noaa, epa)
print(len(raw.timestamps), "raw records,", sum(raw.n_absent(c) for c in raw.columns), "absent cells")

# %% schema check
report = ingest.validate_schema(raw)
print("issues:", report.issues or "none")

# %% one series by hand: interpolate interior gaps, then mean-impute the edges
s = pp.TimeSeries(np.arange(8), np.array([np.nan, 1.0, np.nan, np.nan, 4.0, 5.0, np.nan, np.nan]))
print(pp.fill_gaps(s).x)

# %% the full chain, statistics fitted on the training part only
prep = pp.prepare(raw, window=60, stride=15, train_fraction=0.8, target_cols=("o3_ppm", "co_ppm"))
print("frame", prep.frame.values.shape, "absent left:", int(np.isnan(prep.frame.values).sum()))
print("train windows", prep.train_set.inputs.shape, "test windows", prep.test_set.inputs.shape)
print("o3 mean/std", prep.stats.mean[list(prep.stats.columns).index("o3_ppm")],
      prep.stats.std[list(prep.stats.columns).index("o3_ppm")])
