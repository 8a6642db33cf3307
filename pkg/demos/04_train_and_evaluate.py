"""Train on a synthetic fixture, score the held-out year, rank the inputs."""
import numpy as np

from aqforecast import analysis, ingest, preprocess as pp, synth
from aqforecast.model import ModelConfig, init_weights
from aqforecast.training import TrainConfig, train

noaa, epa = synth.generate(n_days=1095, seed=2, dependence="temperature")
targets = ("o3_ppm", "co_ppm")
prep = pp.prepare(ingest.merge_tables(noaa, epa), 64, 16, 0.8, target_cols=targets)

model = init_weights(ModelConfig(F=6, T=64, H=16, d_a=8, P=2, seed=0))
rep = train(model, prep.train_set, TrainConfig(iterations=30, learning_rate=0.003, seed=0))
print("epoch MAE: first %.3f  last %.3f" % (rep.epoch_losses[0], rep.epoch_losses[-1]))

# %% per-day predictions over the test part, back in physical units
_, test = pp.split_chronological(prep.frame, 0.8, 64)
test_n = pp.normalize_zscore(test, prep.stats)
pred = pp.denormalize_array(analysis.predict_series(model, test_n.select(ingest.INPUT_FEATURES), 64, 16),
                            prep.stats.subset(targets))
truth = test.select(targets)
metrics = analysis.compute_metrics({t: pred[:, i] for i, t in enumerate(targets)},
                                   {t: truth[:, i] for i, t in enumerate(targets)})
for label, m in metrics.ordered():
    print("%-7s MAE %.4g  RMSE %.4g  MAPE %.1f%%" % (label, m.mae, m.rmse, m.mape_pct))

# %% permutation importance: only temperature drives these targets
imp = analysis.permutation_importance(model, prep.test_set, seed=0, repeats=5)
for f in sorted(imp.features, key=lambda f: -f.importance):
    print("%-22s %.4f" % (f.feature, f.importance))
