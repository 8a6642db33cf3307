"""The attention + stacked LSTM forecaster: shapes, attention weights, a checkpoint."""
import tempfile
from pathlib import Path

import numpy as np

from aqforecast.autodiff import Tensor
from aqforecast.model import ModelConfig, attention_forward, init_weights, load_checkpoint, save_checkpoint

cfg = ModelConfig(F=6, T=30, H=16, d_a=8, P=2, seed=1)
model = init_weights(cfg)
x = np.random.default_rng(0).normal(size=(4, cfg.T, cfg.F))

# %% one forecast per day of the window, per pollutant
print("prediction shape", model.predict(x).shape)

# %% attention reweights the days; weights over time sum to one
p = model.params
out, alpha = attention_forward(Tensor(x), p["attention.W"], p["attention.b"], p["attention.v"],
                               return_weights=True)
print("weight sums", alpha.data.sum(axis=1).ravel()[:4])

# %% with constant scores the reweighting is the identity
zero_v = Tensor(np.zeros_like(p["attention.v"].data))
same = attention_forward(Tensor(x), p["attention.W"], p["attention.b"], zero_v)
print("max |out - x| with constant scores:", np.abs(same.data - x).max())

# %% checkpoints round-trip bit for bit
with tempfile.TemporaryDirectory() as d:
    save_checkpoint(model, None, Path(d) / "m.json")
    back, _, _ = load_checkpoint(Path(d) / "m.json")
    print("identical after reload:", np.array_equal(back.predict(x), model.predict(x)))
