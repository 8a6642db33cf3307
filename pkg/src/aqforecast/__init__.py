"""Long-horizon air-quality forecasting with an attention-enhanced stacked LSTM.

Everything runs on numpy: a small tape-based autodiff engine drives the model,
the Adam optimizer and the gradient checks.
"""
from .autodiff import Tape, Tensor, backward, grad_check
from .ingest import COLUMNS, INPUT_FEATURES, SCHEMA, TARGET_POLLUTANTS, merge_tables, parse_source_csv
from .model import ForecastModel, ModelConfig, init_weights, load_checkpoint, save_checkpoint
from .training import TrainConfig, train

__version__ = "0.1.0"
