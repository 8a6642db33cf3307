"""MAE training loop with Adam."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import ForecastModel
from .preprocess import WindowedDataset

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Non-finite loss or gradient during optimization."""


@dataclass
class TrainConfig:
    iterations: int = 200  # epochs
    learning_rate: float = 0.001
    batch_size: int = 8
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if int(self.iterations) < 1:
            raise ValueError("iterations must be >= 1")
        if int(self.batch_size) < 1:
            raise ValueError("batch_size must be >= 1")
        # lr == 0 is allowed as a null update
        if not self.learning_rate >= 0.0:
            raise ValueError(f"learning_rate must be non-negative, got {self.learning_rate}")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: list[Tensor]) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params],
                   [np.zeros_like(p.data) for p in params])


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    checkpoint: str | None = None
    state: AdamState | None = None


def mae_loss(pred: Tensor, truth) -> Tensor:
    truth = truth if isinstance(truth, Tensor) else Tensor(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"mae_loss: shape mismatch {pred.shape} vs {truth.shape}")
    return ad.reduce_mean(ad.abs_(ad.sub(pred, truth)))


def adam_step(params: list[Tensor], state: AdamState, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter block {i}")
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def train(model: ForecastModel, dataset: WindowedDataset, cfg: TrainConfig,
          state: AdamState | None = None, start_epoch: int = 0,
          on_epoch=None) -> TrainReport:
    """Run ``cfg.iterations`` epochs starting at ``start_epoch``.

    Shuffling and dropout streams are derived from (seed, epoch, batch), so a
    run resumed with the returned ``state`` matches an uninterrupted one.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("empty dataset")
    if dataset.inputs.shape[2] != model.cfg.F or dataset.targets.shape[2] != model.cfg.P:
        raise ValueError(
            f"dataset shape {dataset.inputs.shape[2]}->{dataset.targets.shape[2]} does not "
            f"match model {model.cfg.F}->{model.cfg.P}")
    params = model.parameters()
    state = state or AdamState.zeros_like(params)
    report = TrainReport(state=state)
    model.train()
    for epoch in range(start_epoch, start_epoch + cfg.iterations):
        t0 = time.perf_counter()
        order = epoch_order(n, cfg.seed, epoch)
        total = 0.0
        for b, lo in enumerate(range(0, n, cfg.batch_size)):
            idx = order[lo:lo + cfg.batch_size]
            rng = np.random.default_rng([cfg.seed, epoch, b])
            model.zero_grad()
            with ad.Tape() as tape:
                loss = mae_loss(model.forward(dataset.inputs[idx], "train", rng),
                                dataset.targets[idx])
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}, batch {b + 1}")
            ad.backward(loss, tape)
            tape.clear()
            adam_step(params, state, cfg)
            total += value * len(idx)
        model.zero_grad()
        report.epoch_losses.append(total / n)
        report.epoch_seconds.append(time.perf_counter() - t0)
        log.info("epoch %d loss %.6f (%.2fs)", epoch + 1, report.epoch_losses[-1],
                 report.epoch_seconds[-1])
        if on_epoch is not None:
            on_epoch(epoch, report)
    model.eval()
    return report
