"""Attention -> LSTM -> BatchNorm -> Dropout -> LSTM -> BatchNorm -> Linear forecaster."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from ._jsonio import dumps_17g
from .autodiff import Tensor
from .preprocess import NormalizationStats

CHECKPOINT_VERSION = 1


class ModelError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    F: int = 6
    T: int = 730
    H: int = 512
    P: int = 2
    d_a: int = 64
    dropout_p: float = 0.2
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("F", "T", "H", "P", "d_a"):
            if int(getattr(self, name)) < 1:
                raise ModelError(f"{name} must be positive")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ModelError("dropout_p must lie in [0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    F, H, P, A = cfg.F, cfg.H, cfg.P, cfg.d_a
    return {
        "attention.W": (A, F),
        "attention.b": (A,),
        "attention.v": (A,),
        "lstm1.W_ih": (4 * H, F),
        "lstm1.W_hh": (4 * H, H),
        "lstm1.b": (4 * H,),
        "bn1.gamma": (H,),
        "bn1.beta": (H,),
        "lstm2.W_ih": (4 * H, H),
        "lstm2.W_hh": (4 * H, H),
        "lstm2.b": (4 * H,),
        "bn2.gamma": (H,),
        "bn2.beta": (H,),
        "head.W": (P, H),
        "head.b": (P,),
    }


def buffer_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    H = cfg.H
    return {"bn1.running_mean": (H,), "bn1.running_var": (H,),
            "bn2.running_mean": (H,), "bn2.running_var": (H,)}


# ---------------------------------------------------------------- layers

def attention_weights(x: Tensor, W: Tensor, b: Tensor, v: Tensor) -> Tensor:
    """Softmax over time of the additive scores v . tanh(W x_t + b); shape B x T."""
    B, T, F = x.shape
    if W.shape[1] != F:
        raise ModelError(f"attention expects {W.shape[1]} features, got {F}")
    A = W.shape[0]
    proj = ad.add(ad.matmul(ad.reshape(x, (B * T, F)), ad.transpose(W)), b)
    scores = ad.matmul(ad.tanh(proj), ad.reshape(v, (A, 1)))
    return ad.softmax(ad.reshape(scores, (B, T)), axis=1)


def attention_forward(x: Tensor, W: Tensor, b: Tensor, v: Tensor,
                      return_weights: bool = False):
    """Reweight each time step by T * alpha_t; uniform attention is the identity."""
    B, T, F = x.shape
    alpha = attention_weights(x, W, b, v)
    w = ad.expand_last(ad.scale(alpha, float(T)), F)
    out = ad.mul(x, w)
    return (out, alpha) if return_weights else out


def lstm_forward(x: Tensor, W_ih: Tensor, W_hh: Tensor, b: Tensor,
                 h0: Tensor | None = None, c0: Tensor | None = None) -> Tensor:
    """Single-layer LSTM over B x T x D input, gate order (i, f, g, o).

    Returns every hidden state, B x T x H.
    """
    B, T, D = x.shape
    H = W_hh.shape[1]
    if W_ih.shape != (4 * H, D):
        raise ModelError(f"LSTM input weights {W_ih.shape} do not fit input width {D}")
    xw = ad.reshape(ad.matmul(ad.reshape(x, (B * T, D)), ad.transpose(W_ih)), (B, T, 4 * H))
    xw = ad.add(xw, b)
    U = ad.transpose(W_hh)
    h, c = h0, c0
    hs = []
    for t in range(T):
        z = ad.take_step(xw, t)
        if h is not None:
            z = ad.add(z, ad.matmul(h, U))
        s = ad.sigmoid(z)
        i = ad.slice_last(s, 0, H)
        f = ad.slice_last(s, H, 2 * H)
        o = ad.slice_last(s, 3 * H, 4 * H)
        g = ad.tanh(ad.slice_last(z, 2 * H, 3 * H))
        ig = ad.mul(i, g)
        c = ig if c is None else ad.add(ad.mul(f, c), ig)
        h = ad.mul(o, ad.tanh(c))
        hs.append(h)
    return ad.stack_steps(hs)


def batchnorm_forward(x: Tensor, gamma: Tensor, beta: Tensor,
                      running_mean: np.ndarray, running_var: np.ndarray,
                      training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over the batch and time axes.

    In training mode the running statistics are updated in place.
    """
    B, T, H = x.shape
    eps_vec = np.full(H, eps)
    if training:
        if B * T < 2:
            raise ModelError("batchnorm in training mode needs at least two values per channel")
        mu = ad.reduce_mean(x, (0, 1))
        xc = ad.sub(x, mu)
        var = ad.reduce_mean(ad.mul(xc, xc), (0, 1))
        inv = ad.power(ad.add(var, eps_vec), -0.5)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.data
        running_var *= 1.0 - momentum
        running_var += momentum * var.data
    else:
        xc = ad.sub(x, running_mean)
        inv = Tensor(1.0 / np.sqrt(running_var + eps))
    return ad.add(ad.mul(ad.mul(xc, inv), gamma), beta)


def dropout_forward(x: Tensor, p: float, training: bool,
                    rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; the identity in eval mode or when p == 0."""
    if not 0.0 <= p < 1.0:
        raise ModelError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        rng = np.random.default_rng()
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return ad.mul(x, mask)


def linear_forward(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    B, T, H = x.shape
    y = ad.add(ad.matmul(ad.reshape(x, (B * T, H)), ad.transpose(W)), b)
    return ad.reshape(y, (B, T, W.shape[0]))


# ---------------------------------------------------------------- model

class ForecastModel:
    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray],
                 buffers: dict[str, np.ndarray]):
        self.cfg = cfg
        shapes = param_shapes(cfg)
        if set(params) != set(shapes):
            raise ModelError("parameter names do not match the configuration")
        self.params = {}
        for name, shape in shapes.items():
            arr = np.asarray(params[name], dtype=np.float64)
            if arr.shape != shape:
                raise ModelError(f"shape mismatch for {name}: {arr.shape} != {shape}")
            self.params[name] = Tensor(arr.copy(), requires_grad=True)
        self.buffers = {k: np.asarray(buffers[k], dtype=np.float64).copy()
                        for k in buffer_shapes(cfg)}
        self.mode = "train"

    def train(self) -> "ForecastModel":
        self.mode = "train"
        return self

    def eval(self) -> "ForecastModel":
        self.mode = "eval"
        return self

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {k: p.data for k, p in self.params.items()}
        out.update(self.buffers)
        return out

    def forward(self, x, mode: str | None = None,
                rng: np.random.Generator | None = None) -> Tensor:
        mode = mode or self.mode
        training = mode == "train"
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 3 or x.shape[2] != self.cfg.F:
            raise ModelError(f"expected input B x T x {self.cfg.F}, got {x.shape}")
        p, buf, cfg = self.params, self.buffers, self.cfg
        if training and rng is None:
            rng = np.random.default_rng(cfg.seed)
        h = attention_forward(x, p["attention.W"], p["attention.b"], p["attention.v"])
        h = lstm_forward(h, p["lstm1.W_ih"], p["lstm1.W_hh"], p["lstm1.b"])
        h = batchnorm_forward(h, p["bn1.gamma"], p["bn1.beta"], buf["bn1.running_mean"],
                              buf["bn1.running_var"], training, cfg.bn_momentum, cfg.bn_eps)
        h = dropout_forward(h, cfg.dropout_p, training, rng)
        h = lstm_forward(h, p["lstm2.W_ih"], p["lstm2.W_hh"], p["lstm2.b"])
        h = batchnorm_forward(h, p["bn2.gamma"], p["bn2.beta"], buf["bn2.running_mean"],
                              buf["bn2.running_var"], training, cfg.bn_momentum, cfg.bn_eps)
        return linear_forward(h, p["head.W"], p["head.b"])

    __call__ = forward

    def predict(self, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Eval-mode forward in chunks, no tape."""
        x = np.asarray(x, dtype=np.float64)
        outs = [self.forward(x[i:i + batch_size], mode="eval").data
                for i in range(0, x.shape[0], batch_size)]
        return np.concatenate(outs, axis=0)


def init_weights(cfg: ModelConfig, seed: int | None = None) -> ForecastModel:
    """Glorot-uniform matrices, zero biases (forget gate 1), unit BatchNorm scale."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.split(".")[1]
        if leaf in ("W", "W_ih", "W_hh"):
            fan_out, fan_in = shape
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-lim, lim, size=shape)
        elif leaf == "v":
            lim = np.sqrt(6.0 / (shape[0] + 1))
            params[name] = rng.uniform(-lim, lim, size=shape)
        elif leaf == "gamma":
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    H = cfg.H
    for layer in ("lstm1", "lstm2"):
        params[f"{layer}.b"][H:2 * H] = 1.0
    buffers = {}
    for name, shape in buffer_shapes(cfg).items():
        buffers[name] = np.ones(shape) if name.endswith("var") else np.zeros(shape)
    return ForecastModel(cfg, params, buffers)


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(model: ForecastModel, stats: NormalizationStats | None, path,
                    input_columns=(), target_columns=(), training: dict | None = None) -> None:
    arrays = {}
    for name, arr in model.state_arrays().items():
        arrays[name] = {"shape": list(arr.shape),
                        "data": [float(v) for v in arr.reshape(-1)]}
    doc = {
        "format": "aqforecast-checkpoint",
        "version": CHECKPOINT_VERSION,
        "model_config": asdict(model.cfg),
        "seed": model.cfg.seed,
        "input_columns": list(input_columns),
        "target_columns": list(target_columns),
        "normalization": stats.to_dict() if stats is not None else None,
        "training": training or {},
        "arrays": arrays,
    }
    Path(path).write_text(dumps_17g(doc) + "\n")


def load_checkpoint(path) -> tuple[ForecastModel, NormalizationStats | None, dict]:
    """Returns (model in eval mode, normalization stats, document metadata)."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"corrupt or unreadable checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict) or "version" not in doc:
        raise CheckpointError("corrupt checkpoint: no version field")
    if doc["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc['version']}")
    try:
        cfg = ModelConfig.from_dict(doc["model_config"])
        arrays = doc["arrays"]
    except (KeyError, TypeError, ModelError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc

    expected = {**param_shapes(cfg), **buffer_shapes(cfg)}
    loaded = {}
    for name, shape in expected.items():
        if name not in arrays:
            raise CheckpointError(f"shape mismatch: array {name} missing")
        entry = arrays[name]
        data = np.array(entry["data"], dtype=np.float64)
        if tuple(entry["shape"]) != shape or data.size != int(np.prod(shape)):
            raise CheckpointError(
                f"shape mismatch for {name}: expected {shape}, found {tuple(entry['shape'])} "
                f"with {data.size} values")
        loaded[name] = data.reshape(shape)
    params = {k: loaded[k] for k in param_shapes(cfg)}
    buffers = {k: loaded[k] for k in buffer_shapes(cfg)}
    model = ForecastModel(cfg, params, buffers).eval()
    stats = NormalizationStats.from_dict(doc["normalization"]) if doc.get("normalization") else None
    meta = {k: v for k, v in doc.items() if k != "arrays"}
    return model, stats, meta
