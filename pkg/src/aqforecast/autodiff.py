"""Tape-based reverse-mode automatic differentiation over float64 numpy arrays.

Operations record themselves onto the innermost active :class:`Tape`.  When no
tape is active they simply compute, which is how inference runs.

    with Tape() as tape:
        loss = mean(abs_(sub(pred(x), y)))
    backward(loss, tape)
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "AutodiffError", "tensor", "backward", "grad_check",
    "add", "sub", "mul", "scale", "neg", "abs_", "power", "sigmoid", "tanh",
    "matmul", "transpose", "reshape", "softmax", "reduce_mean", "reduce_sum",
    "slice_last", "take_step", "stack_steps", "expand_last",
]


class AutodiffError(ValueError):
    pass


class _Partial:
    """Gradient that is nonzero only on ``index`` of the input."""

    __slots__ = ("index", "value")

    def __init__(self, index, value):
        self.index = index
        self.value = value

    def dense(self, shape) -> np.ndarray:
        full = np.zeros(shape)
        full[self.index] = self.value
        return full


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


class _Record:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward_fn):
        self.out = out
        self.inputs = inputs
        self.backward = backward_fn


_local = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered log of executed operations.

    Records are appended as operations execute, so the list is already in
    topological order; :func:`backward` walks it in reverse.
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def clear(self) -> None:
        self.records.clear()


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    tape = _active_tape()
    if needs and tape is not None:
        tape.records.append(_Record(out, tuple(inputs), backward_fn))
    return out


def _check_binary(a: Tensor, b: Tensor, name: str) -> bool:
    """Return True when ``b`` is a bias vector broadcast over the last axis of ``a``."""
    if a.shape == b.shape:
        return False
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return True
    raise AutodiffError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


def _sum_to_last(g: np.ndarray) -> np.ndarray:
    return g.reshape(-1, g.shape[-1]).sum(axis=0)


# ---------------------------------------------------------------- pointwise

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    bias = _check_binary(a, b, "add")

    def bw(g):
        return g, (_sum_to_last(g) if bias else g)

    return _emit(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    bias = _check_binary(a, b, "sub")

    def bw(g):
        return g, -(_sum_to_last(g) if bias else g)

    return _emit(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    bias = _check_binary(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        gb = g * ad
        return g * bd, (_sum_to_last(gb) if bias else gb)

    return _emit(ad * bd, (a, b), bw)


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def neg(a) -> Tensor:
    return scale(a, -1.0)


def abs_(a) -> Tensor:
    a = _as_tensor(a)
    s = np.sign(a.data)  # subgradient 0 at exact ties
    return _emit(np.abs(a.data), (a,), lambda g: (g * s,))


def power(a, p: float) -> Tensor:
    a = _as_tensor(a)
    p = float(p)
    ad = a.data
    return _emit(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1.0),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    s = _sigmoid(a.data)
    return _emit(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)
    return _emit(y, (a,), lambda g: (g * (1.0 - y * y),))


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise AutodiffError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _emit(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise AutodiffError("transpose expects a 2-D tensor")
    return _emit(a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise AutodiffError(f"reshape: cannot view {old} as {tuple(shape)}") from exc
    return _emit(out, (a,), lambda g: (g.reshape(old),))


# ---------------------------------------------------------------- reductions

def _norm_axes(ndim: int, axes) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise AutodiffError(f"axis {ax} out of range for {ndim}-D tensor")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def reduce_sum(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    ax = _norm_axes(a.ndim, axes)
    shape = a.shape

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),)

    return _emit(a.data.sum(axis=ax), (a,), bw)


def reduce_mean(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    ax = _norm_axes(a.ndim, axes)
    count = int(np.prod([a.shape[i] for i in ax])) if ax else 1
    if count == 0 or a.data.size == 0:
        raise AutodiffError("reduce_mean over an empty set of elements")
    shape = a.shape

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, ax) / count, shape).copy(),)

    return _emit(a.data.sum(axis=ax) / count, (a,), bw)


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    (ax,) = _norm_axes(a.ndim, axis)
    z = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=ax, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=ax, keepdims=True)),)

    return _emit(s, (a,), bw)


# ---------------------------------------------------------------- indexing

def slice_last(a, start: int, stop: int) -> Tensor:
    """``a[..., start:stop]``"""
    a = _as_tensor(a)
    index = (Ellipsis, slice(start, stop))
    return _emit(a.data[index], (a,), lambda g: (_Partial(index, g),))


def take_step(a, t: int) -> Tensor:
    """``a[:, t]`` for a B x T x D tensor."""
    a = _as_tensor(a)
    index = (slice(None), t)
    return _emit(a.data[index], (a,), lambda g: (_Partial(index, g),))


def stack_steps(items: Sequence[Tensor]) -> Tensor:
    """Stack T tensors of shape B x D into B x T x D."""
    items = [_as_tensor(x) for x in items]
    if not items:
        raise AutodiffError("stack_steps needs at least one tensor")
    if any(x.shape != items[0].shape for x in items):
        raise AutodiffError("stack_steps: shape mismatch")
    n = len(items)
    return _emit(np.stack([x.data for x in items], axis=1), items,
                 lambda g: tuple(g[:, i] for i in range(n)))


def expand_last(a, n: int) -> Tensor:
    """Repeat ``a`` along a new trailing axis of length ``n``."""
    a = _as_tensor(a)
    out = np.repeat(a.data[..., None], n, axis=-1)
    return _emit(out, (a,), lambda g: (g.sum(axis=-1),))


# ---------------------------------------------------------------- backward

def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` on every leaf tensor that requires grad.

    Gradients accumulate into existing ``.grad`` buffers; callers zero them
    between steps.
    """
    if loss.data.size != 1:
        raise AutodiffError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    produced = {id(r.out) for r in tape.records}
    if id(loss) not in produced:
        raise AutodiffError("loss was not produced under this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    owned: set[int] = set()  # buffers allocated here, safe to update in place
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.backward(g)):
            if not inp.requires_grad:
                continue
            key = id(inp)
            if key not in produced:
                if isinstance(gi, _Partial):
                    gi = gi.dense(inp.shape)
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
                continue
            prev = grads.get(key)
            if isinstance(gi, _Partial):
                if key not in owned:
                    buf = np.zeros(inp.shape) if prev is None else prev.copy()
                    grads[key] = buf
                    owned.add(key)
                grads[key][gi.index] += gi.value
            elif prev is None:
                grads[key] = gi
            elif key in owned:
                prev += gi
            else:
                grads[key] = prev + gi
                owned.add(key)


# ---------------------------------------------------------------- verification

def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5, tol: float = 1e-6) -> dict:
    """Compare the tape gradient of scalar ``f`` at ``x`` with central differences.

    Returns a dict with ``max_rel_error``, ``passed``, ``analytic`` and ``numeric``.
    The relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
    """
    x0 = np.array(_as_tensor(x).data, dtype=np.float64)
    xt = Tensor(x0.copy(), requires_grad=True)
    with Tape() as tape:
        y = f(xt)
    if not np.all(np.isfinite(y.data)):
        raise AutodiffError("non-finite evaluation at x")
    backward(y, tape)
    analytic = xt.grad if xt.grad is not None else np.zeros_like(x0)

    numeric = np.zeros_like(x0)
    flat = numeric.reshape(-1)
    for i in range(x0.size):
        xp = x0.copy().reshape(-1)
        xm = x0.copy().reshape(-1)
        xp[i] += h
        xm[i] -= h
        fp = f(Tensor(xp.reshape(x0.shape))).data
        fm = f(Tensor(xm.reshape(x0.shape))).data
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise AutodiffError(f"non-finite evaluation at coordinate {i}")
        flat[i] = (float(fp.reshape(-1)[0]) - float(fm.reshape(-1)[0])) / (2.0 * h)

    rel = relative_error(analytic, numeric)
    return {
        "max_rel_error": rel,
        "passed": rel <= tol,
        "analytic": analytic,
        "numeric": numeric,
    }


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    a = np.asarray(analytic).reshape(-1)
    n = np.asarray(numeric).reshape(-1)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
