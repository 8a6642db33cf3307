"""Reverse-mode gradients on a small tape, checked against finite differences."""
import numpy as np

from aqforecast import autodiff as ad
from aqforecast.autodiff import Tape, Tensor, backward

# %% record a few ops, then walk the tape backwards
x = Tensor(np.array([[0.5, -1.0], [2.0, 0.25]]), requires_grad=True)
w = Tensor(np.array([[1.5], [-0.5]]), requires_grad=True)
with Tape() as tape:
    y = ad.reduce_mean(ad.tanh(ad.matmul(x, w)))
backward(y, tape)
print("loss", y.item())
print("dL/dw", w.grad.ravel())

# %% outside a tape ops just compute (this is how inference runs)
print("no tape:", ad.reduce_mean(ad.tanh(ad.matmul(x, w))).item())

# %% central differences agree
rep = ad.grad_check(lambda u: ad.reduce_sum(ad.sigmoid(ad.mul(u, u))), np.linspace(-1, 1, 6))
print("max relative error", rep["max_rel_error"], "passed", rep["passed"])
