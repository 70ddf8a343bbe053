"""A short tour of the tensor and autodiff layer.

Run with ``python demos/01_autodiff_tour.py``.
"""
import numpy as np

from deepedm import tensor as T
from deepedm.nn import AdamW, attention
from deepedm.tensor import Tensor

# %% Gradients of a small expression
# backward() walks the recorded graph in reverse and fills .grad on leaves.
w = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
loss = (w * w).sum()
T.backward(loss)
print("loss", loss.item(), "grad", w.grad)  # grad is 2 * w

# %% Softmax attention is a convex combination of the values
rng = np.random.default_rng(0)
q, k, v = rng.normal(size=(2, 4)), rng.normal(size=(5, 4)), rng.normal(size=(5, 3))
out = attention(q, k, v).data
print("values range", v.min(axis=0), v.max(axis=0))
print("outputs", out)

# %% Fitting a line with AdamW
x = np.linspace(-1, 1, 50)
y = 3.0 * x - 0.5 + 0.05 * rng.normal(size=50)
slope = Tensor(np.array(0.0), requires_grad=True)
offset = Tensor(np.array(0.0), requires_grad=True)
opt = AdamW([slope, offset], lr=0.05, weight_decay=0.0)
for step in range(400):
    pred = Tensor(x) * slope + offset
    mse = T.square(pred - Tensor(y)).mean()
    grads = T.backward(mse, opt.params)
    opt.step([grads[id(p)] for p in opt.params])
print(f"fitted slope {slope.data:.3f}, offset {offset.data:.3f}, mse {mse.item():.4f}")
