"""
Checking analytic gradients against finite differences
======================================================

The backward passes are hand-derived, so the only trustworthy referee is
the loss surface itself: nudge one parameter by +-h and compare the slope
to what backprop reports. Run in float64 so the h^2 truncation error of
central differences stays above float roundoff.
"""

import numpy as np

from demnet import DemnetConfig, build_demnet, model_backward, model_forward
from demnet.layers import ConvSpec, conv2d_backward, conv2d_forward
from demnet.tensor import RngState

H = 1e-5
rng = RngState(123)


def numeric_grad(f, x):
    """Central differences, element by element; x is perturbed in place."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + H
        fp = f()
        flat[i] = orig - H
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * H)
    return grad


def rel_err(a, n):
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), 1e-3)))


# --- one convolution layer ----------------------------------------------------
x = rng.uniform_array((2, 3, 5, 5), -1, 1, dtype=np.float64)
w = rng.uniform_array((4, 3, 3, 3), -1, 1, dtype=np.float64)
b = rng.uniform_array((4,), -1, 1, dtype=np.float64)
spec = ConvSpec(stride=1, pad=1)

y, cache = conv2d_forward(x, w, b, spec)
r = rng.uniform_array(y.shape, -1, 1, dtype=np.float64)  # random cotangent
dx, dw, db = conv2d_backward(cache, r)

loss = lambda: float((conv2d_forward(x, w, b, spec)[0] * r).sum())
print("conv2d relative errors:")
print(f"  d/dx {rel_err(dx, numeric_grad(loss, x)):.2e}")
print(f"  d/dw {rel_err(dw, numeric_grad(loss, w)):.2e}")
print(f"  d/db {rel_err(db, numeric_grad(loss, b)):.2e}")

# --- the whole network at once ---------------------------------------------------
config = DemnetConfig(in_height=8, in_width=8, stem_filters=2,
                      block_filters=(2, 3), dense_widths=(8, 6, 5),
                      dropout_rates=(0.0, 0.0))
model = build_demnet(config, seed=9, dtype=np.float64)
xb = rng.uniform_array((3, 1, 8, 8), -1, 1, dtype=np.float64)
labels = np.array([0, 1, 2])

grads = model_backward(model, model_forward(model, xb, labels))
print(f"\nwhole model ({model.parameter_count()} parameters):")
worst = 0.0
for idx, name in enumerate(model.param_names):
    num = numeric_grad(lambda: model_forward(model, xb, labels).loss,
                       model.params[idx])
    err = rel_err(grads[idx], num)
    worst = max(worst, err)
    print(f"  {name:18s} {err:.2e}")
print(f"worst: {worst:.2e}")
