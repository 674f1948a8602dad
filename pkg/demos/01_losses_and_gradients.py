"""
Losses on raw logits and a gradient check
=========================================

Every loss takes (N, C) logits and integer labels and returns one value per
sample. Backprop through a network is compared against central differences.
"""
import numpy as np

from advlab import diffcore as dc
from advlab import losses as L

logits = np.array([[2.0, 0.5, -1.0], [0.1, 0.2, 0.3]])
labels = np.array([0, 2])

for loss in (L.CEL(), L.OSL(), L.RSL(k=2, M=1), L.Squentropy(), L.LabelSmooth(0.1), L.LogitNorm()):
    print(f"{loss.name:>14}: {np.round(loss.value(logits, labels), 4)}")

# the rescaled square loss pulls the true logit towards M and the rest towards 0,
# so its minimizer is the scaled one-hot vector
z = np.zeros((1, 3))
for _ in range(200):
    z -= 0.1 * L.RSL(2, 1).grad(z, [1])
print("RSL minimizer:", np.round(z, 6))

# gradient check on a small conv net, away from ReLU kinks
model = dc.init_model("conv", (2, 4, 4), 3, seed=0)
seed = 0
x = np.random.default_rng(seed).random((2, 2, 4, 4))
while dc.nonsmooth_margin(model, x) < 1e-3:
    seed += 1
    x = np.random.default_rng(seed).random((2, 2, 4, 4))
exact = dc.backward(model, L.RSL(), x, [0, 2], want_input_grad=True)
approx = dc.finite_difference_gradient(model, L.RSL(), x, [0, 2], h=1e-5)
for name in exact.param_grads:
    err = dc.relative_error(exact.param_grads[name], approx.param_grads[name], 1e-7).max()
    print(f"{name:>14}: max relative error {err:.1e}")
