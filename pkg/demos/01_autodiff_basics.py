"""A tour of the tensor core: build a computation, differentiate it, optimize it.

Every network in this package runs on the same small tape-based autodiff
engine over float64 numpy arrays. This script fits a cubic polynomial to
noisy samples of sin(x) with plain SGD, printing the loss as it falls.

Run: python3 demos/01_autodiff_basics.py
"""

import numpy as np

from lanedet import tensor as T
from lanedet.tensor import SGD, Tensor

rng = np.random.default_rng(0)

# noisy observations of sin(x) on [-pi, pi]
xs = np.linspace(-np.pi, np.pi, 200)
ys = np.sin(xs) + rng.normal(0.0, 0.05, size=xs.shape)

# design matrix for a cubic: columns 1, x, x^2, x^3
design = Tensor(np.stack([np.ones_like(xs), xs, xs**2, xs**3], axis=1))
target = Tensor(ys.reshape(-1, 1))
coef = Tensor(np.zeros((4, 1)), requires_grad=True)

opt = SGD([coef], lr=0.002, momentum=0.9)
for step in range(300):
    pred = T.matmul(design, coef)
    residual = T.sub(pred, target)
    loss = T.tmean(T.square(residual))
    T.backward(loss)
    opt.step()
    if step % 60 == 0 or step == 299:
        print(f"step {step:3d}: mse {loss.item():.5f}")

print("\nfitted coefficients (1, x, x^2, x^3):")
print(np.round(coef.data.ravel(), 4))
print("compare with the sin Taylor series:   0, 1, 0, -1/6 = -0.1667")

# gradients agree with calculus: d/dc of mean (Xc - y)^2 is 2 X^T (Xc - y) / n
pred = T.matmul(design, coef)
loss = T.tmean(T.square(T.sub(pred, target)))
T.backward(loss)
manual = 2.0 * design.data.T @ (design.data @ coef.data - target.data) / len(xs)
print("\nmax |autodiff - manual| gradient gap:", np.abs(coef.grad - manual).max())
