"""
A tour of the tape
==================

The enhancement network is trained with a small reverse-mode engine built
on numpy.  This script exercises the pieces the training loop leans on:
plain gradients, convolutions, and a gradient of a gradient.
"""

import numpy as np

from ctxot import autodiff as ad
from ctxot.autodiff import Tensor

rng = np.random.default_rng(0)

###############################################################################
# Gradients of an elementwise chain
# ---------------------------------
x = Tensor(rng.uniform(-1, 1, size=3), requires_grad=True)
y = ad.sum(ad.exp(ad.square(x)))
(gx,) = ad.grad(y, [x])
print("x          ", x.data)
print("d/dx       ", gx.data)
print("closed form", 2 * x.data * np.exp(x.data**2))

###############################################################################
# Convolution, checked against central differences
# ------------------------------------------------
img = rng.uniform(-2, 2, size=(1, 2, 5, 5))
ker = rng.uniform(-2, 2, size=(3, 2, 3, 3))
err = ad.gradient_error(lambda a, k: ad.sum(ad.square(ad.conv2d(a, k, padding=1))), [img, ker])
print(f"conv2d worst relative gradient error: {err:.2e}")

###############################################################################
# Second order
# ------------
# The critic's gradient penalty differentiates a gradient norm, so the
# backward pass itself has to be recorded.
w = Tensor(rng.standard_normal((4, 3)))
z = Tensor(rng.standard_normal(3), requires_grad=True)
(g,) = ad.grad(ad.sum(ad.tanh(ad.matvec(w, z))), [z], create_graph=True)
(hz,) = ad.grad(ad.sum(ad.square(g)), [z])
print("gradient of |grad|^2:", hz.data)
