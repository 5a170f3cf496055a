"""
Checking gradients against finite differences
==============================================

Every op in the tape has a hand-written backward rule. Here we verify one of
them by hand, then run the full suite that the CLI's ``gradcheck`` command uses.
"""

import numpy as np

from dnlfusion import autodiff as ad
from dnlfusion.autodiff import Tensor
from dnlfusion.gradcheck import check_gradients, run_suite

rng = np.random.default_rng(0)

# a small conv layer and a scalar loss
x = Tensor(rng.normal(size=(2, 3, 6, 6)))
w = Tensor(rng.normal(size=(4, 3, 3, 3)), requires_grad=True)

def loss():
    y = ad.relu(ad.conv2d(x, w, pad=1))
    return (y * y).mean()

grads = ad.backward(loss(), {"w": w})
print("analytic d loss / d w[0,0,0,0]:", grads["w"][0, 0, 0, 0])

# the same entry by central differences
h = 1e-5
w.data[0, 0, 0, 0] += h
up = float(loss().data)
w.data[0, 0, 0, 0] -= 2 * h
down = float(loss().data)
w.data[0, 0, 0, 0] += h
print("numeric  d loss / d w[0,0,0,0]:", (up - down) / (2 * h))

# check_gradients does this for every entry and reports the worst relative error
print(check_gradients("conv2d + relu", loss, {"w": w}))

# and the whole suite: each op, each extractor, both attention blocks, the full model
for result in run_suite():
    print(result)
