"""Checking the reverse pass of a desk-scale network against finite differences.

Run: python3 demos/04_gradients.py
"""
import numpy as np

from relpv.autograd import Network
from relpv.models import build_model
from relpv.verify import numeric_grad, rel_err

net = Network(build_model("lp_mc3d_3", "desk"), seed=0, dtype=np.float64)
rng = np.random.default_rng(2)
x = rng.standard_normal((2,) + net.spec.input_shape)
y = np.array([0, 3])

loss, grads = net.forward_backward(x, y, training=False)
print(f"{net.spec.name}: {net.num_params():,} parameters, loss {loss:.5f}")

# Perturb a few random entries in place and compare central differences.
for name in sorted(net.params)[::4]:
    arr = net.params[name]
    idx = tuple(int(rng.integers(s)) for s in arr.shape)
    fd = numeric_grad(lambda: net.forward_backward(x, y, training=False)[0], arr, idx)
    print(f"  {name:<10} {str(idx):<18} analytic {grads[name][idx]: .6e}  numeric {fd: .6e}  "
          f"rel. err {rel_err(fd, grads[name][idx]):.1e}")
