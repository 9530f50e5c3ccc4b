"""A ReLPV block as a drop-in replacement for a dense 3D convolution.

Run: python3 demos/02_relpv_block.py
"""
import numpy as np

from relpv.block import RelpvBlockParams, relpv_forward, relpv_param_count
from relpv.conv3d import Conv3dParams, conv3d_forward, conv3d_param_count
from relpv.cost import savings_ratio

c, f = 16, 32
x = np.random.default_rng(1).standard_normal((2, c, 8, 16, 16))

# Both layers map (N, c, d, h, w) to (N, f, d, h, w) with same padding.
for n in (3, 5, 9):
    conv = Conv3dParams.init(c, n, f, seed=0)
    block = RelpvBlockParams.init(c, n, f, seed=0)
    y_conv, _ = conv3d_forward(x, conv)
    y_lp, _ = relpv_forward(x, block)
    print(f"n={n}: conv {y_conv.shape} with {conv3d_param_count(c, n, f):>7,} weights, "
          f"relpv {y_lp.shape} with {relpv_param_count(c, f):,} weights")

# The block's weight count does not depend on n, so the savings grow as n^3.
print("savings ratio for c = f = 27:", [int(savings_ratio(n, 27, 27)) for n in (3, 5, 7, 9, 11, 13)])
