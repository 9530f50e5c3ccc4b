"""The fixed local STFT basis and its two evaluation routes.

Run: python3 demos/01_stft_basis.py
"""
import numpy as np

from relpv.basis import build_basis
from relpv.block import layer2_stft_direct, layer2_stft_separable

# The basis matrix W has one real and one imaginary row per frequency point,
# 26 rows in total, and one column per offset in the n^3 window.
b = build_basis(3)
W = np.asarray(b.W)
print(f"W is {W.shape[0]}x{W.shape[1]} for n=3")
for p in b.points[:4]:
    print("  frequency (" + ", ".join(str(c) for c in p.v) + ")")
print("  ...")

# Every row sums to zero, so a constant window gives no response.
print("largest |row sum|:", np.abs(W.sum(axis=1)).max())

# The rows are mutually orthogonal with squared norm n^3 / 2.
gram = W @ W.T
print("W W^T == (27/2) I:", np.allclose(gram, 13.5 * np.eye(26)))

# Layer 2 of a ReLPV block applies W at every position of a single-channel map.
# The direct route gathers each n^3 neighbourhood and multiplies by W.  The
# separable route runs three 1-D passes per frequency and shares prefixes.
rng = np.random.default_rng(0)
x = rng.standard_normal((1, 10, 12, 14))
for n in (3, 5, 7, 9):
    bn = build_basis(n)
    d = layer2_stft_direct(x, bn)
    s = layer2_stft_separable(x, bn)
    print(f"n={n}: output {d.shape}, max |direct - separable| = {np.abs(d - s).max():.2e}")

# With valid padding every window is full, and a constant volume maps to zero.
c = np.full((1, 12, 12, 12), 3.5, dtype=np.float32)
print("constant input, n=9, max |output|:", np.abs(layer2_stft_separable(c, build_basis(9), padding="valid")).max())
