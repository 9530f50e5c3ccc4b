"""Self-check suites behind ``relpv verify``.

Each check reports a measured value against a tolerance.  ``basis_hook``
lets a test harness substitute a modified basis (see
:func:`inject_sign_error`) to confirm that the suites catch a broken
transform.
"""
import cmath
import dataclasses
import itertools
import time
from dataclasses import dataclass

import numpy as np

from .basis import NUM_CHANNELS, NUM_FREQUENCIES, build_basis, frequency_points, reconstruct_from_factors
from .block import (LAYER2, RelpvBlockParams, gather_neighborhoods, layer2_stft_direct,
                    layer2_stft_separable, relpv_backward, relpv_forward)
from .conv3d import Conv3dParams, conv3d_backward, conv3d_forward, conv3d_forward_direct
from .cost import count_params, savings_ratio
from .models import build_model

SUITES = ("basis", "oracle", "grad", "counts", "decorr")
WINDOWS = (3, 5, 7, 9)


@dataclass
class Check:
    name: str
    passed: bool
    measured: float
    tolerance: float
    relation: str = "<="

    def line(self):
        return (f"{'PASS' if self.passed else 'FAIL'}  {self.name:<40} measured={self.measured:.3e}  "
                f"{self.relation} {self.tolerance:.3e}")


def _upper(name, measured, tol):
    measured = float(measured)
    return Check(name, bool(measured <= tol), measured, tol)


def inject_sign_error(basis, row=3):
    """Copy of ``basis`` with one row of ``W`` negated (mutation-test hook)."""
    W = np.array(basis.W)
    W[row] *= -1
    W.setflags(write=False)
    return dataclasses.replace(basis, W=W)


def _basis(n, hook):
    b = build_basis(n)
    return hook(b) if hook else b


# -- independent oracles -------------------------------------------------------

def naive_basis(n):
    """W evaluated term by term from the definition with ``cmath``."""
    r = n // 2
    rows = []
    for p in frequency_points(n):
        v = [float(c) for c in p.v]
        vals = [cmath.exp(-2j * cmath.pi * (v[0] * a + v[1] * b + v[2] * c))
                for a, b, c in itertools.product(range(-r, r + 1), repeat=3)]
        rows.append([z.real for z in vals])
        rows.append([z.imag for z in vals])
    return np.array(rows)


def naive_stft(fmap, n, W):
    """Direct summation F(x) = sum_y f(x - y) w(y) at every position (zero padded, stride 1)."""
    r = n // 2
    d, h, w = fmap.shape
    padded = np.pad(fmap, r)
    out = np.zeros((NUM_CHANNELS, d, h, w))
    for col, (a, b, c) in enumerate(itertools.product(range(-r, r + 1), repeat=3)):
        shifted = padded[r - a:r - a + d, r - b:r - b + h, r - c:r - c + w]
        out += W[:, col, None, None, None] * shifted[None]
    return out


def decorrelation_stats(n=3, volumes=8, size=24, seed=0, max_positions=None):
    """Mean |off-diagonal correlation| of the 26 STFT channels and of the raw n^3 window.

    Volumes are white noise smoothed by a 3^3 box filter; only windows fully
    inside each volume are used.  Returns ``(stft, raw, positions)``.
    """
    from scipy.ndimage import uniform_filter
    rng = np.random.default_rng(seed)
    patches = []
    for _ in range(volumes):
        vol = uniform_filter(rng.standard_normal((size, size, size)), size=3, mode="wrap")
        patches.append(gather_neighborhoods(vol[None], n, padding="valid").reshape(n ** 3, -1))
    raw = np.concatenate(patches, axis=1)
    if max_positions and raw.shape[1] > max_positions:
        raw = raw[:, rng.choice(raw.shape[1], max_positions, replace=False)]
    stft = build_basis(n).W @ raw

    def mean_offdiag(x):
        c = np.corrcoef(x)
        mask = ~np.eye(len(c), dtype=bool)
        return float(np.abs(c[mask]).mean())

    return mean_offdiag(stft), mean_offdiag(raw), raw.shape[1]


def numeric_grad(fn, arr, idx, eps=1e-6):
    """Central difference of scalar ``fn()`` with respect to ``arr[idx]`` (in place, restored)."""
    old = arr[idx]
    arr[idx] = old + eps
    up = fn()
    arr[idx] = old - eps
    down = fn()
    arr[idx] = old
    return (up - down) / (2 * eps)


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def _fd_max(fn, analytic, arrays, rng, samples=5, eps=1e-6):
    worst = 0.0
    for name, arr in arrays.items():
        for _ in range(samples):
            idx = tuple(int(rng.integers(s)) for s in arr.shape)
            worst = max(worst, rel_err(numeric_grad(fn, arr, idx, eps), analytic[name][idx]))
    return worst


# -- suites -------------------------------------------------------------------

def suite_basis(hook=None):
    checks = []
    for n in WINDOWS:
        b = _basis(n, hook)
        W = b.W
        checks.append(Check(f"basis.shape[n={n}]", W.shape == (NUM_CHANNELS, n ** 3),
                            float(W.shape[0] * 1000 + W.shape[1]), float(NUM_CHANNELS * 1000 + n ** 3), "=="))
        checks.append(_upper(f"basis.definition[n={n}]", np.abs(W - naive_basis(n)).max(), 1e-12))
        full = reconstruct_from_factors(b)
        sep = np.empty_like(W)
        sep[0::2], sep[1::2] = full.real, full.imag
        checks.append(_upper(f"basis.separable[n={n}]", np.abs(W - sep).max(), 1e-12))
        checks.append(_upper(f"basis.zero_dc[n={n}]", np.abs(W.sum(axis=1)).max(), 1e-12))
        centre = W[:, (n ** 3) // 2]
        checks.append(_upper(f"basis.centre[n={n}]",
                             max(np.abs(centre[0::2] - 1).max(), np.abs(centre[1::2]).max()), 1e-15))
        gram = W @ W.T
        checks.append(_upper(f"basis.orthogonal[n={n}]", np.abs(gram - n ** 3 / 2 * np.eye(NUM_CHANNELS)).max(),
                             1e-9))
        pts = [tuple(p.signs) for p in b.points]
        clash = sum(tuple(-s for s in p) in pts for p in pts)
        checks.append(Check(f"basis.no_conjugates[n={n}]", len(pts) == NUM_FREQUENCIES and clash == 0,
                            float(clash), 0.0))
    return checks


def suite_oracle(hook=None, inputs=3, seed=0):
    rng = np.random.default_rng(seed)
    checks = []
    for n in WINDOWS:
        b = _basis(n, hook)
        shape = (1, 11, 10, 9)
        worst = 0.0
        for _ in range(inputs):
            x = rng.standard_normal(shape)
            worst = max(worst, np.abs(layer2_stft_separable(x, b) - layer2_stft_direct(x, b)).max())
        checks.append(_upper(f"oracle.separable_vs_direct[n={n}]", worst, 1e-10))
        x = rng.standard_normal((7, 6, 8))
        checks.append(_upper(f"oracle.direct_vs_sum[n={n}]",
                             np.abs(layer2_stft_direct(x[None], b) - naive_stft(x, n, naive_basis(n))).max(), 1e-10))
        worst = 0.0
        for stride, padding in ((1, "same"), (2, "same"), (2, "valid")):
            for route, (fwd, adj) in LAYER2.items():
                x = rng.standard_normal(shape)
                y = fwd(x, b, stride, padding)
                g = rng.standard_normal(y.shape)
                lhs = float((y * g).sum())
                rhs = float((x * adj(g, b, shape[1:], stride, padding)).sum())
                worst = max(worst, rel_err(lhs, rhs))
        checks.append(_upper(f"oracle.adjoint[n={n}]", worst, 1e-10))
    c = Conv3dParams.init(3, 3, 4, seed=seed)
    x = rng.standard_normal((2, 3, 6, 5, 7))
    got, _ = conv3d_forward(x, c)
    checks.append(_upper("oracle.conv3d_im2col_vs_direct", np.abs(got - conv3d_forward_direct(x, c)).max(), 1e-10))
    return checks


def suite_grad(seed=0):
    rng = np.random.default_rng(seed)
    checks = []
    p = RelpvBlockParams.init(2, 3, 3, seed=seed)
    x = rng.standard_normal((2, 4, 4, 4))
    g = rng.standard_normal((3, 4, 4, 4))

    def loss():
        return float((relpv_forward(x, p)[0] * g).sum())

    gx, grads = relpv_backward(g, relpv_forward(x, p)[1])
    arrays = {"w1": p.w1, "b1": p.b1, "w4": p.w4, "b4": p.b4}
    grads = dict(grads, x=gx)
    arrays["x"] = x
    checks.append(_upper("grad.relpv", _fd_max(loss, grads, arrays, rng), 1e-5))

    c = Conv3dParams.init(2, 3, 3, seed=seed)
    xc = rng.standard_normal((1, 2, 5, 4, 4))
    gc = rng.standard_normal((1, 3, 5, 4, 4))

    def closs():
        return float((conv3d_forward(xc, c)[0] * gc).sum())

    gx, gw, gb = conv3d_backward(gc, conv3d_forward(xc, c)[1])
    checks.append(_upper("grad.conv3d", _fd_max(closs, {"x": gx, "w": gw, "b": gb},
                                                {"x": xc, "w": c.weights, "b": c.bias}, rng), 1e-5))
    from .autograd import Network
    net = Network(build_model("lp_mc3d_3", "desk"), seed=seed, dtype=np.float64)
    xb = rng.standard_normal((2,) + net.spec.input_shape)
    yb = np.array([0, 3])
    _, grads = net.forward_backward(xb, yb, training=False)

    def nloss():
        return net.forward_backward(xb, yb, training=False)[0]

    names = sorted(net.params)
    picks = {k: net.params[k] for k in (names[i] for i in rng.choice(len(names), 5, replace=False))}
    checks.append(_upper("grad.lp_mc3d_3_desk", _fd_max(nloss, grads, picks, rng, samples=1), 1e-5))
    return checks


# (model, scale, reference count in millions)
REFERENCE_COUNTS = (
    ("mc3d_3", 18.0), ("mc3d_5", 34.32), ("mc3d_7", 71.88), ("mc3d_9", 138.34),
    ("lp_mc3d_3", 13.0), ("lp_mc3d_5", 13.0), ("lp_mc3d_7", 13.0), ("lp_mc3d_9", 13.0),
    ("mc3d_3_T1", 17.44), ("mc3d_3_B3", 13.30),
)


def suite_counts():
    checks = []
    for name, ref in REFERENCE_COUNTS:
        got = count_params(build_model(name, "paper")).params / 1e6
        checks.append(_upper(f"counts.{name}[rel. to {ref}M]", abs(got - ref) / ref, 0.05))
    lp = {count_params(build_model(f"lp_mc3d_{n}", "paper")).params for n in WINDOWS}
    checks.append(Check("counts.lp_equal_across_n", len(lp) == 1, float(len(lp)), 1.0, "=="))
    for n, want in zip((3, 5, 7, 9, 11, 13), (27, 125, 343, 729, 1331, 2197)):
        got = savings_ratio(n, 27, 27)
        checks.append(Check(f"counts.savings_ratio[n={n}]", got == want, float(got), float(want), "=="))
    return checks


def suite_decorr(seed=0):
    stft, raw, npos = decorrelation_stats(3, seed=seed)
    return [Check(f"decorr.stft_below_raw[{npos} positions]", stft < raw, stft, raw, "<"),
            Check("decorr.positions", npos >= 10_000, float(npos), 1e4, ">=")]


def run_suite(suite="all", basis_hook=None, seed=0, out=print):
    """Run one or all suites, printing a line per check; returns the list of checks."""
    names = SUITES if suite == "all" else (suite,)
    if any(s not in SUITES for s in names):
        raise ValueError(f"unknown suite {suite!r}; choose from {SUITES + ('all',)}")
    checks = []
    for name in names:
        t = time.perf_counter()
        if name == "basis":
            res = suite_basis(basis_hook)
        elif name == "oracle":
            res = suite_oracle(basis_hook, seed=seed)
        elif name == "grad":
            res = suite_grad(seed)
        elif name == "counts":
            res = suite_counts()
        else:
            res = suite_decorr(seed)
        for c in res:
            out(c.line())
        out(f"-- {name}: {sum(c.passed for c in res)}/{len(res)} passed in {time.perf_counter() - t:.1f}s")
        checks += res
    return checks
