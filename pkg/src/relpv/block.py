"""The ReLPV block: 1x1x1 collapse, local 3D STFT, ReLU, 1x1x1 recombination.

Layer 2 (the STFT) has two interchangeable routes:

* ``direct`` gathers the zero-padded ``n**3`` neighbourhood of every output
  position into a column and multiplies by the basis matrix ``W``;
* ``separable`` runs, per frequency, three cascaded complex 1-D passes
  (depth, height, width) with the per-axis factors.

Both evaluate ``F(v, x) = sum_y f(x - y) exp(-2j*pi v.y)``.  Because the
neighbourhood entry for offset ``y`` is ``f(x - y)``, each 1-D pass is a true
convolution with the factor, i.e. a cross-correlation with the reversed factor.

Both routes (and their adjoints) accumulate in float64 and cast back to the
input dtype: a float32 sum over ``n**3`` samples is ulp-limited near ``n**3``,
which would break the zero response to constant windows for n >= 5.
"""
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .basis import NUM_CHANNELS, NUM_FREQUENCIES, build_basis, window_offsets
from .errors import DimensionError
from .init import orthogonal_init

AXIS_ORDER = ("depth", "height", "width")


def _check_single_channel(fmap):
    fmap = np.asarray(fmap)
    if fmap.ndim < 4 or fmap.shape[-4] != 1:
        raise DimensionError(f"STFT layer expects a single-channel map (..., 1, d, h, w), got {fmap.shape}")
    return fmap


def stft_output_shape(spatial, n, stride=1, padding="same"):
    return tuple(T.output_extent(L, n, stride, padding) for L in spatial)


def _window_slices(n, spatial, stride, padding):
    """Per-offset slices of the padded map, yielding f(x - y) at every output x."""
    r = n // 2
    outs = stft_output_shape(spatial, n, stride, padding)
    pad = r if padding == "same" else 0
    # padded index of x - y is x + pad - y, and x = i*stride (+ r when valid)
    base = r
    slices = []
    for y in window_offsets(n):
        slices.append(tuple(slice(base - ya, base - ya + (o - 1) * stride + 1, stride)
                            for ya, o in zip(y, outs)))
    return slices, pad, outs


def gather_neighborhoods(fmap, n, stride=1, padding="same"):
    """Columns ``f_x`` (length ``n**3``, offset order of ``W``) at every output position."""
    fmap = _check_single_channel(fmap)
    x = fmap[..., 0, :, :, :]
    slices, pad, _ = _window_slices(n, x.shape[-3:], stride, padding)
    xp = np.pad(x, [(0, 0)] * (x.ndim - 3) + [(pad, pad)] * 3)
    return np.stack([xp[(Ellipsis,) + s] for s in slices], axis=-4)


def _wide(a):
    a = np.asarray(a)
    return a.astype(np.promote_types(a.dtype, np.float64), copy=False)


def layer2_stft_direct(fmap, basis, stride=1, padding="same"):
    dtype = np.asarray(fmap).dtype
    patches = gather_neighborhoods(_wide(fmap), basis.n, stride, padding)
    return T.pointwise_conv(patches, basis.W).astype(dtype, copy=False)


def layer2_stft_direct_adjoint(grad, basis, spatial, stride=1, padding="same"):
    """Transpose of :func:`layer2_stft_direct`; returns ``(..., 1, d, h, w)``."""
    dtype = np.asarray(grad).dtype
    grad = _wide(grad)
    gp = T.pointwise_conv(grad, basis.W.T)
    slices, pad, outs = _window_slices(basis.n, spatial, stride, padding)
    if gp.shape[-3:] != outs:
        raise DimensionError(f"gradient spatial shape {gp.shape[-3:]} != expected {outs}")
    lead = gp.shape[:-4]
    buf = np.zeros(lead + tuple(L + 2 * pad for L in spatial), dtype=grad.dtype)
    for k, s in enumerate(slices):
        buf[(Ellipsis,) + s] += gp[..., k, :, :, :]
    if pad:
        buf = buf[..., pad:-pad, pad:-pad, pad:-pad]
    return buf[..., None, :, :, :].astype(dtype, copy=False)


def _correlation_kernel(factor, dtype):
    k = factor[::-1]
    if np.all(k.imag == 0):
        return k.real.astype(dtype)
    return k.astype(np.result_type(dtype, np.complex64))


def _axis_kernels(basis, dtype):
    """For each frequency, its three correlation kernels plus hashable keys."""
    kernels = []
    for i in range(NUM_FREQUENCIES):
        ks = [_correlation_kernel(basis.sep_factors[i, a], dtype) for a in range(3)]
        keys = [ks[a].tobytes() + str(ks[a].dtype).encode() for a in range(3)]
        kernels.append((ks, keys))
    return kernels


def layer2_stft_separable(fmap, basis, stride=1, padding="same"):
    """Separable evaluation of Layer 2; axis-prefix results are shared across frequencies."""
    fmap = _check_single_channel(fmap)
    dtype = fmap.dtype
    x = _wide(fmap[..., 0, :, :, :])
    memo = {(): x}
    out = []
    for ks, keys in _axis_kernels(basis, x.dtype):
        for depth in range(1, 4):
            prefix = tuple(keys[:depth])
            if prefix not in memo:
                a = depth - 1
                memo[prefix] = T.conv1d_axis(memo[tuple(keys[:a])], ks[a], AXIS_ORDER[a],
                                             stride, padding)
        z = memo[tuple(keys)]
        out.append(np.real(z))
        out.append(np.imag(z) if np.iscomplexobj(z) else np.zeros_like(z))
    return np.stack(out, axis=-4).astype(dtype, copy=False)


def layer2_stft_separable_adjoint(grad, basis, spatial, stride=1, padding="same"):
    """Hermitian-adjoint cascade of :func:`layer2_stft_separable`, real part taken."""
    grad = np.asarray(grad)
    if grad.shape[-4] != NUM_CHANNELS:
        raise DimensionError(f"expected {NUM_CHANNELS} gradient channels, got {grad.shape}")
    dtype = grad.dtype
    grad = _wide(grad)
    kernels = _axis_kernels(basis, grad.dtype)
    # seed the width-level accumulators with each frequency's complex gradient
    acc = {}
    for i, (ks, keys) in enumerate(kernels):
        g = grad[..., 2 * i, :, :, :] + 1j * grad[..., 2 * i + 1, :, :, :]
        key = tuple(keys)
        acc[key] = acc.get(key, 0) + g
    kmap = {}
    for ks, keys in kernels:
        for a in range(3):
            kmap[tuple(keys[:a + 1])] = ks[a]
    for depth in (3, 2, 1):
        a = depth - 1
        nxt = {}
        for prefix, g in acc.items():
            k = kmap[prefix]
            up = T.conv1d_axis_adjoint(g, np.conj(k), AXIS_ORDER[a], spatial[a], stride, padding)
            parent = prefix[:-1]
            nxt[parent] = nxt.get(parent, 0) + up
        acc = nxt
    gx = np.real(acc[()]).astype(dtype, copy=False)
    return gx[..., None, :, :, :]


LAYER2 = {
    "separable": (layer2_stft_separable, layer2_stft_separable_adjoint),
    "direct": (layer2_stft_direct, layer2_stft_direct_adjoint),
}


@dataclass
class RelpvBlockParams:
    """Trainable arrays of Layers 1 and 4 plus the fixed basis."""
    n: int
    f: int
    w1: np.ndarray       # (1, c)
    b1: np.ndarray       # (1,)
    w4: np.ndarray       # (f, 26)
    b4: np.ndarray       # (f,)
    stride: int = 1
    padding: str = "same"
    basis: object = None

    def __post_init__(self):
        if self.basis is None:
            self.basis = build_basis(self.n)
        if self.basis.n != self.n:
            raise DimensionError(f"basis window {self.basis.n} != block window {self.n}")
        if self.w1.shape[0] != 1 or self.w4.shape != (self.f, NUM_CHANNELS):
            raise DimensionError(f"bad weight shapes w1={self.w1.shape} w4={self.w4.shape}")

    @property
    def in_channels(self):
        return self.w1.shape[1]

    @classmethod
    def init(cls, c, n, f, stride=1, padding="same", seed=0, dtype=np.float64):
        rng = np.random.default_rng(seed)
        w1 = orthogonal_init((1, c), rng).astype(dtype)
        w4 = orthogonal_init((f, NUM_CHANNELS), rng).astype(dtype)
        return cls(n, f, w1, np.zeros(1, dtype), w4, np.zeros(f, dtype), stride, padding)

    def trainable(self):
        return {"w1": self.w1, "b1": self.b1, "w4": self.w4, "b4": self.b4}


def relpv_forward(x, params, method="separable"):
    """Forward pass of a ReLPV block; returns ``(output, cache)``."""
    x = np.asarray(x)
    if x.ndim < 4 or x.shape[-4] != params.in_channels:
        raise DimensionError(f"input {x.shape} does not have {params.in_channels} channels")
    stft, _ = LAYER2[method]
    dtype = x.dtype
    h1 = T.pointwise_conv(x, params.w1.astype(dtype, copy=False), params.b1.astype(dtype, copy=False))
    s = stft(h1, params.basis, params.stride, params.padding)
    mask = s > 0
    a = np.where(mask, s, 0).astype(dtype, copy=False)
    out = T.pointwise_conv(a, params.w4.astype(dtype, copy=False), params.b4.astype(dtype, copy=False))
    cache = {"x": x, "a": a, "mask": mask, "params": params, "method": method}
    return out, cache


def relpv_backward(grad_out, cache):
    """Reverse pass; returns ``(grad_input, {"w1", "b1", "w4", "b4"})``."""
    p = cache["params"]
    a, x = cache["a"], cache["x"]
    if grad_out.shape[:-4] != a.shape[:-4] or grad_out.shape[-3:] != a.shape[-3:] \
            or grad_out.shape[-4] != p.f:
        raise DimensionError(f"grad_out {grad_out.shape} inconsistent with output {a.shape[:-4] + (p.f,) + a.shape[-3:]}")
    dtype = x.dtype
    _, adjoint = LAYER2[cache["method"]]
    ga, gw4, gb4 = T.pointwise_conv_backward(grad_out, a, p.w4.astype(dtype, copy=False))
    gs = np.where(cache["mask"], ga, 0).astype(dtype, copy=False)
    gh1 = adjoint(gs, p.basis, x.shape[-3:], p.stride, p.padding)
    gx, gw1, gb1 = T.pointwise_conv_backward(gh1, x, p.w1.astype(dtype, copy=False))
    return gx, {"w1": gw1, "b1": gb1, "w4": gw4, "b4": gb4}


def relpv_param_count(c, f, with_bias=False):
    """Trainable parameters of ReLPV(n, f) on ``c`` input channels (independent of ``n``)."""
    count = c * 1 + NUM_CHANNELS * f
    if with_bias:
        count += 1 + f
    return count
