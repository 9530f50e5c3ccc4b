"""Reference standard 3D convolution (cross-correlation), forward and backward.

Two forward routes exist: a neighbourhood-gather ("im2col") route used for
training, and a direct loop over kernel offsets kept as an oracle.
"""
import itertools
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, ParameterError
from .init import orthogonal_init

# gather buffers above this many elements are built one sample at a time
_GATHER_LIMIT = 1 << 25


@dataclass
class Conv3dParams:
    weights: np.ndarray          # (c_out, c_in, n, n, n)
    bias: np.ndarray             # (c_out,)
    stride: int = 1
    padding: str = "same"

    def __post_init__(self):
        w = self.weights
        if w.ndim != 5 or not (w.shape[2] == w.shape[3] == w.shape[4]):
            raise DimensionError(f"weights must be (c_out, c_in, n, n, n), got {w.shape}")
        if w.shape[2] % 2 == 0:
            raise ParameterError(f"kernel size must be odd, got {w.shape[2]}")
        if self.bias.shape != (w.shape[0],):
            raise DimensionError(f"bias {self.bias.shape} does not match {w.shape[0]} filters")

    @property
    def n(self):
        return self.weights.shape[2]

    @property
    def c_in(self):
        return self.weights.shape[1]

    @property
    def c_out(self):
        return self.weights.shape[0]

    @classmethod
    def init(cls, c_in, n, c_out, stride=1, padding="same", seed=0, dtype=np.float64):
        w = orthogonal_init((c_out, c_in, n, n, n), seed).astype(dtype)
        return cls(w, np.zeros(c_out, dtype), stride, padding)

    def trainable(self):
        return {"w": self.weights, "b": self.bias}


def conv3d_param_count(c_in, n, c_out, with_bias=False):
    return c_in * n ** 3 * c_out + (c_out if with_bias else 0)


def _geometry(spatial, n, stride, padding):
    outs = tuple(T.output_extent(L, n, stride, padding) for L in spatial)
    pad = n // 2 if padding == "same" else 0
    return outs, pad


def _gather(xp, n, outs, stride):
    """(N, c, *padded) -> (N, c * n^3, prod(outs)) with kernel offsets fastest after channel."""
    spans = [(o - 1) * stride + 1 for o in outs]
    cols = np.stack([xp[:, :, a:a + spans[0]:stride, b:b + spans[1]:stride, c:c + spans[2]:stride]
                     for a, b, c in itertools.product(range(n), repeat=3)], axis=2)
    return cols.reshape(xp.shape[0], xp.shape[1] * n ** 3, -1)


def _scatter(cols, pad_shape, n, outs, stride):
    nb, c = pad_shape[:2]
    cols = cols.reshape((nb, c, n ** 3) + outs)
    spans = [(o - 1) * stride + 1 for o in outs]
    buf = np.zeros(pad_shape, dtype=cols.dtype)
    for k, (a, b, cc) in enumerate(itertools.product(range(n), repeat=3)):
        buf[:, :, a:a + spans[0]:stride, b:b + spans[1]:stride, cc:cc + spans[2]:stride] += cols[:, :, k]
    return buf


def _batched(x):
    x = np.asarray(x)
    if x.ndim == 4:
        return x[None], True
    if x.ndim != 5:
        raise DimensionError(f"expected (c, d, h, w) or (N, c, d, h, w), got {x.shape}")
    return x, False


def _chunks(nb, per_sample):
    step = max(1, _GATHER_LIMIT // max(1, per_sample))
    return [slice(i, min(nb, i + step)) for i in range(0, nb, step)]


def conv3d_forward(x, params):
    """Gather-based forward; returns ``(output, cache)``."""
    xb, single = _batched(x)
    if xb.shape[1] != params.c_in:
        raise DimensionError(f"input has {xb.shape[1]} channels, layer expects {params.c_in}")
    n, s = params.n, params.stride
    outs, pad = _geometry(xb.shape[2:], n, s, params.padding)
    xp = np.pad(xb, [(0, 0), (0, 0)] + [(pad, pad)] * 3) if pad else xb
    wmat = params.weights.reshape(params.c_out, -1).astype(xb.dtype, copy=False)
    size = int(np.prod(outs))
    out = np.empty((xb.shape[0], params.c_out, size), dtype=xb.dtype)
    for sl in _chunks(xb.shape[0], wmat.shape[1] * size):
        out[sl] = np.matmul(wmat, _gather(xp[sl], n, outs, s))
    out += params.bias.astype(xb.dtype, copy=False)[:, None]
    out = out.reshape((xb.shape[0], params.c_out) + outs)
    cache = {"xp": xp, "outs": outs, "pad": pad, "params": params, "single": single,
             "in_shape": xb.shape}
    return (out[0] if single else out), cache


def conv3d_backward(grad_out, cache):
    """Returns ``(grad_input, grad_weights, grad_bias)``."""
    p = cache["params"]
    xp, outs, pad = cache["xp"], cache["outs"], cache["pad"]
    g, _ = _batched(grad_out)
    if g.shape != (xp.shape[0], p.c_out) + outs:
        raise DimensionError(f"grad_out {grad_out.shape} does not match output {(p.c_out,) + outs}")
    n, s = p.n, p.stride
    wmat = p.weights.reshape(p.c_out, -1).astype(g.dtype, copy=False)
    gflat = g.reshape(g.shape[0], p.c_out, -1)
    grad_w = np.zeros_like(wmat)
    gxp = np.empty(xp.shape, dtype=g.dtype)
    for sl in _chunks(xp.shape[0], wmat.shape[1] * gflat.shape[2]):
        cols = _gather(xp[sl], n, outs, s)
        grad_w += np.matmul(gflat[sl], np.swapaxes(cols, 1, 2)).sum(axis=0)
        gxp[sl] = _scatter(np.matmul(wmat.T, gflat[sl]), xp[sl].shape, n, outs, s)
    grad_b = gflat.sum(axis=(0, 2))
    d, h, w = cache["in_shape"][2:]
    grad_x = gxp[:, :, pad:pad + d, pad:pad + h, pad:pad + w]
    if cache["single"]:
        grad_x = grad_x[0]
    return grad_x, grad_w.reshape(p.weights.shape), grad_b


def conv3d_forward_direct(x, params):
    """Oracle: accumulate one kernel offset at a time (no gather buffer)."""
    xb, single = _batched(x)
    n, s = params.n, params.stride
    outs, pad = _geometry(xb.shape[2:], n, s, params.padding)
    xp = np.pad(xb, [(0, 0), (0, 0)] + [(pad, pad)] * 3)
    spans = [(o - 1) * s + 1 for o in outs]
    out = np.zeros((xb.shape[0], params.c_out) + outs, dtype=np.result_type(xb, params.weights))
    for a, b, c in itertools.product(range(n), repeat=3):
        window = xp[:, :, a:a + spans[0]:s, b:b + spans[1]:s, c:c + spans[2]:s]
        out += np.einsum("fc,ncdhw->nfdhw", params.weights[:, :, a, b, c], window)
    out += params.bias[:, None, None, None]
    return out[0] if single else out
