"""Dense tensor primitives.

Feature maps are plain numpy arrays laid out as ``(c, d, h, w)``, optionally
with leading batch dimensions, e.g. ``(N, c, d, h, w)``.  Every operation
here is a pure function of its arguments; backward helpers take whatever the
matching forward returned as its cache.

Convolution means cross-correlation throughout (no kernel flip).
"""
import itertools
import struct

import numpy as np
from scipy import ndimage

from .errors import DimensionError, FormatError, ParameterError

AXES = {"depth": -3, "height": -2, "width": -1}
PADDINGS = ("same", "valid")

DTYPES = (np.dtype("<f4"), np.dtype("<f8"))


def _axis(axis):
    if isinstance(axis, str):
        try:
            return AXES[axis]
        except KeyError:
            raise ParameterError(f"unknown axis {axis!r}") from None
    if axis not in (-3, -2, -1):
        raise ParameterError(f"axis must be one of {sorted(AXES)} or -3..-1, got {axis}")
    return axis


def output_extent(extent, n, stride=1, padding="same"):
    """Number of output samples along one axis of a sliding window."""
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    if padding == "same":
        return -(-extent // stride)
    if padding == "valid":
        if n > extent:
            raise DimensionError(f"window of {n} exceeds axis extent {extent} under valid padding")
        return (extent - n) // stride + 1
    raise ParameterError(f"padding must be one of {PADDINGS}, got {padding!r}")


def _split_complex(fn, x, kernel):
    """Apply the real bilinear ``fn(x, kernel)`` to complex operands part by part."""
    xs = (x.real, x.imag) if np.iscomplexobj(x) else (x, None)
    ks = (kernel.real, kernel.imag) if np.iscomplexobj(kernel) else (kernel, None)
    if xs[1] is None and ks[1] is None:
        return fn(x, kernel)
    if xs[1] is None:
        return fn(x, ks[0]) + 1j * fn(x, ks[1])
    if ks[1] is None:
        return fn(xs[0], kernel) + 1j * fn(xs[1], kernel)
    re = fn(xs[0], ks[0]) - fn(xs[1], ks[1])
    return re + 1j * (fn(xs[0], ks[1]) + fn(xs[1], ks[0]))


def conv1d_axis(x, kernel, axis, stride=1, padding="same"):
    """Cross-correlate every 1-D fiber of ``x`` along ``axis`` with ``kernel``.

    ``same`` zero-pads ``len(kernel) // 2`` samples on each side before
    striding, so output position ``i`` is centred on input sample
    ``i * stride``.  ``valid`` uses only full windows.  Complex kernels are
    allowed and promote the result.
    """
    kernel = np.asarray(kernel)
    if kernel.ndim != 1 or kernel.shape[0] % 2 == 0:
        raise ParameterError(f"kernel must be 1-D with odd length, got shape {kernel.shape}")
    ax = _axis(axis)
    x = np.asarray(x)
    n, extent = kernel.shape[0], x.shape[ax]
    out_len = output_extent(extent, n, stride, padding)
    start = 0 if padding == "same" else n // 2
    keep = [slice(None)] * x.ndim
    keep[ax] = slice(start, start + (out_len - 1) * stride + 1, stride)

    def real(a, k):
        dtype = np.result_type(a, k)
        return ndimage.correlate1d(a, k, axis=ax, output=dtype, mode="constant")[tuple(keep)]

    return _split_complex(real, x, kernel)


def conv1d_axis_adjoint(grad, kernel, axis, extent, stride=1, padding="same"):
    """Transpose of :func:`conv1d_axis` (scatter of ``grad`` through ``kernel``).

    ``extent`` is the input length along ``axis``.  For a complex forward
    kernel pass ``kernel.conj()`` to obtain the Hermitian adjoint.
    """
    kernel = np.asarray(kernel)
    n = kernel.shape[0]
    ax = _axis(axis)
    grad = np.asarray(grad)
    out_len = grad.shape[ax]
    if out_len != output_extent(extent, n, stride, padding):
        raise DimensionError(f"gradient extent {out_len} inconsistent with input extent {extent}")
    start = 0 if padding == "same" else n // 2
    place = [slice(None)] * grad.ndim
    place[ax] = slice(start, start + (out_len - 1) * stride + 1, stride)
    shape = list(grad.shape)
    shape[ax] = extent

    def real(g, k):
        # zero-upsample onto the input grid, then convolve (flipped correlation)
        dtype = np.result_type(g, k)
        up = np.zeros(shape, dtype=dtype)
        up[tuple(place)] = g
        return ndimage.convolve1d(up, k, axis=ax, output=dtype, mode="constant")

    return _split_complex(real, grad, kernel)


def pointwise_conv(x, weights, bias=None):
    """1x1x1 convolution: mix channels independently at every position.

    ``x`` is ``(..., c, d, h, w)`` and ``weights`` is ``(f, c)``; the result is
    ``(..., f, d, h, w)``.
    """
    x = np.asarray(x)
    weights = np.asarray(weights)
    if x.ndim < 4:
        raise DimensionError(f"expected (..., c, d, h, w), got shape {x.shape}")
    if weights.ndim != 2 or weights.shape[1] != x.shape[-4]:
        raise DimensionError(
            f"weights {weights.shape} do not match {x.shape[-4]} input channels")
    lead, spatial = x.shape[:-4], x.shape[-3:]
    out = np.matmul(weights, x.reshape(lead + (x.shape[-4], -1)))
    if bias is not None:
        out = out + np.asarray(bias)[:, None]
    return out.reshape(lead + (weights.shape[0],) + spatial)


def pointwise_conv_backward(grad, x, weights):
    """Gradients of :func:`pointwise_conv` w.r.t. input, weights and bias."""
    lead = x.shape[:-4]
    g = grad.reshape(lead + (grad.shape[-4], -1))
    xr = x.reshape(lead + (x.shape[-4], -1))
    grad_x = np.matmul(weights.T, g).reshape(x.shape)
    gw = np.matmul(g, np.swapaxes(xr, -1, -2))
    grad_w = gw.reshape(-1, *weights.shape).sum(axis=0)
    grad_b = g.reshape(-1, g.shape[-2], g.shape[-1]).sum(axis=(0, 2))
    return grad_x, grad_w, grad_b


def relu(x):
    return np.maximum(x, 0)


def _triple(v, name):
    if np.isscalar(v):
        v = (int(v),) * 3
    v = tuple(int(a) for a in v)
    if len(v) != 3 or min(v) < 1:
        raise ParameterError(f"{name} must be a positive int or a triple, got {v}")
    return v


def _pool_extent(length, k, s, rounding):
    if rounding == "floor":
        out = (length - k) // s + 1
    elif rounding == "ceil":
        out = -(-(length - k) // s) + 1
        # last window must start inside the input
        if (out - 1) * s >= length:
            out -= 1
    else:
        raise ParameterError(f"rounding must be 'floor' or 'ceil', got {rounding!r}")
    if out < 1:
        raise DimensionError(f"pool window {k} does not fit extent {length}")
    return out


def pool3d_forward(x, kind="max", size=2, stride=None, rounding="floor"):
    """Max/average pooling over the trailing three axes.

    Returns ``(out, cache)``.  Under ``ceil`` rounding partial windows are
    padded with -inf for max pooling; average pooling divides by the number
    of real cells in each window.
    """
    if kind not in ("max", "avg"):
        raise ParameterError(f"kind must be 'max' or 'avg', got {kind!r}")
    size = _triple(size, "size")
    stride = size if stride is None else _triple(stride, "stride")
    x = np.asarray(x)
    spatial = x.shape[-3:]
    outs = tuple(_pool_extent(L, k, s, rounding) for L, k, s in zip(spatial, size, stride))
    pads = [(0, max(0, (o - 1) * s + k - L)) for o, s, k, L in zip(outs, stride, size, spatial)]
    lead_pad = [(0, 0)] * (x.ndim - 3)
    fill = -np.inf if kind == "max" else 0.0
    xp = np.pad(x, lead_pad + pads, constant_values=fill)
    spans = [(o - 1) * s + 1 for o, s in zip(outs, stride)]
    sd, sh, sw = stride
    offsets = list(itertools.product(*(range(k) for k in size)))
    stack = np.stack([xp[..., a:a + spans[0]:sd, b:b + spans[1]:sh, c:c + spans[2]:sw]
                      for a, b, c in offsets])
    cache = {"kind": kind, "size": size, "stride": stride, "in_shape": x.shape,
             "pad_shape": xp.shape, "spans": spans, "offsets": offsets}
    if kind == "max":
        idx = np.argmax(stack, axis=0)
        out = np.take_along_axis(stack, idx[None], axis=0)[0]
        cache["argmax"] = idx
    else:
        ones = np.pad(np.ones(spatial), pads)
        counts = np.stack([ones[a:a + spans[0]:sd, b:b + spans[1]:sh, c:c + spans[2]:sw]
                           for a, b, c in offsets]).sum(axis=0)
        out = stack.sum(axis=0) / counts
        cache["counts"] = counts
    return out.astype(x.dtype, copy=False), cache


def pool3d(x, kind="max", size=2, stride=None, rounding="floor"):
    return pool3d_forward(x, kind, size, stride, rounding)[0]


def pool3d_backward(grad, cache):
    spans = cache["spans"]
    sd, sh, sw = cache["stride"]
    gx = np.zeros(cache["pad_shape"], dtype=grad.dtype)
    if cache["kind"] == "avg":
        share = grad / cache["counts"]
    for k, (a, b, c) in enumerate(cache["offsets"]):
        view = gx[..., a:a + spans[0]:sd, b:b + spans[1]:sh, c:c + spans[2]:sw]
        if cache["kind"] == "max":
            view += np.where(cache["argmax"] == k, grad, 0)
        else:
            view += share
    d, h, w = cache["in_shape"][-3:]
    return gx[..., :d, :h, :w]


def concat_channels(inputs):
    """Stack feature maps along the channel axis, first input first."""
    inputs = [np.asarray(t) for t in inputs]
    if not inputs:
        raise DimensionError("concat_channels needs at least one input")
    ref = inputs[0].shape
    for t in inputs[1:]:
        if t.ndim != len(ref) or t.shape[:-4] != ref[:-4] or t.shape[-3:] != ref[-3:]:
            raise DimensionError(f"cannot concatenate {t.shape} with {ref}")
    return np.concatenate(inputs, axis=-4)


def add(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}")
    return a + b


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_crossentropy(logits, labels):
    """Mean categorical cross-entropy of ``(batch, K)`` logits.

    Returns ``(loss, grad)`` where ``grad`` is the derivative of the mean loss
    with respect to the logits.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise DimensionError(f"logits must be (batch, K>=2), got {logits.shape}")
    batch, k = logits.shape
    if labels.shape != (batch,):
        raise DimensionError(f"expected {batch} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise IndexError(f"labels must lie in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(batch)
    loss = float(np.mean(log_norm - z[rows, labels]))
    grad = np.exp(z - log_norm[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / batch


# -- RTEN binary format ------------------------------------------------------
# "RTEN" | u8 version=1 | u8 dtype (0=f32, 1=f64) | u8 rank | u64 LE extents | LE values

RTEN_MAGIC = b"RTEN"
RTEN_VERSION = 1
_HEADER = struct.Struct("<4sBBB")


def encode_rten(array):
    array = np.asarray(array)
    if array.dtype == np.float32:
        code = 0
    elif array.dtype == np.float64:
        code = 1
    else:
        raise FormatError(f"RTEN stores f32 or f64, not {array.dtype}")
    if array.ndim > 255:
        raise FormatError(f"rank {array.ndim} exceeds RTEN limit of 255")
    head = _HEADER.pack(RTEN_MAGIC, RTEN_VERSION, code, array.ndim)
    dims = struct.pack(f"<{array.ndim}Q", *array.shape)
    body = np.ascontiguousarray(array, dtype=DTYPES[code]).tobytes()
    return head + dims + body


def decode_rten(buf):
    buf = memoryview(buf)
    if len(buf) < _HEADER.size:
        raise FormatError("truncated RTEN header", offset=len(buf))
    magic, version, code, rank = _HEADER.unpack_from(buf, 0)
    if magic != RTEN_MAGIC:
        raise FormatError(f"bad magic {bytes(magic)!r}", offset=0)
    if version != RTEN_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if code >= len(DTYPES):
        raise FormatError(f"unknown dtype code {code}", offset=5)
    pos = _HEADER.size
    if len(buf) < pos + 8 * rank:
        raise FormatError("truncated extents", offset=len(buf))
    shape = struct.unpack_from(f"<{rank}Q", buf, pos)
    pos += 8 * rank
    dtype = DTYPES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(buf) < pos + nbytes:
        raise FormatError(f"expected {nbytes} data bytes, found {len(buf) - pos}", offset=len(buf))
    if len(buf) > pos + nbytes:
        raise FormatError("trailing bytes after data", offset=pos + nbytes)
    data = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos)
    return data.reshape(shape).astype(dtype.newbyteorder("="))
