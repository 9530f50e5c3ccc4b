"""Layer implementations behind each :class:`~relpv.models.LayerSpec` kind.

Every layer works on batched arrays ``(N, ...)`` and exposes

* ``init(in_shapes, rng, dtype) -> {name: array}`` for its trainable arrays,
* ``forward(inputs, params, state, training) -> (out, cache)``,
* ``backward(grad, cache, params) -> ([grad per input], {name: grad})``.
"""
import numpy as np

from . import tensor as T
from .basis import NUM_CHANNELS, build_basis
from .block import RelpvBlockParams, relpv_backward, relpv_forward
from .conv3d import Conv3dParams, conv3d_backward, conv3d_forward
from .errors import ParameterError
from .init import orthogonal_init
from .models import pool_window


class Layer:
    def __init__(self, spec):
        self.spec = spec

    def init(self, in_shapes, rng, dtype):
        return {}

    def init_state(self, in_shapes, dtype):
        return {}

    def forward(self, inputs, params, state, training):
        raise NotImplementedError

    def backward(self, grad, cache, params):
        raise NotImplementedError


class Relpv(Layer):
    def init(self, in_shapes, rng, dtype):
        c, f = in_shapes[0][0], self.spec["f"]
        return {"w1": orthogonal_init((1, c), rng, dtype=dtype), "b1": np.zeros(1, dtype),
                "w4": orthogonal_init((f, NUM_CHANNELS), rng, dtype=dtype), "b4": np.zeros(f, dtype)}

    def _block(self, params):
        s = self.spec
        return RelpvBlockParams(s["n"], s["f"], params["w1"], params["b1"], params["w4"],
                                params["b4"], s.get("stride", 1), s.get("padding", "same"),
                                build_basis(s["n"]))

    def forward(self, inputs, params, state, training):
        return relpv_forward(inputs[0], self._block(params))

    def backward(self, grad, cache, params):
        gx, grads = relpv_backward(grad, cache)
        return [gx], grads


class Conv3d(Layer):
    def init(self, in_shapes, rng, dtype):
        c, n, f = in_shapes[0][0], self.spec["n"], self.spec["f"]
        return {"w": orthogonal_init((f, c, n, n, n), rng, dtype=dtype), "b": np.zeros(f, dtype)}

    def forward(self, inputs, params, state, training):
        p = Conv3dParams(params["w"], params["b"], self.spec.get("stride", 1),
                         self.spec.get("padding", "same"))
        return conv3d_forward(inputs[0], p)

    def backward(self, grad, cache, params):
        gx, gw, gb = conv3d_backward(grad, cache)
        return [gx], {"w": gw, "b": gb}


class Pool(Layer):
    def __init__(self, spec, rounding):
        super().__init__(spec)
        self.kind = "max" if spec.kind == "maxpool" else "avg"
        self.rounding = rounding

    def forward(self, inputs, params, state, training):
        size = pool_window(self.spec["size"])
        stride = pool_window(self.spec.get("stride", self.spec["size"]))
        return T.pool3d_forward(inputs[0], self.kind, size, stride, self.rounding)

    def backward(self, grad, cache, params):
        return [T.pool3d_backward(grad, cache)], {}


class Dense(Layer):
    def init(self, in_shapes, rng, dtype):
        units = self.spec["units"]
        return {"w": orthogonal_init((units, in_shapes[0][0]), rng, dtype=dtype),
                "b": np.zeros(units, dtype)}

    def forward(self, inputs, params, state, training):
        x = inputs[0]
        return x @ params["w"].T + params["b"], x

    def backward(self, grad, cache, params):
        return [grad @ params["w"]], {"w": grad.T @ cache, "b": grad.sum(axis=0)}


class Relu(Layer):
    def forward(self, inputs, params, state, training):
        mask = inputs[0] > 0
        return np.where(mask, inputs[0], 0).astype(inputs[0].dtype, copy=False), mask

    def backward(self, grad, cache, params):
        return [np.where(cache, grad, 0).astype(grad.dtype, copy=False)], {}


class BatchNorm(Layer):
    """Per-channel normalisation over batch and spatial axes.

    Training uses batch statistics and updates running estimates
    (``running = momentum * running + (1 - momentum) * batch``); evaluation
    uses the running estimates.
    """
    eps = 1e-5
    momentum = 0.9

    def init(self, in_shapes, rng, dtype):
        c = in_shapes[0][0]
        return {"gamma": np.ones(c, dtype), "beta": np.zeros(c, dtype)}

    def init_state(self, in_shapes, dtype):
        c = in_shapes[0][0]
        return {"mean": np.zeros(c, dtype), "var": np.ones(c, dtype)}

    def forward(self, inputs, params, state, training):
        x = inputs[0]
        axes = (0, 2, 3, 4)
        bshape = (1, -1, 1, 1, 1)
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            state["mean"] = (m * state["mean"] + (1 - m) * mean).astype(x.dtype)
            state["var"] = (m * state["var"] + (1 - m) * var).astype(x.dtype)
        else:
            mean, var = state["mean"], state["var"]
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(bshape)) * inv.reshape(bshape)
        out = params["gamma"].reshape(bshape) * xhat + params["beta"].reshape(bshape)
        return out.astype(x.dtype, copy=False), (xhat, inv, training)

    def backward(self, grad, cache, params):
        xhat, inv, training = cache
        axes = (0, 2, 3, 4)
        bshape = (1, -1, 1, 1, 1)
        ggamma = (grad * xhat).sum(axis=axes)
        gbeta = grad.sum(axis=axes)
        gxhat = grad * params["gamma"].reshape(bshape)
        if training:
            m = grad.size // grad.shape[1]
            gx = (inv.reshape(bshape) / m) * (
                m * gxhat - gxhat.sum(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True))
        else:
            gx = gxhat * inv.reshape(bshape)
        return [gx.astype(grad.dtype, copy=False)], {"gamma": ggamma, "beta": gbeta}


class Flatten(Layer):
    def forward(self, inputs, params, state, training):
        x = inputs[0]
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad, cache, params):
        return [grad.reshape(cache)], {}


class Concat(Layer):
    def forward(self, inputs, params, state, training):
        return T.concat_channels(inputs), [t.shape[1] for t in inputs]

    def backward(self, grad, cache, params):
        cuts = np.cumsum(cache)[:-1]
        return list(np.split(grad, cuts, axis=1)), {}


class SkipAdd(Layer):
    def forward(self, inputs, params, state, training):
        return T.add(inputs[0], inputs[1]), None

    def backward(self, grad, cache, params):
        return [grad, grad], {}


class Identity(Layer):
    """``softmax`` marks the logits; probabilities are produced at prediction time."""

    def forward(self, inputs, params, state, training):
        return inputs[0], None

    def backward(self, grad, cache, params):
        return [grad], {}


_SIMPLE = {"relpv": Relpv, "conv3d": Conv3d, "fc": Dense, "relu": Relu, "batchnorm": BatchNorm,
           "flatten": Flatten, "concat": Concat, "skip_add": SkipAdd, "softmax": Identity}


def make_layer(spec, rounding):
    if spec.kind in ("maxpool", "avgpool"):
        return Pool(spec, rounding)
    try:
        return _SIMPLE[spec.kind](spec)
    except KeyError:
        raise ParameterError(f"no implementation for layer kind {spec.kind!r}") from None
