"""Tape-based reverse-mode differentiation over a :class:`ModelSpec` graph."""
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DimensionError, NumericError
from .layers import make_layer
from .models import infer_shapes


@dataclass
class TapeEntry:
    layer_id: int
    inputs: tuple
    cache: object


@dataclass
class Tape:
    """Forward records in execution (topological) order."""
    entries: list = field(default_factory=list)

    def record(self, layer_id, inputs, cache):
        self.entries.append(TapeEntry(layer_id, tuple(inputs), cache))

    def backward(self, network, seeds):
        """Propagate ``seeds`` ({id: grad}) back to the input.

        Returns ``(grad_input, param_grads)``.  Gradients reaching a node from
        several consumers are summed before that node is processed.
        """
        pending = dict(seeds)
        grads = {}
        for entry in reversed(self.entries):
            g = pending.pop(entry.layer_id, None)
            if g is None:
                continue
            layer = network.layers[entry.layer_id]
            params = network.layer_params(entry.layer_id)
            in_grads, p_grads = layer.backward(g, entry.cache, params)
            for src, gi in zip(entry.inputs, in_grads):
                pending[src] = gi if src not in pending else pending[src] + gi
            for name, gp in p_grads.items():
                grads[network.param_name(entry.layer_id, name)] = gp
        return pending.get(0), grads


class Network:
    """Trainable instance of a :class:`ModelSpec`.

    ``params`` maps ``"L<id>.<name>"`` to trainable arrays; ``state`` holds
    non-trainable buffers (batch-norm running statistics).  The STFT basis
    is a module-level constant and is never stored here.
    """

    def __init__(self, spec, seed=0, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.shapes = infer_shapes(spec)
        self.layers = {ls.id: make_layer(ls, spec.pool_rounding) for ls in spec.layers}
        rng = np.random.default_rng(seed)
        self.params = {}
        self.state = {}
        for ls in spec.layers:
            in_shapes = [self.shapes[i] for i in ls.inputs]
            for name, arr in self.layers[ls.id].init(in_shapes, rng, self.dtype).items():
                self.params[self.param_name(ls.id, name)] = arr
            st = self.layers[ls.id].init_state(in_shapes, self.dtype)
            if st:
                self.state[ls.id] = st

    @staticmethod
    def param_name(layer_id, name):
        return f"L{layer_id}.{name}"

    def layer_params(self, layer_id):
        prefix = f"L{layer_id}."
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def num_params(self):
        return sum(int(p.size) for p in self.params.values())

    def forward(self, x, training=False, tape=None, upto=None):
        """Run the graph up to layer ``upto`` (default: logits)."""
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != tuple(self.spec.input_shape):
            raise DimensionError(f"batch shape {x.shape} does not match model input "
                                 f"(N,)+{tuple(self.spec.input_shape)}")
        stop = self.spec.logits_id() if upto is None else upto
        values = {0: x}
        for ls in self.spec.layers:
            inputs = [values[i] for i in ls.inputs]
            out, cache = self.layers[ls.id].forward(inputs, self.layer_params(ls.id),
                                                    self.state.get(ls.id), training)
            values[ls.id] = out
            if tape is not None:
                tape.record(ls.id, ls.inputs, cache)
            if ls.id == stop:
                break
        return values[stop]

    def predict(self, x):
        return T.softmax(self.forward(x))

    def forward_backward(self, x, labels, training=True):
        """Loss and parameter gradients for one batch."""
        loss, grads, _ = self.loss_grads_logits(x, labels, training)
        return loss, grads

    def loss_grads_logits(self, x, labels, training=True):
        tape = Tape()
        logits = self.forward(x, training=training, tape=tape)
        loss, g = T.softmax_crossentropy(logits, labels)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite loss {loss} (max |logit| = {np.abs(logits).max():.3g})")
        _, grads = tape.backward(self, {self.spec.logits_id(): g.astype(self.dtype)})
        for name in self.params:
            if name not in grads:
                grads[name] = np.zeros_like(self.params[name])
        return loss, grads, logits


def forward_backward(network, x, labels):
    return network.forward_backward(x, labels)
