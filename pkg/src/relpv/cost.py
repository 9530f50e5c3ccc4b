"""Analytic parameter, size and FLOP accounting over a :class:`ModelSpec`.

Two FLOP conventions are available:

``dense``
    One forward pass at the stated input shape.  conv3d: ``2 n^3 c f`` per
    output position; relpv: ``2 c`` per input position (Layer 1) plus
    ``2 * 3n * 26`` (separable STFT) ``+ 26`` (ReLU) ``+ 2 * 26 f`` (Layer 4)
    per output position; fc: ``2 * in * out``; pooling, ReLU and skip
    additions 1 op per input element; batch norm 2 ops per element.

``single_site``
    The same per-position formulas evaluated at a single output site per
    layer (spatial extents taken as 1; fully connected layers unchanged).
    This is the counting under which published mC3D FLOP figures equal twice
    the parameter count.
"""
from dataclasses import dataclass, field
from fractions import Fraction

from .basis import NUM_CHANNELS
from .block import relpv_param_count
from .conv3d import conv3d_param_count
from .models import ModelSpec, infer_shapes, pool_window

CONVENTIONS = {
    "dense": "FLOPs = 2 x MACs over every output position of one forward pass; "
             "relpv = 2c/input pos + (6n*26 + 26 + 52f)/output pos; pool/relu/add 1 op per input element",
    "single_site": "FLOPs = 2 x MACs at one output site per layer (spatial extents = 1); "
                   "fc layers counted in full",
}

_BYTES = {"f32": 4, "f64": 8}


@dataclass
class LayerCost:
    id: int
    kind: str
    describe: str
    out_shape: tuple
    params: int = 0
    flops: int = 0


@dataclass
class CostReport:
    model: str
    input_shape: tuple
    dtype: str = "f32"
    with_bias: bool = False
    convention: str = "dense"
    layers: list = field(default_factory=list)

    @property
    def params(self):
        return sum(row.params for row in self.layers)

    @property
    def flops(self):
        return sum(row.flops for row in self.layers)

    @property
    def size_bytes(self):
        return self.params * _BYTES[self.dtype]

    def header(self):
        return (f"model {self.model}  input {'x'.join(map(str, self.input_shape))}  "
                f"dtype {self.dtype}  bias {'yes' if self.with_bias else 'no'}\n"
                f"convention [{self.convention}]: {CONVENTIONS[self.convention]}")

    def to_text(self):
        lines = [self.header(),
                 f"{'id':>4}  {'layer':<34} {'output':<18} {'params':>12} {'flops':>16}"]
        for row in self.layers:
            shape = "x".join(map(str, row.out_shape))
            lines.append(f"{row.id:>4}  {row.describe:<34} {shape:<18} {row.params:>12,} {row.flops:>16,}")
        lines.append(f"{'':>4}  {'total':<34} {'':<18} {self.params:>12,} {self.flops:>16,}")
        lines.append(f"model size: {self.size_bytes / 2 ** 20:.2f} MiB")
        return "\n".join(lines)

    def to_csv_rows(self):
        rows = [("id", "kind", "layer", "output", "params", "size_bytes", "flops")]
        for row in self.layers:
            rows.append((row.id, row.kind, row.describe, "x".join(map(str, row.out_shape)),
                         row.params, row.params * _BYTES[self.dtype], row.flops))
        rows.append(("total", "", "", "", self.params, self.size_bytes, self.flops))
        return rows


def _layer_params(layer, ins, with_bias):
    kind = layer.kind
    if kind == "conv3d":
        return conv3d_param_count(ins[0][0], layer["n"], layer["f"], with_bias)
    if kind == "relpv":
        return relpv_param_count(ins[0][0], layer["f"], with_bias)
    if kind == "fc":
        return ins[0][0] * layer["units"] + (layer["units"] if with_bias else 0)
    if kind == "batchnorm":
        # scale and shift; running statistics are not trainable
        return 2 * ins[0][0]
    return 0


def _prod(shape):
    out = 1
    for s in shape:
        out *= s
    return out


def _layer_flops(layer, ins, out, single_site):
    kind = layer.kind
    sites = 1 if single_site else _prod(out[1:]) if len(out) == 4 else 1
    in_elems = ins[0][0] if single_site and len(ins[0]) == 4 else _prod(ins[0])
    if kind == "conv3d":
        return 2 * layer["n"] ** 3 * ins[0][0] * layer["f"] * sites
    if kind == "relpv":
        in_sites = 1 if single_site else _prod(ins[0][1:])
        c, n, f = ins[0][0], layer["n"], layer["f"]
        per_site = 2 * 3 * n * NUM_CHANNELS + NUM_CHANNELS + 2 * NUM_CHANNELS * f
        return 2 * c * in_sites + per_site * sites
    if kind == "fc":
        return 2 * ins[0][0] * layer["units"]
    if kind in ("maxpool", "avgpool"):
        # single site: one window per channel
        return _prod(pool_window(layer["size"])) * ins[0][0] if single_site else in_elems
    if kind in ("relu", "skip_add"):
        return in_elems
    if kind == "batchnorm":
        return 2 * in_elems
    return 0


def _report(spec, with_bias, dtype, convention, input_shape):
    if input_shape is not None and tuple(input_shape) != tuple(spec.input_shape):
        spec = ModelSpec(spec.name, tuple(input_shape), spec.layers, spec.pool_rounding,
                         spec.num_classes)
    shapes = infer_shapes(spec)
    report = CostReport(spec.name, tuple(spec.input_shape), dtype, with_bias, convention)
    for layer in spec.layers:
        ins = [shapes[i] for i in layer.inputs]
        report.layers.append(LayerCost(
            layer.id, layer.kind, layer.describe(), shapes[layer.id],
            _layer_params(layer, ins, with_bias),
            _layer_flops(layer, ins, shapes[layer.id], convention == "single_site")))
    return report


def count_params(spec, with_bias=False, dtype="f32"):
    return _report(spec, with_bias, dtype, "dense", None)


def count_flops(spec, input_shape=None, convention="dense", with_bias=False, dtype="f32"):
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {sorted(CONVENTIONS)}, got {convention!r}")
    return _report(spec, with_bias, dtype, convention, input_shape)


def savings_ratio(n, c, f):
    """Standard conv parameters over ReLPV parameters, as an exact fraction."""
    if min(n, c, f) < 1:
        raise ValueError("savings_ratio needs positive arguments")
    return Fraction(c * n ** 3 * f, c + 26 * f)
