"""Declarative architecture descriptions and the builders for each model family.

A :class:`ModelSpec` is an ordered list of :class:`LayerSpec`.  Layer ``0`` is
the model input; every other layer names the ids it reads from, so branches,
concatenations and skip additions are expressed directly.  Specs are pure
data: shapes and parameter counts are computed without allocating weights.
"""
import re
from dataclasses import dataclass, field

from .errors import DimensionError, ParameterError
from .tensor import output_extent

KINDS = ("relpv", "conv3d", "maxpool", "avgpool", "fc", "relu", "batchnorm",
         "flatten", "concat", "skip_add", "softmax")

# integer-valued hyperparameters; everything else stays a string
_INT_ARGS = {"n", "f", "stride", "units"}


@dataclass(frozen=True)
class LayerSpec:
    id: int
    kind: str
    inputs: tuple
    args: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown layer kind {self.kind!r}")

    def __getitem__(self, key):
        return self.args[key]

    def get(self, key, default=None):
        return self.args.get(key, default)

    def describe(self):
        hp = ",".join(f"{k}={_fmt(v)}" for k, v in self.args.items())
        return f"{self.kind}({hp})" if hp else self.kind


@dataclass(frozen=True)
class ModelSpec:
    name: str
    input_shape: tuple
    layers: tuple
    pool_rounding: str = "floor"
    num_classes: int = 0

    def __post_init__(self):
        seen = {0}
        for layer in self.layers:
            if layer.id in seen:
                raise ParameterError(f"duplicate or reserved layer id {layer.id}")
            missing = [i for i in layer.inputs if i not in seen]
            if missing or not layer.inputs:
                raise ParameterError(f"layer {layer.id} reads undefined ids {missing or '()'}")
            seen.add(layer.id)
        infer_shapes(self)

    @property
    def output_id(self):
        return self.layers[-1].id if self.layers else 0

    def logits_id(self):
        """Id whose output feeds the loss (the input of a trailing softmax)."""
        if self.layers and self.layers[-1].kind == "softmax":
            return self.layers[-1].inputs[0]
        return self.output_id

    def by_id(self):
        return {layer.id: layer for layer in self.layers}


def _fmt(v):
    if isinstance(v, tuple):
        return "x".join(str(a) for a in v)
    return str(v)


def pool_window(size):
    if isinstance(size, int):
        return (size,) * 3
    return tuple(size)


def infer_shapes(spec):
    """Map every layer id (and 0 for the input) to its per-sample output shape."""
    shapes = {0: tuple(spec.input_shape)}
    for layer in spec.layers:
        ins = [shapes[i] for i in layer.inputs]
        shapes[layer.id] = _layer_shape(layer, ins, spec.pool_rounding)
    return shapes


def _need_map(layer, shape):
    if len(shape) != 4:
        raise DimensionError(f"layer {layer.id} ({layer.kind}) needs a (c,d,h,w) map, got {shape}")


def _layer_shape(layer, ins, rounding):
    kind, x = layer.kind, ins[0]
    if kind in ("relpv", "conv3d"):
        _need_map(layer, x)
        n, stride, pad = layer["n"], layer.get("stride", 1), layer.get("padding", "same")
        return (layer["f"],) + tuple(output_extent(L, n, stride, pad) for L in x[1:])
    if kind in ("maxpool", "avgpool"):
        _need_map(layer, x)
        size = pool_window(layer["size"])
        stride = pool_window(layer.get("stride", layer["size"]))
        out = []
        for L, k, s in zip(x[1:], size, stride):
            o = (L - k) // s + 1 if rounding == "floor" else -(-(L - k) // s) + 1
            if rounding == "ceil" and (o - 1) * s >= L:
                o -= 1
            if o < 1:
                raise DimensionError(f"pool {size} does not fit {x} at layer {layer.id}")
            out.append(o)
        return (x[0],) + tuple(out)
    if kind == "fc":
        if len(x) != 1:
            raise DimensionError(f"fc layer {layer.id} needs a flat input, got {x}")
        return (layer["units"],)
    if kind == "flatten":
        size = 1
        for s in x:
            size *= s
        return (size,)
    if kind == "concat":
        for s in ins:
            _need_map(layer, s)
            if s[1:] != x[1:]:
                raise DimensionError(f"concat layer {layer.id}: spatial mismatch {ins}")
        return (sum(s[0] for s in ins),) + x[1:]
    if kind == "skip_add":
        if len(ins) != 2 or ins[0] != ins[1]:
            raise DimensionError(f"skip_add layer {layer.id}: shapes {ins} differ")
        return x
    if kind == "batchnorm":
        _need_map(layer, x)
    return x


class _Builder:
    def __init__(self):
        self.layers = []
        self.last = 0

    def add(self, kind, inputs=None, **args):
        lid = len(self.layers) + 1
        inputs = (self.last,) if inputs is None else tuple(inputs)
        self.layers.append(LayerSpec(lid, kind, inputs, args))
        self.last = lid
        return lid

    def spec(self, name, input_shape, rounding, classes):
        return ModelSpec(name, tuple(input_shape), tuple(self.layers), rounding, classes)


# The "paper" scale uses the full-size widths and inputs; desk scale keeps
# the topology with widths / 4, fully connected sizes / 2 and small inputs.
MC3D_SCALES = {
    "paper": {"input": (3, 16, 112, 112), "widths": (64, 128, 256, 256, 256),
              "fc": (2048, 2048), "classes": 101, "bottleneck": 256},
    "desk": {"input": (1, 8, 32, 32), "widths": (16, 32, 64, 64, 64),
             "fc": (1024, 1024), "classes": 5, "bottleneck": 64},
}

LP3DCNN_SCALES = {
    "paper": {"input": (1, 32, 32, 32), "branch": 128, "bottleneck": 256, "fc": 512, "classes": 10},
    "desk": {"input": (1, 16, 16, 16), "branch": 32, "bottleneck": 64, "fc": 256, "classes": 10},
}


def _scale(table, scale):
    try:
        return table[scale]
    except KeyError:
        raise ParameterError(f"scale must be one of {sorted(table)}, got {scale!r}") from None


def _check_odd(n):
    if not isinstance(n, int) or n < 1 or n % 2 == 0:
        raise ParameterError(f"kernel / window size must be a positive odd int, got {n!r}")


def _mc3d_like(name, kinds, n, scale, num_classes, f_override=None):
    cfg = _scale(MC3D_SCALES, scale)
    k = cfg["classes"] if num_classes is None else num_classes
    b = _Builder()
    widths = cfg["widths"] if f_override is None else (f_override,) * 5
    for stage, (kind, width) in enumerate(zip(kinds, widths)):
        b.add(kind, n=n, f=width)
        b.add("relu")
        if stage == 4 and f_override is not None:
            b.add("conv3d", n=1, f=cfg["bottleneck"])
            b.add("relu")
        # temporal extent is kept by the first pool only
        b.add("maxpool", size=(1, 2, 2) if stage == 0 else 2)
    b.add("flatten")
    for units in cfg["fc"]:
        b.add("fc", units=units)
        b.add("relu")
    b.add("fc", units=k)
    b.add("softmax")
    return b.spec(name, cfg["input"], "ceil", k)


def build_mc3d(n, scale="desk", num_classes=None):
    _check_odd(n)
    return _mc3d_like(f"mc3d_{n}", ["conv3d"] * 5, n, scale, num_classes)


def build_lp_mc3d(n, f_override=None, scale="desk", num_classes=None):
    _check_odd(n)
    if n < 3:
        raise ParameterError(f"STFT window must be >= 3, got {n}")
    name = f"lp_mc3d_{n}" if f_override is None else f"lp_mc3d_{n}_{f_override}"
    return _mc3d_like(name, ["relpv"] * 5, n, scale, num_classes, f_override)


def build_hybrid(l, side, scale="desk", num_classes=None):
    """mC3D_3 with ``l`` conv layers replaced: ``top`` counts from the input, ``bottom`` from the output."""
    if not 1 <= l <= 5:
        raise ParameterError(f"l must be in 1..5, got {l}")
    if side not in ("top", "bottom"):
        raise ParameterError(f"side must be 'top' or 'bottom', got {side!r}")
    kinds = ["conv3d"] * 5
    idx = range(l) if side == "top" else range(5 - l, 5)
    for i in idx:
        kinds[i] = "relpv"
    tag = "T" if side == "top" else "B"
    return _mc3d_like(f"mc3d_3_{tag}{l}", kinds, 3, scale, num_classes)


def build_voxnet_family(variant="voxnet", num_classes=10):
    """VoxNet and its ReLPV replacement on 32^3 occupancy grids.

    Both use valid padding (so the stride-2 first layer maps 32 -> 14); under
    valid padding no block preserves its input shape, so the replacement has
    no identity skips.
    """
    kind = {"voxnet": "conv3d", "lp_voxnet": "relpv"}.get(variant)
    if kind is None:
        raise ParameterError(f"variant must be 'voxnet' or 'lp_voxnet', got {variant!r}")
    b = _Builder()
    b.add(kind, n=5, f=32, stride=2, padding="valid")
    b.add("relu")
    b.add(kind, n=3, f=32, stride=1, padding="valid")
    b.add("relu")
    b.add("maxpool", size=2)
    b.add("flatten")
    b.add("fc", units=128)
    b.add("relu")
    b.add("fc", units=num_classes)
    b.add("softmax")
    return b.spec(variant, (1, 32, 32, 32), "floor", num_classes)


def build_lp3dcnn(scale="paper", num_classes=None):
    """Inception-style ReLPV network: one Block-1, four Block-2 units, avg-pool between.

    Block-1 concatenates ReLPV(3, w) and ReLPV(5, w).  Block-2 adds a 1x1x1
    conv(w) branch to the two ReLPV branches, concatenates, and adds the block
    input back when channel counts agree (the first Block-2 grows 2w -> 3w, so
    it has no skip).  Each block is followed by batch norm and ReLU.
    """
    cfg = _scale(LP3DCNN_SCALES, scale)
    k = cfg["classes"] if num_classes is None else num_classes
    w = cfg["branch"]
    b = _Builder()
    a = b.add("relpv", inputs=(0,), n=3, f=w)
    c = b.add("relpv", inputs=(0,), n=5, f=w)
    b.add("concat", inputs=(a, c))
    b.add("batchnorm")
    block_in = b.add("relu")
    channels = 2 * w
    for unit in range(4):
        block_in = b.add("avgpool", size=2)
        r3 = b.add("relpv", inputs=(block_in,), n=3, f=w)
        r5 = b.add("relpv", inputs=(block_in,), n=5, f=w)
        pw = b.add("conv3d", inputs=(block_in,), n=1, f=w)
        cat = b.add("concat", inputs=(r3, r5, pw))
        if channels == 3 * w:
            b.add("skip_add", inputs=(cat, block_in))
        channels = 3 * w
        b.add("batchnorm")
        b.add("relu")
    b.add("conv3d", n=1, f=cfg["bottleneck"])
    b.add("batchnorm")
    b.add("relu")
    b.add("flatten")
    for _ in range(2):
        b.add("fc", units=cfg["fc"])
        b.add("relu")
    b.add("fc", units=k)
    b.add("softmax")
    return b.spec(f"lp3dcnn_{scale}", cfg["input"], "floor", k)


_NAME_PATTERNS = [
    (re.compile(r"mc3d_(\d+)$"), lambda m, s, k: build_mc3d(int(m[1]), s, k)),
    (re.compile(r"lp_mc3d_(\d+)$"), lambda m, s, k: build_lp_mc3d(int(m[1]), None, s, k)),
    (re.compile(r"lp_mc3d_(\d+)_(\d+)$"), lambda m, s, k: build_lp_mc3d(int(m[1]), int(m[2]), s, k)),
    (re.compile(r"mc3d_3_([TB])(\d)$"),
     lambda m, s, k: build_hybrid(int(m[2]), "top" if m[1] == "T" else "bottom", s, k)),
    (re.compile(r"(voxnet|lp_voxnet)$"), lambda m, s, k: build_voxnet_family(m[1], k or 10)),
    (re.compile(r"lp3dcnn$"), lambda m, s, k: build_lp3dcnn(s, k)),
]

MODEL_NAMES = ("mc3d_<n>", "lp_mc3d_<n>", "lp_mc3d_<n>_<f>", "mc3d_3_T<l>", "mc3d_3_B<l>",
               "voxnet", "lp_voxnet", "lp3dcnn")


def build_model(name, scale="desk", num_classes=None):
    """Build a spec from a registry name such as ``lp_mc3d_3`` or ``mc3d_3_B3``."""
    for pattern, make in _NAME_PATTERNS:
        m = pattern.match(name)
        if m:
            return make(m, scale, num_classes)
    raise ParameterError(f"unknown model {name!r}; known forms: {', '.join(MODEL_NAMES)}")


# -- text serialisation ------------------------------------------------------

def dumps_spec(spec):
    lines = [
        "# relpv model spec: header 'key = value', then 'id kind inputs=.. key=value ...'",
        f"name = {spec.name}",
        f"input = {_fmt(tuple(spec.input_shape))}",
        f"pool_rounding = {spec.pool_rounding}",
        f"classes = {spec.num_classes}",
    ]
    for layer in spec.layers:
        parts = [str(layer.id), layer.kind, "inputs=" + ",".join(map(str, layer.inputs))]
        parts += [f"{k}={_fmt(v)}" for k, v in layer.args.items()]
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def _parse_value(key, text):
    if key in ("size", "stride") and "x" in text:
        return tuple(int(t) for t in text.split("x"))
    if key in _INT_ARGS or key == "size":
        return int(text)
    return text


def loads_spec(text):
    header, layers = {}, []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if tokens[0].isdigit():
            if len(tokens) < 3 or not tokens[2].startswith("inputs="):
                raise ParameterError(f"line {lineno}: expected 'id kind inputs=...'")
            inputs = tuple(int(t) for t in tokens[2][len("inputs="):].split(","))
            args = {}
            for tok in tokens[3:]:
                key, _, val = tok.partition("=")
                if not val:
                    raise ParameterError(f"line {lineno}: malformed hyperparameter {tok!r}")
                args[key] = _parse_value(key, val)
            layers.append(LayerSpec(int(tokens[0]), tokens[1], inputs, args))
        else:
            key, sep, val = line.partition("=")
            if not sep:
                raise ParameterError(f"line {lineno}: cannot parse {raw!r}")
            header[key.strip()] = val.strip()
    unknown = set(header) - {"name", "input", "pool_rounding", "classes"}
    if unknown:
        raise ParameterError(f"unknown header keys {sorted(unknown)}")
    try:
        shape = tuple(int(t) for t in header["input"].split("x"))
        return ModelSpec(header.get("name", "model"), shape, tuple(layers),
                         header.get("pool_rounding", "floor"), int(header.get("classes", 0)))
    except KeyError as exc:
        raise ParameterError(f"missing header key {exc}") from None


def save_spec(spec, path):
    with open(path, "w") as fh:
        fh.write(dumps_spec(spec))


def load_spec(path):
    with open(path) as fh:
        return loads_spec(fh.read())
