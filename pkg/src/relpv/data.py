"""Synthetic datasets, voxel transforms, RTEN files and the dataset directory layout.

Directory layout::

    <root>/manifest.txt                      # K, shape, seed, generator
    <root>/<split>/<class_id>/<sample>.rten
"""
import os
import shutil
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ParameterError
from .tensor import decode_rten, encode_rten


# -- RTEN files ----------------------------------------------------------------

def save_rten(path, array):
    with open(path, "wb") as fh:
        fh.write(encode_rten(array))


def load_rten(path):
    with open(path, "rb") as fh:
        return decode_rten(fh.read())


# -- datasets ------------------------------------------------------------------

@dataclass
class Dataset:
    """Stacked samples ``inputs[i]`` with integer class ``labels[i]``."""
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels):
            raise ParameterError(f"{len(self.inputs)} samples but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ParameterError(f"labels outside [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return zip(self.inputs, self.labels)

    def __getitem__(self, idx):
        return self.inputs[idx], int(self.labels[idx])

    @property
    def sample_shape(self):
        return tuple(self.inputs.shape[1:])

    def subset(self, idx, **meta):
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes,
                       {**self.metadata, **meta})


class VoxelDataset(Dataset):
    pass


class ClipDataset(Dataset):
    pass


def split_dataset(ds, sizes, seed=0):
    """Disjoint random splits of the given sizes (stable under a fixed seed)."""
    if sum(sizes) > len(ds):
        raise ParameterError(f"requested {sum(sizes)} samples from a dataset of {len(ds)}")
    order = np.random.default_rng(seed).permutation(len(ds))
    out, start = [], 0
    for k in sizes:
        out.append(ds.subset(np.sort(order[start:start + k])))
        start += k
    return out


# -- voxel primitives ----------------------------------------------------------

def _box(z, y, x, a, b, c):
    return (np.abs(z) <= a) & (np.abs(y) <= b) & (np.abs(x) <= c)


def _sphere(z, y, x, s):
    return z ** 2 + y ** 2 + x ** 2 <= (0.32 * s) ** 2


def _cube(z, y, x, s):
    return _box(z, y, x, 0.25 * s, 0.25 * s, 0.25 * s)


def _ring(z, y, x, s):
    return (np.sqrt(y ** 2 + x ** 2) - 0.25 * s) ** 2 + z ** 2 <= (0.09 * s) ** 2


def _cross(z, y, x, s):
    t, L = 0.07 * s, 0.35 * s
    return _box(z, y, x, t, t, L) | _box(z, y, x, t, L, t) | _box(z, y, x, L, t, t)


def _pyramid(z, y, x, s):
    h = 0.3 * s
    half = np.clip((h - z) / 2, 0, None)
    return (z >= -h) & (z <= h) & (np.abs(y) <= half) & (np.abs(x) <= half)


def _plate(z, y, x, s):
    return _box(z, y, x, 0.06 * s, 0.32 * s, 0.32 * s)


def _l_solid(z, y, x, s):
    a = 0.12 * s
    return _box(z, y + 0.15 * s, x, 0.3 * s, a, a) | _box(z + 0.3 * s - a, y, x - 0.12 * s, a, a, 0.25 * s)


def _cylinder(z, y, x, s):
    return (y ** 2 + x ** 2 <= (0.2 * s) ** 2) & (np.abs(z) <= 0.32 * s)


def _shell(z, y, x, s):
    r = np.sqrt(z ** 2 + y ** 2 + x ** 2)
    return (r <= 0.36 * s) & (r >= 0.27 * s)


def _bar(z, y, x, s):
    return _box(z, y, x, 0.08 * s, 0.08 * s, 0.4 * s)


PRIMITIVES = ("sphere", "cube", "ring", "cross", "pyramid", "plate", "l_solid", "cylinder",
              "shell", "bar")
_SHAPES = dict(zip(PRIMITIVES, (_sphere, _cube, _ring, _cross, _pyramid, _plate, _l_solid,
                                _cylinder, _shell, _bar)))


def render_primitive(name, grid, center_offset=(0.0, 0.0, 0.0), angle=0.0, scale=1.0):
    """Binary occupancy (1, grid, grid, grid) of a primitive rotated about the depth (z) axis."""
    c = (grid - 1) / 2
    z, y, x = np.meshgrid(*(np.arange(grid) - c - o for o in center_offset), indexing="ij")
    ca, sa = np.cos(angle), np.sin(angle)
    y, x = ca * y + sa * x, -sa * y + ca * x
    occ = _SHAPES[name](z / scale, y / scale, x / scale, grid)
    return occ.astype(np.float32)[None]


def gen_voxel_shapes(num_classes, per_class, grid=32, seed=0):
    if not 1 <= num_classes <= len(PRIMITIVES):
        raise ParameterError(f"num_classes must be in 1..{len(PRIMITIVES)}, got {num_classes}")
    if grid < 16:
        raise ParameterError(f"grid must be >= 16, got {grid}")
    rng = np.random.default_rng(seed)
    inputs, labels = [], []
    for k in range(num_classes):
        for _ in range(per_class):
            offset = rng.uniform(-0.06, 0.06, size=3) * grid
            vol = render_primitive(PRIMITIVES[k], grid, offset, rng.uniform(0, 2 * np.pi),
                                   rng.uniform(0.85, 1.1))
            inputs.append(vol)
            labels.append(k)
    return VoxelDataset(np.stack(inputs), np.array(labels), num_classes,
                        {"seed": seed, "generator": "voxel_shapes", "grid": grid})


# -- voxel transforms ----------------------------------------------------------

def remap_binary(voxels):
    """Map occupancy {0, 1} to {-1, 5}."""
    voxels = np.asarray(voxels)
    if not np.all((voxels == 0) | (voxels == 1)):
        raise ParameterError("remap_binary expects values in {0, 1}")
    return np.where(voxels == 1, 5, -1).astype(voxels.dtype)


def unmap_binary(voxels):
    voxels = np.asarray(voxels)
    if not np.all((voxels == -1) | (voxels == 5)):
        raise ParameterError("unmap_binary expects values in {-1, 5}")
    return (voxels == 5).astype(voxels.dtype)


def rotate_z(volume, index, steps=12):
    """Nearest-neighbour rotation by ``index * 360/steps`` degrees about the grid centre."""
    if steps not in (12, 24) or not 0 <= index < steps:
        raise ParameterError(f"rotation index must be in [0, {steps}) with steps 12 or 24")
    if index == 0:
        return np.array(volume, copy=True)
    theta = 2 * np.pi * index / steps
    h, w = volume.shape[-2:]
    cy, cx = (h - 1) / 2, (w - 1) / 2
    yy, xx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    # inverse map: sample the source at R(-theta) applied to each output cell
    sy = np.rint(np.cos(theta) * yy + np.sin(theta) * xx + cy).astype(int)
    sx = np.rint(-np.sin(theta) * yy + np.cos(theta) * xx + cx).astype(int)
    inside = (sy >= 0) & (sy < h) & (sx >= 0) & (sx < w)
    out = np.zeros_like(volume)
    out[..., inside] = volume[..., sy[inside], sx[inside]]
    return out


def flip_h(volume):
    return np.array(volume[..., ::-1], copy=True)


def translate(volume, shift):
    """Shift the trailing three axes by integer voxels, zero-filling."""
    out = np.zeros_like(volume)
    src, dst = [Ellipsis], [Ellipsis]
    for s, L in zip(shift, volume.shape[-3:]):
        s = int(s)
        if abs(s) >= L:
            return out
        src.append(slice(max(0, -s), L - max(0, s)))
        dst.append(slice(max(0, s), L - max(0, -s)))
    out[tuple(dst)] = volume[tuple(src)]
    return out


def add_flip_noise(volume, p, rng):
    flips = rng.random(volume.shape) < p
    return np.where(flips, 1 - volume, volume).astype(volume.dtype)


def augment(sample, rot=None, flip=False, shift=None, noise=0.0, seed=0):
    """Apply the voxel augmentations in a fixed order: rotate, flip, translate, noise.

    ``rot`` is ``(index, steps)``; ``shift`` is a 3-tuple or ``"random"``
    (uniform in [-2, 2] per axis); ``noise`` is the per-voxel flip probability.
    """
    rng = np.random.default_rng(seed)
    out = np.asarray(sample)
    if rot is not None:
        out = rotate_z(out, *rot)
    if flip:
        out = flip_h(out)
    if shift is not None:
        if isinstance(shift, str):
            if shift != "random":
                raise ParameterError(f"shift must be a triple or 'random', got {shift!r}")
            shift = rng.integers(-2, 3, size=3)
        out = translate(out, shift)
    if noise:
        out = add_flip_noise(out, noise, rng)
    return out


# -- synthetic clips -------------------------------------------------------------

CLIP_MIN_SPEED = 1.5
CLIP_MAX_SPEED = 2.5


def clip_directions(num_classes):
    """Motion direction (unit (dy, dx)) per class; class 0 is stationary."""
    dirs = [np.zeros(2)]
    for k in range(num_classes - 1):
        a = 2 * np.pi * k / (num_classes - 1)
        dirs.append(np.array([np.sin(a), np.cos(a)]))
    return dirs


def gen_synthetic_clips(num_classes=5, per_class=40, shape=(1, 8, 32, 32), seed=0,
                        noise=0.05, distractors=0):
    """Clips of a Gaussian blob moving in a class-specific direction.

    Class 0 holds still; the other classes move at 1.5-2.5 px/frame along
    evenly spaced directions.  ``distractors`` static blobs and Gaussian
    pixel noise are added.  Any single frame is uninformative about the
    class, only the temporal structure is.
    """
    if not 2 <= num_classes <= 9:
        raise ParameterError(f"num_classes must be in 2..9, got {num_classes}")
    c, t, h, w = shape
    if t < 4 or min(h, w) < 16:
        raise ParameterError(f"clip shape {shape} too small (need t >= 4, h, w >= 16)")
    rng = np.random.default_rng(seed)
    dirs = clip_directions(num_classes)
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    tc = (t - 1) / 2
    inputs, labels = [], []
    for k in range(num_classes):
        for _ in range(per_class):
            speed = 0.0 if k == 0 else rng.uniform(CLIP_MIN_SPEED, CLIP_MAX_SPEED)
            vel = speed * dirs[k]
            reach = speed * tc + 3
            mid = np.array([rng.uniform(reach, h - 1 - reach) if reach < h / 2 else h / 2,
                            rng.uniform(reach, w - 1 - reach) if reach < w / 2 else w / 2])
            sigma = rng.uniform(1.5, 2.5)
            clip = np.zeros((t, h, w))
            for frame in range(t):
                py, px = mid + vel * (frame - tc)
                clip[frame] = np.exp(-((yy - py) ** 2 + (xx - px) ** 2) / (2 * sigma ** 2))
            for _ in range(distractors):
                py, px = rng.uniform(3, h - 4), rng.uniform(3, w - 4)
                clip += 0.5 * np.exp(-((yy - py) ** 2 + (xx - px) ** 2) / (2 * 1.5 ** 2))
            clip += noise * rng.standard_normal(clip.shape)
            inputs.append(np.repeat(clip[None], c, axis=0).astype(np.float32))
            labels.append(k)
    return ClipDataset(np.stack(inputs), np.array(labels), num_classes,
                       {"seed": seed, "generator": "synthetic_clips", "shape": tuple(shape)})


def clip_motion_statistic(clip):
    """Least-squares blob velocity (dy, dx) in px/frame from per-frame peak positions."""
    frames = np.asarray(clip)
    frames = frames.mean(axis=0) if frames.ndim == 4 else frames
    t = frames.shape[0]
    from scipy.ndimage import gaussian_filter
    peaks = []
    for frame in frames:
        sm = gaussian_filter(frame, 1.5)
        peaks.append(np.unravel_index(np.argmax(sm), sm.shape))
    peaks = np.array(peaks, dtype=np.float64)
    times = np.arange(t) - (t - 1) / 2
    return (times[:, None] * (peaks - peaks.mean(axis=0))).sum(axis=0) / (times ** 2).sum()


def clip_label(clip, num_classes):
    """Class implied by :func:`clip_motion_statistic` (the generator's label function)."""
    v = clip_motion_statistic(clip)
    speed = np.hypot(*v)
    if speed < CLIP_MIN_SPEED / 2:
        return 0
    dirs = np.array(clip_directions(num_classes)[1:])
    return 1 + int(np.argmax(dirs @ (v / speed)))


# -- dataset directories -------------------------------------------------------

def save_dataset(root, splits, seed=0, generator=""):
    """Write ``{split_name: Dataset}`` under ``root`` in the class-directory layout."""
    first = next(iter(splits.values()))
    os.makedirs(root, exist_ok=True)
    with open(os.path.join(root, "manifest.txt"), "w") as fh:
        fh.write(f"classes = {first.num_classes}\n")
        fh.write(f"shape = {'x'.join(map(str, first.sample_shape))}\n")
        fh.write(f"seed = {seed}\n")
        fh.write(f"generator = {generator}\n")
        fh.write(f"splits = {','.join(splits)}\n")
    for name, ds in splits.items():
        # overwrite semantics: stale samples from an earlier run must not survive
        shutil.rmtree(os.path.join(root, name), ignore_errors=True)
        for k in range(ds.num_classes):
            os.makedirs(os.path.join(root, name, str(k)), exist_ok=True)
        for i, (x, y) in enumerate(ds):
            save_rten(os.path.join(root, name, str(y), f"{i:06d}.rten"), x)


def read_manifest(root):
    path = os.path.join(root, "manifest.txt")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no manifest.txt in {root}")
    out = {}
    with open(path) as fh:
        for line in fh:
            key, sep, val = line.partition("=")
            if sep:
                out[key.strip()] = val.strip()
    return out


def load_split(root, split):
    manifest = read_manifest(root)
    k = int(manifest["classes"])
    shape = tuple(int(s) for s in manifest["shape"].split("x"))
    base = os.path.join(root, split)
    if not os.path.isdir(base):
        raise FileNotFoundError(f"split directory {base} does not exist")
    entries = []
    for cls in range(k):
        cdir = os.path.join(base, str(cls))
        if os.path.isdir(cdir):
            entries += [(name, cls) for name in os.listdir(cdir) if name.endswith(".rten")]
    # original sample order is encoded in the file names
    entries.sort()
    inputs = []
    for name, cls in entries:
        x = load_rten(os.path.join(base, str(cls), name))
        if x.shape != shape:
            raise FormatError(f"{name}: shape {x.shape} != manifest shape {shape}")
        inputs.append(x)
    if not inputs:
        raise FileNotFoundError(f"no samples under {base}")
    return Dataset(np.stack(inputs), np.array([c for _, c in entries]), k,
                   {"root": root, "split": split, "seed": manifest.get("seed")})
