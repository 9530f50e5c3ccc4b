import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relpv.data import (PRIMITIVES, Dataset, augment, clip_label, clip_motion_statistic, flip_h,
                        gen_synthetic_clips, gen_voxel_shapes, load_rten, load_split, read_manifest,
                        remap_binary, rotate_z, save_dataset, save_rten, split_dataset, translate,
                        unmap_binary)
from relpv.errors import FormatError, ParameterError


def test_voxel_generator_deterministic_and_valid():
    a = gen_voxel_shapes(4, 5, grid=16, seed=3)
    b = gen_voxel_shapes(4, 5, grid=16, seed=3)
    assert a.inputs.tobytes() == b.inputs.tobytes() and np.array_equal(a.labels, b.labels)
    assert a.inputs.shape == (20, 1, 16, 16, 16)
    assert set(np.unique(a.inputs)) <= {0.0, 1.0}
    with pytest.raises(ParameterError):
        gen_voxel_shapes(4, 5, grid=8)
    with pytest.raises(ParameterError):
        gen_voxel_shapes(len(PRIMITIVES) + 1, 1)


def test_every_primitive_is_nonempty():
    ds = gen_voxel_shapes(len(PRIMITIVES), 2, grid=16, seed=0)
    frac = ds.inputs.reshape(len(ds), -1).mean(axis=1)
    assert np.all((frac > 0) & (frac < 1))


def test_nearest_centroid_beats_chance():
    train = gen_voxel_shapes(4, 20, grid=16, seed=1)
    test = gen_voxel_shapes(4, 10, grid=16, seed=2)
    flat = lambda d: d.inputs.reshape(len(d), -1)
    centroids = np.stack([flat(train)[train.labels == k].mean(axis=0) for k in range(4)])
    dist = ((flat(test)[:, None] - centroids[None]) ** 2).sum(axis=2)
    assert (dist.argmin(axis=1) == test.labels).mean() > 0.5


def test_remap():
    v = np.array([0.0, 1.0, 1.0, 0.0])
    assert remap_binary(v).tolist() == [-1, 5, 5, -1]
    assert np.array_equal(unmap_binary(remap_binary(v)), v)
    with pytest.raises(ParameterError):
        remap_binary(np.array([0.5]))


def test_rotation_and_flip_identities():
    vol = gen_voxel_shapes(7, 1, grid=16, seed=4).inputs[6]
    assert np.array_equal(rotate_z(vol, 0), vol)
    r = vol
    for _ in range(4):
        r = rotate_z(r, 3, 12)
    assert np.array_equal(r, vol)
    assert np.array_equal(rotate_z(vol, 6, 24), np.rot90(vol, k=-1, axes=(-2, -1))) or \
        np.array_equal(rotate_z(vol, 6, 24), np.rot90(vol, k=1, axes=(-2, -1)))
    assert np.array_equal(flip_h(flip_h(vol)), vol)
    with pytest.raises(ParameterError):
        rotate_z(vol, 12, 12)


def test_translate_and_augment():
    vol = np.zeros((1, 8, 8, 8), np.float32)
    vol[0, 4, 4, 4] = 1
    moved = translate(vol, (1, -2, 0))
    assert moved[0, 5, 2, 4] == 1 and moved.sum() == 1
    assert translate(vol, (9, 0, 0)).sum() == 0
    a = augment(vol, rot=(3, 12), flip=True, shift="random", noise=0.05, seed=7)
    b = augment(vol, rot=(3, 12), flip=True, shift="random", noise=0.05, seed=7)
    assert np.array_equal(a, b) and set(np.unique(a)) <= {0.0, 1.0}
    noisy = augment(np.zeros((1, 16, 16, 16)), noise=0.05, seed=0)
    assert 0.03 < noisy.mean() < 0.07


def test_clip_generator():
    ds = gen_synthetic_clips(5, 6, seed=2)
    again = gen_synthetic_clips(5, 6, seed=2)
    assert ds.inputs.tobytes() == again.inputs.tobytes()
    assert ds.inputs.shape == (30, 1, 8, 32, 32) and ds.inputs.dtype == np.float32
    assert all(clip_label(x, 5) == y for x, y in ds)


def test_frame_order_carries_the_label():
    ds = gen_synthetic_clips(5, 4, seed=5)
    for x, y in ds:
        v = clip_motion_statistic(x)
        back = clip_motion_statistic(x[:, ::-1])
        assert np.allclose(back, -v)
        if y > 0:
            # reversed time moves the blob the opposite way, so the label changes
            assert clip_label(x[:, ::-1], 5) != y


def test_splits_disjoint_and_stable():
    ds = gen_synthetic_clips(5, 8, seed=0)
    ds.inputs[:, 0, 0, 0, 0] = np.arange(len(ds))      # tag each sample
    a = split_dataset(ds, (20, 10, 10), seed=3)
    b = split_dataset(ds, (20, 10, 10), seed=3)
    tags = [set(part.inputs[:, 0, 0, 0, 0].astype(int)) for part in a]
    assert sum(map(len, tags)) == 40 and len(set.union(*tags)) == 40
    assert all(p.inputs.tobytes() == q.inputs.tobytes() for p, q in zip(a, b))
    with pytest.raises(ParameterError):
        split_dataset(ds, (30, 20), seed=0)


def test_dataset_directory_roundtrip(tmp_path):
    ds = gen_synthetic_clips(3, 4, shape=(1, 4, 16, 16), seed=1)
    tr, te = split_dataset(ds, (8, 4), seed=0)
    save_dataset(tmp_path, {"train": tr, "test": te}, seed=1, generator="clips")
    m = read_manifest(tmp_path)
    assert m["classes"] == "3" and m["shape"] == "1x4x16x16" and m["seed"] == "1"
    back = load_split(tmp_path, "train")
    assert np.array_equal(np.sort(back.labels), np.sort(tr.labels))
    assert {x.tobytes() for x in back.inputs} == {x.tobytes() for x in tr.inputs}
    assert len(list((tmp_path / "test").rglob("*.rten"))) == 4
    # rewriting a split replaces its previous contents
    save_dataset(tmp_path, {"test": te.subset(np.arange(2))})
    assert len(list((tmp_path / "test").rglob("*.rten"))) == 2
    with pytest.raises(FileNotFoundError):
        load_split(tmp_path, "val")


def test_dataset_shape_mismatch(tmp_path):
    ds = Dataset(np.zeros((2, 1, 2, 2, 2), np.float32), [0, 1], 2)
    save_dataset(tmp_path, {"train": ds})
    save_rten(tmp_path / "train" / "0" / "000000.rten", np.zeros((1, 3, 3, 3), np.float32))
    with pytest.raises(FormatError):
        load_split(tmp_path, "train")
    with pytest.raises(ParameterError):
        Dataset(np.zeros((2, 1)), [0, 2], 2)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=1, max_size=5), st.booleans())
def test_rten_file_roundtrip(tmp_path_factory, shape, f64):
    a = np.random.default_rng(len(shape)).standard_normal(shape).astype(np.float64 if f64 else np.float32)
    path = tmp_path_factory.mktemp("rt") / "a.rten"
    save_rten(path, a)
    b = load_rten(path)
    assert b.dtype == a.dtype and b.tobytes() == a.tobytes()
