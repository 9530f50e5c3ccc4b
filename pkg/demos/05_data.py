"""Synthetic voxel shapes, augmentations and moving-blob clips.

Run: python3 demos/05_data.py
"""
import numpy as np

from relpv.data import (PRIMITIVES, augment, clip_label, clip_motion_statistic, gen_synthetic_clips,
                        gen_voxel_shapes, remap_binary, rotate_z)

shapes = gen_voxel_shapes(len(PRIMITIVES), 2, grid=32, seed=0)
print(f"{len(shapes)} voxel grids of shape {shapes.sample_shape}")
for k, name in enumerate(PRIMITIVES):
    occ = shapes.inputs[shapes.labels == k].mean()
    print(f"  class {k} {name:<9} occupancy {occ:.3f}")

# Rotation about the vertical axis uses nearest-neighbour resampling.  Three
# steps of 30 degrees make a quarter turn, and four quarter turns are the identity.
v = shapes.inputs[0]
r = v
for _ in range(4):
    r = rotate_z(r, 3, 12)
print("four quarter turns give back the input:", np.array_equal(r, v))
aug = augment(v, rot=(1, 12), flip=True, shift="random", noise=0.01, seed=3)
print("augmented copy keeps a binary grid:", set(np.unique(aug)) <= {0.0, 1.0})
print("remapped values:", np.unique(remap_binary(v)))

# Clip labels are set by the blob's motion: class 0 stays still and the others
# move in evenly spaced directions.
clips = gen_synthetic_clips(5, 4, seed=1)
for x, y in list(clips)[::4]:
    vy, vx = clip_motion_statistic(x)
    print(f"  label {y}: velocity ({vy:+.2f}, {vx:+.2f}) px/frame, recovered label {clip_label(x, 5)}")
