"""Parameter and FLOP accounting for the full-size architectures.

Run: python3 demos/03_cost_model.py
"""
from relpv.cost import count_flops, count_params
from relpv.models import build_model

print(f"{'model':<14}{'params':>14}")
for name in ("mc3d_3", "mc3d_5", "mc3d_7", "mc3d_9", "lp_mc3d_3", "lp_mc3d_9", "mc3d_3_T1", "mc3d_3_B3",
             "voxnet", "lp_voxnet", "lp3dcnn"):
    print(f"{name:<14}{count_params(build_model(name, 'paper')).params:>14,}")

# Two FLOP conventions are available.  "dense" counts every output position of
# every layer.  "single_site" charges each layer once per sample, which tracks
# the growth of kernel cost with n.
for convention in ("single_site", "dense"):
    f = {m: count_flops(build_model(m, "paper"), convention=convention).flops
         for m in ("mc3d_3", "mc3d_9", "lp_mc3d_3", "lp_mc3d_9")}
    print(f"{convention:>11}: mC3D 9/3 = {f['mc3d_9'] / f['mc3d_3']:.2f}, "
          f"LP-mC3D 9/3 = {f['lp_mc3d_9'] / f['lp_mc3d_3']:.4f}")

# The per-layer report is also available as text or CSV rows.
print(count_flops(build_model("lp_mc3d_3", "desk")).to_text())
