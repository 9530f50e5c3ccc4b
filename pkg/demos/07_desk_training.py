"""Train LP-mC3D_3 and the mC3D_3 baseline on synthetic clips and compare them.

The full comparison (30 epochs each) takes several minutes on one core.
Pass a smaller epoch count for a quick look.

Run: python3 demos/07_desk_training.py [epochs]
"""
import sys

from relpv.autograd import Network
from relpv.data import gen_synthetic_clips, split_dataset
from relpv.models import build_model
from relpv.train import LrSchedule, evaluate, train_loop

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 30
ds = gen_synthetic_clips(5, 80, seed=7)
train, val, test = split_dataset(ds, (200, 100, 100), seed=7)

for name in ("lp_mc3d_3", "mc3d_3"):
    net = Network(build_model(name, "desk"), seed=0)
    res = train_loop(net, train, epochs, LrSchedule(0.003, "plateau", 2.0, 4), seed=0, val=val,
                     batch_size=16, nesterov=True, log_every=5)
    res.restore_best(net)
    tr, te = evaluate(net, train)[1], evaluate(net, test)[1]
    print(f"{name:<10} {net.num_params():>8,} params  best-val epoch {res.best_epoch:>2}  "
          f"train {tr:.2f}  test {te:.2f}  gap {tr - te:+.2f}")
