"""``relpv`` command line: basis, gen, train, eval, bench, cost, verify.

Options may also come from ``--config FILE`` holding ``key = value`` lines
(keys are the long flag names); flags given on the command line win.
Exit codes: 0 success, 1 verification failure, 2 usage or I/O error.
"""
import argparse
import csv
import logging
import os
import sys
import time

import numpy as np

from .errors import DimensionError, FormatError, ParameterError

log = logging.getLogger("relpv")


class UsageError(Exception):
    pass


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _pos_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _odd(text):
    v = int(text)
    if v < 3 or v % 2 == 0:
        raise argparse.ArgumentTypeError(f"window size must be odd and >= 3, got {text}")
    return v


def _shape(text):
    try:
        dims = tuple(int(s) for s in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"shape must look like 1x8x32x32, got {text!r}") from None
    if not dims or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"shape extents must be positive, got {text!r}")
    return dims


def _splits(text):
    out = {}
    for part in text.split(","):
        name, sep, size = part.partition("=")
        if not sep or not name.strip():
            raise argparse.ArgumentTypeError(f"splits look like train=200,test=100, got {text!r}")
        out[name.strip()] = _positive(size)
    return out


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser():
    parser = argparse.ArgumentParser(prog="relpv", description=__doc__.splitlines()[0],
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text,
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.add_argument("--config", help="key = value file supplying defaults for this command")
        p.add_argument("--seed", type=int, default=0, help="seed for every random draw")
        p.add_argument("--threads", type=_positive, default=None, help="cap on BLAS worker threads")
        p.add_argument("--verbose", type=_bool, nargs="?", const=True, default=False)
        return p

    p = command("basis", "print the STFT transform matrix W for one window size")
    p.add_argument("--n", type=_odd, default=3, help="window size")
    p.add_argument("--order", choices=("interleaved", "paper"), default="interleaved",
                   help="row order: re/im pairs per frequency, or all real rows then all imaginary")
    p.add_argument("--format", choices=("text", "csv"), default="text")

    p = command("gen", "generate a synthetic dataset directory")
    p.add_argument("--kind", choices=("clips", "voxels"), default="clips")
    p.add_argument("--out", required=True, help="dataset root directory")
    p.add_argument("--classes", type=_positive, default=5)
    p.add_argument("--per-class", type=_positive, default=80)
    p.add_argument("--shape", type=_shape, default="1x8x32x32", help="clip shape CxTxHxW")
    p.add_argument("--grid", type=_positive, default=32, help="voxel grid size")
    p.add_argument("--splits", type=_splits, default="train=200,val=100,test=100")
    p.add_argument("--noise", type=float, default=0.05, help="clip pixel noise level")

    p = command("train", "train a model and write a checkpoint plus metrics CSV")
    p.add_argument("--data", required=True, help="dataset root directory")
    p.add_argument("--model", default="lp_mc3d_3", help="model name, e.g. mc3d_3, lp_mc3d_5, lp_voxnet")
    p.add_argument("--scale", choices=("desk", "paper"), default="desk")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epochs", type=_nonneg, default=30)
    p.add_argument("--batch-size", type=_positive, default=16)
    p.add_argument("--lr", type=_pos_float, default=0.003)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--nesterov", type=_bool, nargs="?", const=True, default=True)
    p.add_argument("--schedule", choices=("plateau", "step", "constant"), default="plateau")
    p.add_argument("--factor", type=float, default=2.0, help="learning-rate divisor")
    p.add_argument("--patience", type=_positive, default=4, help="plateau patience in epochs")
    p.add_argument("--every", type=_positive, default=10, help="step schedule period in epochs")
    p.add_argument("--dtype", choices=("f32", "f64"), default="f32")
    p.add_argument("--train-split", default="train")
    p.add_argument("--val-split", default="val", help="empty string disables validation")

    p = command("eval", "report top-1 accuracy and confusion counts of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")

    p = command("bench", "time forward (and backward) passes beside analytic FLOPs")
    p.add_argument("--model", default="lp_mc3d_3")
    p.add_argument("--scale", choices=("desk", "paper"), default="desk")
    p.add_argument("--input-shape", type=_shape, default=None, help="override CxDxHxW input")
    p.add_argument("--batch", type=_positive, default=4)
    p.add_argument("--repeats", type=_positive, default=5)
    p.add_argument("--backward", type=_bool, nargs="?", const=True, default=False)

    p = command("cost", "parameter, size and FLOP report for a model")
    p.add_argument("--model", default="mc3d_3")
    p.add_argument("--scale", choices=("desk", "paper"), default="paper")
    p.add_argument("--input-shape", type=_shape, default=None)
    p.add_argument("--bias", type=_bool, nargs="?", const=True, default=False)
    p.add_argument("--dtype", choices=("f32", "f64"), default="f32")
    p.add_argument("--convention", choices=("dense", "single_site"), default="dense")
    p.add_argument("--format", choices=("text", "csv"), default="text")

    p = command("verify", "run the built-in invariant and oracle suites")
    p.add_argument("--suite", choices=("basis", "oracle", "grad", "counts", "decorr", "all"),
                   default="all")
    return parser, sub


def read_config(path):
    if not os.path.exists(path):
        raise UsageError(f"config file {path} does not exist")
    out = {}
    with open(path) as fh:
        for num, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{num}: expected 'key = value'")
            out[key.strip().replace("-", "_")] = val.strip()
    return out


def _config_path(argv):
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.partition("=")[2]
    return None


def parse_args(argv):
    parser, sub = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    path = _config_path(argv)
    command = next((t for t in argv if not t.startswith("-")), None)
    if path and command in sub.choices:
        cmd_parser = sub.choices[command]
        known = {a.dest: a for a in cmd_parser._actions if a.dest not in ("help", "config")}
        values = read_config(path)
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise UsageError(f"unknown config keys for '{command}': {', '.join(unknown)}")
        # string defaults pass through each option's type conversion and validation
        cmd_parser.set_defaults(**values)
        for key in values:
            known[key].required = False
    args = parser.parse_args(argv)
    return args


# -- commands ------------------------------------------------------------------

def cmd_basis(args, out):
    from .basis import build_basis
    b = build_basis(args.n)
    W = np.asarray(b.W)
    labels = [f"{'re' if r % 2 == 0 else 'im'}(v{r // 2 + 1})" for r in range(W.shape[0])]
    if args.order == "paper":
        order = b.paper_row_order()
        W, labels = W[order], [labels[i] for i in order]
    if args.format == "csv":
        w = csv.writer(out)
        w.writerow(["row"] + [f"y{tuple(int(t) for t in y)}".replace(" ", "") for y in _offsets(args.n)])
        for lab, row in zip(labels, W):
            w.writerow([lab] + [repr(float(v)) for v in row])
        return 0
    print(f"STFT basis n={args.n}: W is {W.shape[0]}x{W.shape[1]}, k = 1/{args.n}", file=out)
    for i, p in enumerate(b.points, 1):
        print(f"  v{i:<2} = ({', '.join(str(c) for c in p.v)})", file=out)
    with np.printoptions(precision=4, suppress=True, linewidth=200, threshold=10 ** 6):
        for lab, row in zip(labels, W):
            print(f"{lab:>8} {row}", file=out)
    return 0


def _offsets(n):
    from .basis import window_offsets
    return window_offsets(n)


def cmd_gen(args, out):
    from .data import gen_synthetic_clips, gen_voxel_shapes, save_dataset, split_dataset
    total = args.classes * args.per_class
    if sum(args.splits.values()) > total:
        raise UsageError(f"splits need {sum(args.splits.values())} samples but only {total} are generated")
    if args.kind == "clips":
        if len(args.shape) != 4:
            raise UsageError("--shape must be CxTxHxW for clips")
        ds = gen_synthetic_clips(args.classes, args.per_class, args.shape, args.seed, noise=args.noise)
    else:
        ds = gen_voxel_shapes(args.classes, args.per_class, args.grid, args.seed)
    parts = split_dataset(ds, list(args.splits.values()), seed=args.seed)
    save_dataset(args.out, dict(zip(args.splits, parts)), seed=args.seed, generator=args.kind)
    sizes = ", ".join(f"{k}={v}" for k, v in args.splits.items())
    print(f"wrote {args.kind} dataset to {args.out}: K={args.classes}, sample shape "
          f"{'x'.join(map(str, ds.sample_shape))}, {sizes}", file=out)
    return 0


def cmd_train(args, out):
    from .autograd import Network
    from .data import load_split, read_manifest
    from .models import build_model
    from .train import LrSchedule, save_checkpoint, train_loop
    manifest = read_manifest(args.data)
    k = int(manifest["classes"])
    train = load_split(args.data, args.train_split)
    val = load_split(args.data, args.val_split) if args.val_split else None
    spec = build_model(args.model, args.scale, num_classes=k)
    if tuple(spec.input_shape) != train.sample_shape:
        raise DimensionError(f"model {args.model} ({args.scale}) expects {spec.input_shape}, "
                             f"dataset holds {train.sample_shape}")
    net = Network(spec, seed=args.seed, dtype=np.float32 if args.dtype == "f32" else np.float64)
    schedule = LrSchedule(args.lr, args.schedule, args.factor, args.patience, args.every)
    os.makedirs(args.out, exist_ok=True)
    metrics = os.path.join(args.out, "metrics.csv")
    res = train_loop(net, train, args.epochs, schedule, seed=args.seed, val=val,
                     batch_size=args.batch_size, momentum=args.momentum, nesterov=args.nesterov,
                     metrics_path=metrics)
    save_checkpoint(net, os.path.join(args.out, "checkpoint"))
    save_checkpoint(res.restore_best(Network(spec, dtype=net.dtype)), os.path.join(args.out, "best"))
    last = res.history[-1] if res.history else None
    print(f"trained {spec.name} for {args.epochs} epochs ({net.num_params():,} parameters)", file=out)
    if last:
        print(f"final: train acc {last['train_acc']:.3f}  val acc {last['val_acc']:.3f}; "
              f"best val loss at epoch {res.best_epoch}", file=out)
    print(f"wrote {metrics}, {args.out}/checkpoint, {args.out}/best", file=out)
    return 0


def confusion_matrix(labels, preds, k):
    m = np.zeros((k, k), dtype=np.int64)
    np.add.at(m, (labels, preds), 1)
    return m


def cmd_eval(args, out):
    from .data import load_split
    from .train import evaluate, load_checkpoint
    if not os.path.isdir(args.checkpoint):
        raise FileNotFoundError(f"checkpoint directory {args.checkpoint} does not exist")
    net = load_checkpoint(args.checkpoint)
    ds = load_split(args.data, args.split)
    if ds.sample_shape != tuple(net.spec.input_shape):
        raise DimensionError(f"checkpoint expects {net.spec.input_shape}, split holds {ds.sample_shape}")
    loss, acc, preds = evaluate(net, ds)
    print(f"{net.spec.name} on {args.split} ({len(ds)} samples): top-1 accuracy {acc:.4f}  loss {loss:.4f}",
          file=out)
    m = confusion_matrix(ds.labels, preds, ds.num_classes)
    print("confusion (rows = true class, columns = predicted):", file=out)
    print("      " + "".join(f"{j:>6}" for j in range(ds.num_classes)), file=out)
    for i, row in enumerate(m):
        print(f"{i:>6}" + "".join(f"{v:>6}" for v in row), file=out)
    return 0


def bench(model, scale="desk", input_shape=None, batch=4, repeats=5, backward=False, seed=0):
    """Median and minimum wall time (s) of forward (or forward+backward) passes."""
    from .autograd import Network
    from .models import ModelSpec, build_model
    spec = build_model(model, scale)
    if input_shape is not None:
        spec = ModelSpec(spec.name, tuple(input_shape), spec.layers, spec.pool_rounding, spec.num_classes)
    net = Network(spec, seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch,) + tuple(spec.input_shape)).astype(np.float32)
    y = rng.integers(0, spec.num_classes, size=batch)
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        if backward:
            net.forward_backward(x, y)
        else:
            net.forward(x)
        times.append(time.perf_counter() - t)
    return spec, float(np.median(times)), float(np.min(times)), times


def cmd_bench(args, out):
    from .cost import count_flops
    spec, med, best, times = bench(args.model, args.scale, args.input_shape, args.batch,
                                   args.repeats, args.backward, args.seed)
    flops = count_flops(spec).flops
    what = "forward+backward" if args.backward else "forward"
    print(f"{spec.name} {what}, batch {args.batch}, input {'x'.join(map(str, spec.input_shape))}, "
          f"{args.repeats} repeats", file=out)
    print(f"  median {med * 1e3:.2f} ms  min {best * 1e3:.2f} ms", file=out)
    print(f"  analytic forward FLOPs per sample: {flops:,} (dense); "
          f"{flops * args.batch / med / 1e9:.2f} GFLOP/s at the median", file=out)
    return 0


def cmd_cost(args, out):
    from .cost import count_flops
    from .models import build_model
    spec = build_model(args.model, args.scale)
    report = count_flops(spec, args.input_shape, args.convention, args.bias, args.dtype)
    if args.format == "csv":
        csv.writer(out).writerows(report.to_csv_rows())
    else:
        print(report.to_text(), file=out)
    return 0


def cmd_verify(args, out, basis_hook=None):
    from .verify import run_suite
    checks = run_suite(args.suite, basis_hook=basis_hook, seed=args.seed,
                       out=lambda line: print(line, file=out))
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed", file=out)
    return 1 if failed else 0


COMMANDS = {"basis": cmd_basis, "gen": cmd_gen, "train": cmd_train, "eval": cmd_eval,
            "bench": cmd_bench, "cost": cmd_cost, "verify": cmd_verify}


def main(argv=None, out=None, basis_hook=None):
    """Entry point; ``basis_hook`` is forwarded to ``verify`` for mutation tests."""
    out = out or sys.stdout
    try:
        args = parse_args(argv)
    except UsageError as e:
        print(f"relpv: error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    from threadpoolctl import threadpool_limits
    try:
        with threadpool_limits(limits=args.threads):
            if args.command == "verify":
                return cmd_verify(args, out, basis_hook)
            return COMMANDS[args.command](args, out)
    except (UsageError, FileNotFoundError, NotADirectoryError, PermissionError, FormatError,
            DimensionError, ParameterError) as e:
        print(f"relpv {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
