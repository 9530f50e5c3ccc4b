"""SGD with momentum, learning-rate schedules, the training loop and checkpoints."""
import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .autograd import Network
from .errors import FormatError, ParameterError
from .init import orthogonal_init  # noqa: F401  (re-exported)
from .models import load_spec, save_spec
from .data import load_rten, save_rten

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc")


@dataclass
class SgdState:
    learning_rate: float
    momentum: float = 0.9
    nesterov: bool = False
    velocity: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate < 0 or not 0 <= self.momentum < 1:
            raise ParameterError(f"need lr >= 0 and 0 <= momentum < 1, got "
                                 f"{self.learning_rate}, {self.momentum}")


def sgd_step(params, grads, state):
    """One momentum step; returns new parameter arrays and updates ``state.velocity``.

    classical: v <- mu v - lr g;  p <- p + v
    nesterov:  v <- mu v - lr g;  p <- p + mu v - lr g
    """
    lr, mu = state.learning_rate, state.momentum
    out = {}
    for name, p in params.items():
        g = grads[name]
        v = mu * state.velocity.get(name, 0) - lr * g
        state.velocity[name] = v
        step = mu * v - lr * g if state.nesterov else v
        out[name] = (p + step).astype(p.dtype, copy=False)
    return out


class LrSchedule:
    """Non-increasing learning rate.

    ``constant``; ``step`` divides by ``factor`` every ``every`` epochs;
    ``plateau`` divides by ``factor`` once the monitored loss has failed to
    improve for ``patience`` consecutive epochs.
    """

    def __init__(self, initial_lr, kind="plateau", factor=2.0, patience=2, every=10, min_lr=1e-8):
        if initial_lr <= 0 and kind != "constant":
            raise ParameterError(f"initial_lr must be positive, got {initial_lr}")
        if kind not in ("constant", "step", "plateau"):
            raise ParameterError(f"unknown schedule {kind!r}")
        if factor < 1 or patience < 1 or every < 1:
            raise ParameterError("need factor >= 1, patience >= 1, every >= 1")
        self.kind, self.factor, self.patience, self.every = kind, factor, patience, every
        self.min_lr = min(min_lr, initial_lr) if initial_lr > 0 else 0.0
        self.lr = initial_lr
        self._best = np.inf
        self._stale = 0

    def update(self, epoch, monitored=None):
        """Report the end of ``epoch`` (1-based); returns the rate for the next epoch."""
        if self.kind == "step" and epoch % self.every == 0:
            self.lr /= self.factor
        elif self.kind == "plateau" and monitored is not None:
            if monitored < self._best:
                self._best, self._stale = monitored, 0
            else:
                self._stale += 1
                if self._stale >= self.patience:
                    self.lr /= self.factor
                    self._stale = 0
        self.lr = max(self.lr, self.min_lr)
        return self.lr


def _batches(n, batch_size, rng=None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def evaluate(network, dataset, batch_size=32):
    """Mean loss, accuracy and predicted classes in evaluation mode."""
    from .tensor import softmax_crossentropy
    total, correct, preds = 0.0, 0, []
    for idx in _batches(len(dataset), batch_size):
        logits = network.forward(dataset.inputs[idx])
        loss, _ = softmax_crossentropy(logits, dataset.labels[idx])
        total += loss * len(idx)
        p = logits.argmax(axis=1)
        correct += int((p == dataset.labels[idx]).sum())
        preds.append(p)
    n = len(dataset)
    return total / n, correct / n, np.concatenate(preds)


@dataclass
class TrainResult:
    history: list
    best_epoch: int
    best_params: dict
    best_state: dict

    def restore_best(self, network):
        network.params = {k: v.copy() for k, v in self.best_params.items()}
        network.state = {k: {n: a.copy() for n, a in st.items()} for k, st in self.best_state.items()}
        return network


def _snapshot(network):
    return ({k: v.copy() for k, v in network.params.items()},
            {k: {n: a.copy() for n, a in st.items()} for k, st in network.state.items()})


def train_loop(network, train, epochs, schedule=None, seed=0, val=None, batch_size=16,
               momentum=0.9, nesterov=False, lr=0.01, metrics_path=None, log_every=1):
    """Train ``network`` in place.

    The per-epoch shuffle is drawn from ``seed`` so two runs with the same
    seed and initialisation are identical.  The best epoch is the one with the
    lowest validation loss (training loss without a validation set); its
    parameters are kept in the result.
    """
    if epochs < 0 or batch_size < 1:
        raise ParameterError("epochs must be >= 0 and batch_size >= 1")
    schedule = schedule or LrSchedule(lr, "constant")
    opt = SgdState(schedule.lr, momentum, nesterov)
    rng = np.random.default_rng(seed)
    history = []
    best = (np.inf, 0) + _snapshot(network)
    writer = None
    fh = None
    if metrics_path:
        fh = open(metrics_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
    try:
        for epoch in range(1, epochs + 1):
            opt.learning_rate = schedule.lr
            loss_sum, correct = 0.0, 0
            for idx in _batches(len(train), batch_size, rng):
                loss, grads, logits = network.loss_grads_logits(train.inputs[idx], train.labels[idx])
                network.params = sgd_step(network.params, grads, opt)
                loss_sum += loss * len(idx)
                correct += int((logits.argmax(axis=1) == train.labels[idx]).sum())
            row = {"epoch": epoch, "lr": opt.learning_rate, "train_loss": loss_sum / len(train),
                   "train_acc": correct / len(train), "val_loss": float("nan"), "val_acc": float("nan")}
            if val is not None:
                row["val_loss"], row["val_acc"], _ = evaluate(network, val)
            history.append(row)
            monitored = row["val_loss"] if val is not None else row["train_loss"]
            if monitored < best[0]:
                best = (monitored, epoch) + _snapshot(network)
            schedule.update(epoch, monitored)
            if writer:
                writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                                 for c in METRIC_COLUMNS])
                fh.flush()
            if log_every and epoch % log_every == 0:
                log.info("epoch %d lr %.4g train %.4f/%.3f val %.4f/%.3f", epoch, row["lr"],
                         row["train_loss"], row["train_acc"], row["val_loss"], row["val_acc"])
    finally:
        if fh:
            fh.close()
    return TrainResult(history, best[1], best[2], best[3])


def read_metrics(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()} for r in rows]


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(network, directory):
    """One RTEN file per parameter and state buffer, plus ``manifest.txt`` and ``model.txt``."""
    os.makedirs(directory, exist_ok=True)
    save_spec(network.spec, os.path.join(directory, "model.txt"))
    lines = []
    for name, arr in sorted(network.params.items()):
        save_rten(os.path.join(directory, f"{name}.rten"), arr)
        lines.append(f"param {name} {'x'.join(map(str, arr.shape)) or '-'}")
    for lid, st in sorted(network.state.items()):
        for key, arr in sorted(st.items()):
            name = f"state.L{lid}.{key}"
            save_rten(os.path.join(directory, f"{name}.rten"), arr)
            lines.append(f"state {name} {'x'.join(map(str, arr.shape))}")
    with open(os.path.join(directory, "manifest.txt"), "w") as fh:
        fh.write(f"dtype = {network.dtype.name}\n")
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(directory):
    spec = load_spec(os.path.join(directory, "model.txt"))
    with open(os.path.join(directory, "manifest.txt")) as fh:
        lines = fh.read().splitlines()
    dtype = lines[0].partition("=")[2].strip()
    net = Network(spec, dtype=np.dtype(dtype))
    seen = set()
    for line in lines[1:]:
        if not line.strip():
            continue
        kind, name, shape = line.split()
        arr = load_rten(os.path.join(directory, f"{name}.rten"))
        want = () if shape == "-" else tuple(int(s) for s in shape.split("x"))
        if arr.shape != want:
            raise FormatError(f"{name}: stored shape {arr.shape} != manifest {want}")
        if kind == "param":
            if name not in net.params or net.params[name].shape != arr.shape:
                raise FormatError(f"checkpoint parameter {name} does not fit the model")
            net.params[name] = arr
            seen.add(name)
        else:
            _, lid, key = name.split(".")
            net.state[int(lid[1:])][key] = arr
    missing = set(net.params) - seen
    if missing:
        raise FormatError(f"checkpoint lacks parameters {sorted(missing)}")
    return net
