import numpy as np
import pytest

from relpv.autograd import Network, forward_backward
from relpv.data import Dataset, gen_voxel_shapes
from relpv.errors import NumericError, ParameterError
from relpv.init import orthogonal_init
from relpv.models import build_model, loads_spec
from relpv.train import (LrSchedule, SgdState, evaluate, load_checkpoint, read_metrics, save_checkpoint,
                         sgd_step, train_loop)

from helpers import fd_check

# fan-out from the input and from the concat, a skip addition and batch norm
TINY = """
name = tiny
input = 2x4x4x4
pool_rounding = floor
classes = 3
1 relpv inputs=0 n=3 f=4
2 conv3d inputs=0 n=1 f=4
3 concat inputs=1,2
4 batchnorm inputs=3
5 relu inputs=4
6 conv3d inputs=5 n=3 f=8
7 skip_add inputs=6,3
8 avgpool inputs=7 size=2
9 flatten inputs=8
10 fc inputs=9 units=5
11 relu inputs=10
12 fc inputs=11 units=3
13 softmax inputs=12
"""


def tiny_net(seed=0):
    net = Network(loads_spec(TINY), seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 100)
    for name, p in net.params.items():
        if name.endswith((".b", ".b1", ".b4", ".beta")):
            p[...] = 0.1 * rng.standard_normal(p.shape)
    return net


@pytest.mark.parametrize("training", [True, False])
def test_tiny_graph_gradients_fd(training):
    net = tiny_net()
    rng = np.random.default_rng(1)
    net.state[4]["mean"][:] = rng.standard_normal(8) * 0.1
    net.state[4]["var"][:] = 1 + rng.random(8)
    x = rng.standard_normal((3, 2, 4, 4, 4))
    y = np.array([0, 2, 1])
    saved = {k: {n: a.copy() for n, a in v.items()} for k, v in net.state.items()}

    def loss():
        # batch-norm running statistics must not drift between evaluations
        net.state = {k: {n: a.copy() for n, a in v.items()} for k, v in saved.items()}
        return net.forward_backward(x, y, training)[0]

    _, grads = net.forward_backward(x, y, training)
    pairs = [(net.params[k], grads[k]) for k in sorted(net.params)]
    fd_check(loss, pairs, rng, count=2)


def test_input_gradient_through_fanout():
    net = tiny_net(3)
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 2, 4, 4, 4))
    y = np.array([1, 0])
    from relpv.autograd import Tape
    from relpv.tensor import softmax_crossentropy
    tape = Tape()
    logits = net.forward(x, tape=tape)
    _, g = softmax_crossentropy(logits, y)
    gx, _ = tape.backward(net, {net.spec.logits_id(): g})

    def loss():
        return softmax_crossentropy(net.forward(x), y)[0]

    fd_check(loss, [(x, gx)], rng, count=8)


def test_full_desk_model_spot_check():
    net = Network(build_model("lp_mc3d_3", "desk"), seed=0, dtype=np.float64)
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2,) + net.spec.input_shape)
    y = np.array([1, 4])
    _, grads = forward_backward(net, x, y)
    names = sorted(net.params)
    picks = [names[i] for i in rng.choice(len(names), 5, replace=False)]
    fd_check(lambda: net.forward_backward(x, y)[0], [(net.params[k], grads[k]) for k in picks],
             rng, count=1, rtol=1e-4)


def test_duplicate_sample_and_zero_head():
    net = tiny_net()
    x = np.random.default_rng(5).standard_normal((1, 2, 4, 4, 4))
    one, _ = net.forward_backward(x, [2], training=False)
    two, _ = net.forward_backward(np.concatenate([x, x]), [2, 2], training=False)
    assert one == pytest.approx(two, rel=1e-12)
    net.params["L12.w"][:] = 0
    net.params["L12.b"][:] = 0
    loss, _ = net.forward_backward(x, [1], training=False)
    assert loss == pytest.approx(np.log(3))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_raises():
    net = tiny_net()
    net.params["L12.w"][:] = np.inf
    with pytest.raises(NumericError):
        net.forward_backward(np.ones((1, 2, 4, 4, 4)), [0])


def test_sgd_examples():
    p = {"a": np.array([1.0, 2.0])}
    g = {"a": np.array([0.5, -1.0])}
    out = sgd_step(p, g, SgdState(1.0, momentum=0.0))
    assert np.array_equal(out["a"], p["a"] - g["a"])
    st = SgdState(0.1, momentum=0.9)
    q = sgd_step(sgd_step(p, g, st), g, st)
    assert np.allclose(q["a"], p["a"] - 0.1 * g["a"] - 0.1 * 1.9 * g["a"])
    # nesterov: first step moves by mu*v - lr*g with v = -lr*g
    st = SgdState(0.1, momentum=0.9, nesterov=True)
    q = sgd_step(p, g, st)
    assert np.allclose(q["a"], p["a"] - 0.1 * g["a"] * 1.9)
    z = {"a": np.zeros(2)}
    assert np.array_equal(sgd_step(p, z, SgdState(0.1))["a"], p["a"])
    with pytest.raises(ParameterError):
        SgdState(0.1, momentum=1.0)


def test_orthogonal_init():
    q = orthogonal_init((8, 8), seed=3)
    assert np.abs(q.T @ q - np.eye(8)).max() < 1e-5
    assert np.array_equal(q, orthogonal_init((8, 8), seed=3))
    assert abs(orthogonal_init((1, 1), seed=1).item()) == pytest.approx(1.0)
    wide = orthogonal_init((3, 10), seed=0)
    assert np.allclose(wide @ wide.T, np.eye(3))
    tall = orthogonal_init((10, 3), seed=0)
    assert np.allclose(tall.T @ tall, np.eye(3))
    k = orthogonal_init((4, 2, 3, 3, 3), seed=0).reshape(4, -1)
    assert np.allclose(k @ k.T, np.eye(4))
    assert orthogonal_init((5,), seed=0).shape == (5,)


def test_schedules():
    s = LrSchedule(0.1, "plateau", factor=2, patience=2)
    rates = [s.update(e, loss) for e, loss in enumerate([1.0, 0.9, 0.95, 0.96, 0.97, 0.97, 0.5], 1)]
    assert rates == [0.1, 0.1, 0.1, 0.05, 0.05, 0.025, 0.025]
    s = LrSchedule(0.003, "step", factor=10, every=4)
    rates = [s.update(e) for e in range(1, 13)]
    assert rates[2] == 0.003 and rates[3] == pytest.approx(0.0003) and rates[-1] == pytest.approx(3e-6)
    assert all(a >= b > 0 for a, b in zip(rates, rates[1:]))
    with pytest.raises(ParameterError):
        LrSchedule(0.1, "cosine")
    with pytest.raises(ParameterError):
        LrSchedule(-1.0, "plateau")


def _two_class_voxels():
    ds = gen_voxel_shapes(2, 12, grid=16, seed=0)
    return ds


TOY = """
name = toy
input = 1x16x16x16
pool_rounding = floor
classes = 2
1 relpv inputs=0 n=3 f=4
2 relu inputs=1
3 maxpool inputs=2 size=4
4 flatten inputs=3
5 fc inputs=4 units=2
6 softmax inputs=5
"""


def test_sanity_run_reaches_full_train_accuracy():
    ds = _two_class_voxels()
    net = Network(loads_spec(TOY), seed=0)
    res = train_loop(net, ds, 20, LrSchedule(0.01, "constant"), seed=0, batch_size=8)
    assert max(r["train_acc"] for r in res.history) == 1.0
    assert evaluate(net, ds)[1] == 1.0


def test_first_epoch_loss_near_log_k():
    net = Network(build_model("mc3d_3", "desk"), seed=0)
    x = np.random.default_rng(0).standard_normal((8,) + net.spec.input_shape)
    loss, _ = net.forward_backward(x, np.arange(8) % 5)
    assert abs(loss - np.log(5)) / np.log(5) < 0.1


def test_zero_learning_rate_keeps_parameters(tmp_path):
    ds = _two_class_voxels()
    net = Network(loads_spec(TOY), seed=1)
    before = {k: v.copy() for k, v in net.params.items()}
    sched = LrSchedule(0.0, "constant")
    res = train_loop(net, ds, 3, sched, seed=0, batch_size=8, metrics_path=tmp_path / "m.csv")
    assert all(np.array_equal(before[k], net.params[k]) for k in before)
    losses = [r["train_loss"] for r in res.history]
    assert max(losses) - min(losses) < 1e-6
    assert len(read_metrics(tmp_path / "m.csv")) == 3


def test_training_is_deterministic(tmp_path):
    ds = _two_class_voxels()
    runs = []
    for i in range(2):
        net = Network(loads_spec(TOY), seed=4)
        train_loop(net, ds, 2, LrSchedule(0.01, "plateau"), seed=9, val=ds, batch_size=5,
                   metrics_path=tmp_path / f"{i}.csv")
        runs.append((tmp_path / f"{i}.csv").read_bytes())
    assert runs[0] == runs[1]


def test_best_snapshot_is_kept():
    ds = _two_class_voxels()
    net = Network(loads_spec(TOY), seed=0)
    res = train_loop(net, ds, 4, LrSchedule(0.01, "constant"), seed=0, val=ds, batch_size=8)
    best = min(res.history, key=lambda r: r["val_loss"])
    assert res.best_epoch == best["epoch"]
    res.restore_best(net)
    assert evaluate(net, ds)[0] == pytest.approx(best["val_loss"], rel=1e-6)


def test_checkpoint_roundtrip(tmp_path):
    net = tiny_net(2)
    x = np.random.default_rng(3).standard_normal((2, 2, 4, 4, 4))
    net.forward(x, training=True)           # moves the running statistics away from init
    save_checkpoint(net, tmp_path / "ck")
    back = load_checkpoint(tmp_path / "ck")
    assert back.dtype == net.dtype
    assert all(back.params[k].tobytes() == net.params[k].tobytes() for k in net.params)
    assert back.state[4]["mean"].tobytes() == net.state[4]["mean"].tobytes()
    assert np.array_equal(back.forward(x), net.forward(x))
    ds = Dataset(x, [0, 1], 3)
    assert evaluate(back, ds)[0] == evaluate(net, ds)[0]
    (tmp_path / "ck" / "L1.w1.rten").unlink()
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "ck")
