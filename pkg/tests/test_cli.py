import csv
import io

import pytest

from relpv.cli import bench, build_parser, main
from relpv.train import load_checkpoint, read_metrics
from relpv.verify import inject_sign_error


def run(*argv, hook=None):
    buf = io.StringIO()
    code = main(list(argv), out=buf, basis_hook=hook)
    return code, buf.getvalue()


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    code, text = run("gen", "--out", str(root), "--classes", "3", "--per-class", "6",
                     "--splits", "train=10,val=4,test=4", "--seed", "2")
    assert code == 0 and "K=3" in text
    return root


def test_verify_and_mutation():
    code, text = run("verify", "--suite", "basis")
    assert code == 0 and "FAIL" not in text
    code, text = run("verify", "--suite", "oracle", hook=inject_sign_error)
    assert code == 1 and "FAIL" in text


def test_zero_epoch_train_keeps_init(small_data, tmp_path):
    from relpv.autograd import Network
    from relpv.models import build_model
    code, _ = run("train", "--data", str(small_data), "--out", str(tmp_path), "--epochs", "0", "--seed", "5")
    assert code == 0
    ck = load_checkpoint(tmp_path / "checkpoint")
    fresh = Network(build_model("lp_mc3d_3", num_classes=3), seed=5)
    assert all(ck.params[k].tobytes() == fresh.params[k].tobytes() for k in fresh.params)
    assert read_metrics(tmp_path / "metrics.csv") == []


def test_train_then_eval(small_data, tmp_path):
    code, text = run("train", "--data", str(small_data), "--out", str(tmp_path), "--epochs", "2",
                     "--model", "mc3d_3")
    assert code == 0 and "best val loss" in text
    rows = read_metrics(tmp_path / "metrics.csv")
    assert [r["epoch"] for r in rows] == [1, 2]
    code, first = run("eval", "--checkpoint", str(tmp_path / "checkpoint"), "--data", str(small_data))
    assert code == 0 and "confusion" in first
    _, second = run("eval", "--checkpoint", str(tmp_path / "checkpoint"), "--data", str(small_data))
    assert first == second


def test_config_file(small_data, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# two epochs\ndata = {small_data}\nout = {tmp_path / 'o'}\nepochs = 2\nlr = 0.01\n")
    code, _ = run("train", "--config", str(cfg), "--epochs", "1")
    assert code == 0
    assert len(read_metrics(tmp_path / "o" / "metrics.csv")) == 1      # command line wins
    cfg.write_text("epochz = 3\n")
    assert run("train", "--config", str(cfg))[0] == 2


def test_error_exits(tmp_path):
    assert run("eval", "--checkpoint", str(tmp_path / "missing"), "--data", str(tmp_path))[0] == 2
    assert run("train", "--data", str(tmp_path / "nothing"), "--out", str(tmp_path))[0] == 2
    assert run("basis", "--n", "4")[0] == 2
    assert run("gen", "--out", str(tmp_path), "--per-class", "1")[0] == 2
    assert run("cost", "--model", "mc3d_4")[0] == 2


@pytest.mark.parametrize("command", ["basis", "gen", "train", "eval", "bench", "cost", "verify"])
def test_help(command, capsys):
    assert main([command, "--help"]) == 0
    assert "--seed" in capsys.readouterr().out


def test_parser_lists_all_commands():
    text = build_parser()[0].format_help()
    for command in ("basis", "gen", "train", "eval", "bench", "cost", "verify"):
        assert command in text


def test_basis_output():
    code, text = run("basis", "--n", "3", "--format", "csv")
    rows = list(csv.reader(io.StringIO(text)))
    assert code == 0 and len(rows) == 27 and len(rows[0]) == 28
    code, text = run("basis", "--n", "3", "--order", "paper")
    assert code == 0 and "26x27" in text


def test_cost_csv():
    code, text = run("cost", "--model", "lp_mc3d_3", "--format", "csv")
    rows = list(csv.reader(io.StringIO(text)))
    assert code == 0 and rows[0][0] == "id" and int(rows[-1][4]) == 12815427


def test_bench_command():
    code, text = run("bench", "--model", "lp_mc3d_3", "--repeats", "1", "--batch", "1")
    assert code == 0 and "median" in text
    _, _, _, times = bench("lp_mc3d_3", repeats=1, batch=1)
    assert len(times) == 1


def test_bench_scaling():
    lp = [bench(f"lp_mc3d_{n}", repeats=5, batch=4)[1] for n in (3, 9)]
    assert lp[1] <= 1.25 * lp[0]
    conv = [bench(f"mc3d_{n}", repeats=3, batch=4)[1] for n in (3, 5, 9)]
    assert conv[0] < conv[1] < conv[2]
