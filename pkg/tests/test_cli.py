"""Command-line interface: subcommands, exit codes and diagnostics."""

import csv
import io
import subprocess
import sys

import pytest

from freecg.cli import EXIT_CHECK, EXIT_IO, EXIT_OK, EXIT_USAGE, main

TINY = ["channels=8", "num_heads=2", "num_groups=2", "num_rbf=4", "cutoff=4.0"]


def _sets(pairs):
    out = []
    for p in pairs:
        out += ["--set", p]
    return out


def run(*argv):
    out = io.StringIO()
    code = main(list(argv), out=out)
    return code, out.getvalue()


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "d.xyz"
    assert run("gen-data", "--atoms", "3", "--frames", "20", "--seed", "1", "--out", str(path), "--box", "3")[0] == 0
    return path


@pytest.fixture(scope="module")
def checkpoint(dataset, tmp_path_factory):
    d = tmp_path_factory.mktemp("ckpt")
    ckpt, metrics = d / "m.fcg", d / "metrics.csv"
    code, text = run("train", "--data", str(dataset), "--out", str(ckpt), "--metrics", str(metrics),
                     *_sets(TINY + ["batch_size=4", "warmup_steps=2"]), "--max-steps", "8")
    assert code == EXIT_OK, text
    assert "steps=8" in text and "test energy_mae=" in text
    assert metrics.read_text().startswith("epoch,lr,train_loss,val_energy_mae,val_force_mae")
    return ckpt


def test_gen_data_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.xyz", tmp_path / "b.xyz"
    for p in (a, b):
        assert run("gen-data", "--atoms", "4", "--frames", "10", "--seed", "3", "--out", str(p))[0] == 0
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.xyz"
    run("gen-data", "--atoms", "4", "--frames", "10", "--seed", "4", "--out", str(c))
    assert a.read_bytes() != c.read_bytes()


def test_eval_prints_maes(checkpoint, dataset):
    code, text = run("eval", "--ckpt", str(checkpoint), "--data", str(dataset))
    assert code == EXIT_OK
    assert text.startswith("frames=20 energy_mae=") and "force_mae=" in text
    code, text = run("eval", "--ckpt", str(checkpoint), "--data", str(dataset), "--split", "test")
    assert code == EXIT_OK and text.startswith("frames=2 ")


def test_eval_is_deterministic(checkpoint, dataset):
    assert run("eval", "--ckpt", str(checkpoint), "--data", str(dataset)) == \
        run("eval", "--ckpt", str(checkpoint), "--data", str(dataset))


def test_train_is_deterministic(dataset, tmp_path):
    outs = []
    for k in range(2):
        ckpt = tmp_path / f"m{k}.fcg"
        run("train", "--data", str(dataset), "--out", str(ckpt), *_sets(TINY + ["batch_size=4"]), "--max-steps", "3")
        outs.append(ckpt.read_bytes())
    assert outs[0] == outs[1]


def test_eval_config_mismatch_exits_2(checkpoint, dataset, capsys):
    code, _ = run("eval", "--ckpt", str(checkpoint), "--data", str(dataset), *_sets(["channels=16", "num_heads=2",
                                                                                     "num_groups=2", "num_rbf=4"]))
    assert code == EXIT_USAGE
    err = capsys.readouterr().err
    assert err.startswith("freecg: usage error:")
    assert "channels: config=16 checkpoint=8" in err


def test_eval_matching_config_accepted(checkpoint, dataset, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("\n".join(TINY) + "\n")
    assert run("eval", "--ckpt", str(checkpoint), "--data", str(dataset), "--config", str(cfg))[0] == EXIT_OK


def test_info(checkpoint):
    code, text = run("info", "--ckpt", str(checkpoint))
    assert code == EXIT_OK
    lines = dict(line.split("=", 1) for line in text.strip().splitlines())
    assert lines["channels"] == "8" and lines["num_layers"] == "2"
    assert int(lines["params.total"]) > 0


def test_check_seed_7_passes():
    code, text = run("check", "--suite", "all", "--seed", "7")
    assert code == EXIT_OK, text
    lines = text.strip().splitlines()
    assert lines and all(line.startswith("PASS ") for line in lines)


def test_check_trained_checkpoint(checkpoint):
    code, text = run("check", "--suite", "permutation", "--ckpt", str(checkpoint))
    assert code == EXIT_OK, text


def test_check_failure_exits_1(monkeypatch, capsys):
    from freecg import verify

    monkeypatch.setattr(verify, "suite_cg_oracle", lambda seed=0: [verify.CheckResult("broken", 1.0, 0.5)])
    code, text = run("check", "--suite", "cg-oracle")
    assert code == EXIT_CHECK
    assert text.startswith("FAIL broken")
    assert capsys.readouterr().err.startswith("freecg: check error:")


def test_bench_paths(tmp_path):
    code, text = run("bench-paths")
    assert code == EXIT_OK
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["l1", "l2", "lo", "mult_count", "add_count", "quoted_table", "quoted_text"]
    out = tmp_path / "p.csv"
    run("bench-paths", "--csv", str(out))
    assert out.read_text() == text


def test_bench_group(tmp_path):
    out = tmp_path / "g.csv"
    code, _ = run("bench-group", "--T", "8", "--groups", "1,2,4", "--csv", str(out))
    assert code == EXIT_OK
    rows = list(csv.reader(out.open()))
    assert rows[0][:3] == ["mode", "T", "G"] and len(rows) == 4


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["frobnicate"],
        ["gen-data", "--atoms", "3"],
        ["gen-data", "--atoms", "3", "--frames", "2", "--out", "x.xyz", "--bogus"],
        ["bench-group", "--groups", "1,x"],
        ["bench-group", "--T", "12", "--groups", "5"],
        ["check", "--suite", "nope"],
        ["gen-data", "--atoms", "40", "--frames", "1", "--out", "x.xyz"],
    ],
)
def test_usage_errors_exit_2(argv, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run(*argv)[0] == EXIT_USAGE
    err = capsys.readouterr().err
    assert err.startswith("freecg: usage error:") and err.count("\n") == 1


def test_unknown_config_key_exits_2(dataset, tmp_path, capsys):
    code, _ = run("train", "--data", str(dataset), "--out", str(tmp_path / "m"), "--set", "colour=blue")
    assert code == EXIT_USAGE
    assert "colour" in capsys.readouterr().err


def test_io_errors_exit_3(tmp_path, capsys):
    assert run("eval", "--ckpt", str(tmp_path / "none.fcg"), "--data", str(tmp_path / "none.xyz"))[0] == EXIT_IO
    bad = tmp_path / "bad.xyz"
    bad.write_text("2\nenergy=0\nH 0 0 0\n")
    code, _ = run("train", "--data", str(bad), "--out", str(tmp_path / "m"))
    assert code == EXIT_IO
    err = capsys.readouterr().err
    assert "freecg: io error:" in err and "line 4" in err
    junk = tmp_path / "junk.fcg"
    junk.write_bytes(b"nothing")
    assert run("info", "--ckpt", str(junk))[0] == EXIT_IO


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "freecg", "bench-paths"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("l1,l2,lo")
