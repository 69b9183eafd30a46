import csv
from pathlib import Path

import numpy as np
import pytest

from snaplab import cli, data
from snaplab.rng import Rng

ROOT = Path(__file__).resolve().parents[1]
TOY = ROOT / "configs" / "toy.ini"
PRETRAINED = ROOT / "pretrained"


def read_rows(path):
    lines = [line for line in Path(path).read_text().splitlines() if not line.startswith("#")]
    return list(csv.DictReader(lines))


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    assert cli.main(["train", "--config", str(TOY), "--output-dir", str(out)]) == 0
    return out


def test_train_outputs(toy_run):
    rows = read_rows(toy_run / "metrics.csv")
    assert len(rows) == 10 and list(rows[0]) == list(cli.METRIC_COLUMNS)
    assert (toy_run / "model.snap").stat().st_size > 0
    assert (toy_run / "metrics.csv").read_text().startswith("# config_sha256=")
    assert len(read_rows(toy_run / "timings.csv")) == 10


def test_eval_union_outputs(toy_run, tmp_path, capsys):
    code = cli.main(["eval-union", "--config", str(TOY), "--checkpoint", str(toy_run / "model.snap"),
                     "--output-dir", str(tmp_path)])
    assert code == 0 and "A_union=" in capsys.readouterr().out
    (row,) = read_rows(tmp_path / "report.csv")
    assert float(row["A_union"]) <= min(float(row[k]) for k in ("A_nat", "A_linf", "A_l2", "A_l1"))
    attacks_rows = read_rows(tmp_path / "attacks.csv")
    assert len(attacks_rows) == 3 * 120


def test_eval_at_zero_budget_equals_natural(toy_run, tmp_path):
    sets = ["attack.linf_eps=0", "attack.l2_eps=0", "attack.l1_eps=0"]
    args = ["eval-union", "--config", str(TOY), "--checkpoint", str(toy_run / "model.snap"),
            "--output-dir", str(tmp_path)]
    for s in sets:
        args += ["--set", s]
    assert cli.main(args) == 0
    (row,) = read_rows(tmp_path / "report.csv")
    assert row["A_nat"] == row["A_linf"] == row["A_l2"] == row["A_l1"] == row["A_union"]


def test_pretrained_toy_report_reproduces(tmp_path):
    assert cli.main(["eval-union", "--config", str(TOY), "--checkpoint", str(PRETRAINED / "toy.snap"),
                     "--output-dir", str(tmp_path)]) == 0
    assert (tmp_path / "report.csv").read_bytes() == (PRETRAINED / "toy_report.csv").read_bytes()


def test_pretrained_toy_checkpoint_retrains_bit_identically(toy_run):
    assert (toy_run / "model.snap").read_bytes() == (PRETRAINED / "toy.snap").read_bytes()


def test_sweep_rows(tmp_path):
    args = ["sweep-pnoise", "--config", str(TOY), "--p-noise", "0,0.5,1", "--output-dir", str(tmp_path),
            "--set", "train.epochs=2", "--set", "attack.steps=3"]
    assert cli.main(args) == 0
    rows = read_rows(tmp_path / "sweep.csv")
    assert [float(r["p_noise"]) for r in rows] == [0.0, 0.5, 1.0]


def test_subspace_rows(toy_run, tmp_path):
    ck = str(toy_run / "model.snap")
    args = ["subspace", "--config", str(TOY), "--vanilla", ck, "--robust", ck, "--output-dir", str(tmp_path),
            "--set", "attack.steps=3", "--set", "eval.restarts=1"]
    assert cli.main(args) == 0
    rows = read_rows(tmp_path / "subspace.csv")
    assert len(rows) == 2 * 3 * 16
    summary = read_rows(tmp_path / "subspace_summary.csv")
    assert len(summary) == 6 and all(1 <= int(r["effective_dim"]) <= 16 for r in summary)


def test_noise_hist(toy_run, tmp_path, capsys):
    args = ["noise-hist", "--config", str(TOY), "--checkpoint", str(toy_run / "model.snap"),
            "--threshold", "0.5", "--samples", "2000", "--output-dir", str(tmp_path)]
    assert cli.main(args) == 0
    rows = read_rows(tmp_path / "hist.csv")
    assert len(rows) == 50 and sum(int(r["count"]) for r in rows) == 2000
    assert "mean_fraction=" in (tmp_path / "hist.csv").read_text()
    assert "mean_fraction=" in capsys.readouterr().out


def test_idx_source(tmp_path):
    train, test = data.load_digits(n_train=200, n_test=50, rng=0)
    for ds, stem in ((train, "train"), (test, "test")):
        data.write_idx(ds, tmp_path / f"{stem}-images.idx", tmp_path / f"{stem}-labels.idx")
    cfg = tmp_path / "idx.ini"
    cfg.write_text("[data]\nsource = idx\ntrain_images = train-images.idx\ntrain_labels = train-labels.idx\n"
                   "test_images = test-images.idx\ntest_labels = test-labels.idx\nclasses = 0,1,2\n"
                   "[train]\nepochs = 1\nbase_steps = 2\n")
    assert cli.main(["train", "--config", str(cfg), "--output-dir", str(tmp_path / "out")]) == 0
    assert len(read_rows(tmp_path / "out" / "metrics.csv")) == 1


def test_error_exit_codes(tmp_path, capsys):
    assert cli.main(["train", "--config", str(tmp_path / "missing.ini")]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[data]\nsource = idx\ntrain_images = nope.idx\ntrain_labels = x\ntest_images = y\n"
                   "test_labels = z\n")
    assert cli.main(["train", "--config", str(bad)]) == 2
    assert "bad.ini:3" in capsys.readouterr().err
    junk = tmp_path / "junk.snap"
    junk.write_bytes(b"not a checkpoint")
    assert cli.main(["eval-union", "--config", str(TOY), "--checkpoint", str(junk),
                     "--output-dir", str(tmp_path)]) == 2


def test_train_determinism_via_cli(tmp_path):
    for run in ("a", "b"):
        assert cli.main(["train", "--config", str(TOY), "--output-dir", str(tmp_path / run)]) == 0
    for name in ("metrics.csv", "model.snap"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
