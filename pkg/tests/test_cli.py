import os
import subprocess
import sys

import pytest

from codepth.cli import main

TINY_CONFIG = """\
width = 32
height = 24
frames_per_domain = 20
domains_per_distribution = 2
eval_frames_per_domain = 2
pretrain_epochs = 1
eval_every = 9
checkpoint_every = 9
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(TINY_CONFIG)
    return str(path)


def test_full_lifecycle(tmp_path, config, capsys):
    out = str(tmp_path / "runs")
    assert main(["pretrain", "--config", config, "--out", out, "--seed", "3"]) == 0
    for m in ("ft", "prop"):
        assert main(["online", "--config", config, "--out", out, "--seed", "3", "--method", m]) == 0
    assert os.path.isfile(os.path.join(out, "stereo_fine_tune_s3", "report.csv"))
    ckpt = os.path.join(out, "stereo_proposed_s3", "final.ckpt")
    assert main(["eval", "--config", config, "--out", out, "--seed", "3", "--checkpoint", ckpt]) == 0
    assert main(["report", "--out", out]) == 0
    printed = capsys.readouterr().out
    assert "cross_dist" in printed and "summary.csv" in printed and "curves.csv" in printed


def test_unknown_config_key(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("lr = 1e-4\nlearnig_rate = 3\n")
    assert main(["pretrain", "--config", str(bad), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert err.startswith("codepth pretrain: error:") and "learnig_rate" in err


def test_missing_checkpoint(tmp_path, config, capsys):
    assert main(["online", "--config", config, "--out", str(tmp_path)]) == 2
    assert "run pretrain first" in capsys.readouterr().err


def test_mode_mismatch(tmp_path, config, capsys):
    out = str(tmp_path)
    assert main(["pretrain", "--config", config, "--out", out]) == 0
    ckpt = os.path.join(out, "pretrain_stereo_s0", "pretrain.ckpt")
    assert main(["eval", "--config", config, "--out", out, "--mode", "sfm", "--checkpoint", ckpt]) == 2
    assert "stereo mode" in capsys.readouterr().err


def test_bad_method_choice():
    with pytest.raises(SystemExit) as e:
        main(["online", "--method", "sgd"])
    assert e.value.code == 2


def test_report_without_runs(tmp_path, capsys):
    assert main(["report", "--out", str(tmp_path)]) == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "codepth", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("pretrain", "online", "eval", "report"):
        assert cmd in res.stdout
