import os

import numpy as np
import pytest

from poseadapt import cli
from poseadapt.config import config_hash, dump_config, load_config

TINY_CONFIG = """
[model]
hidden = 8 8

[source]
n_joints = 5
n_distractors = 2

[pretrain]
steps = 60
batch_size = 16
n_train = 80
n_val = 20

[adapt]
alpha = 0.0002
eta = 0.0002

[run]
schemes = Final B1
seeds = 0 1
steps = 1
n_frames = 12
"""


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.ini"
    path.write_text(TINY_CONFIG)
    return str(path)


@pytest.fixture(scope="module")
def pretrained_dir(tiny_config, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("out"))
    assert cli.main(["pretrain", "--config", tiny_config, "--out", out]) == 0
    return out


def test_config_defaults_round_trip(tmp_path):
    cfg = load_config(None)
    text = dump_config(cfg)
    path = tmp_path / "full.ini"
    path.write_text(text)
    again = load_config(path)
    assert dump_config(again) == text
    assert config_hash(again) == config_hash(cfg)


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[adapt]\nwarp_speed = 9\n")
    with pytest.raises(ValueError):
        load_config(path)


def test_empty_config_is_default(tmp_path):
    path = tmp_path / "empty.ini"
    path.write_text("")
    assert config_hash(load_config(path)) == config_hash(load_config(None))


def test_default_losses_are_standard():
    cfg = load_config(None)
    lw = cfg.adapt.loss_weights
    assert (lw.reproj, lw.prior, lw.replay, lw.motion, lw.teacher) == (10.0, 1.0, 0.1, 0.1, 0.1)
    assert cfg.adapt.n_steps == 1


def test_pretrain_writes_artifacts(pretrained_dir):
    for name in ("checkpoint.bin", "body.txt", "pretrain_metrics.csv", "config_used.ini"):
        assert os.path.exists(os.path.join(pretrained_dir, name))


def test_adapt_grid_and_outputs(tiny_config, pretrained_dir):
    rc = cli.main(["adapt", "--config", tiny_config, "--out", pretrained_dir])
    assert rc == 0
    runs = sorted(os.listdir(os.path.join(pretrained_dir, "runs")))
    assert runs == [
        "run_B1_T1_seed0.csv", "run_B1_T1_seed1.csv",
        "run_Final_T1_seed0.csv", "run_Final_T1_seed1.csv",
    ]
    first = open(os.path.join(pretrained_dir, "runs", runs[0])).readline()
    assert first.startswith("# poseadapt-run")
    assert "config=" in first and "seed=" in first and "scheme=" in first
    assert os.path.exists(os.path.join(pretrained_dir, "summary.csv"))
    assert os.path.exists(os.path.join(pretrained_dir, "scatter.csv"))


def test_adapt_missing_checkpoint(tiny_config, tmp_path):
    rc = cli.main(["adapt", "--config", tiny_config, "--out", str(tmp_path)])
    assert rc == 1


def test_single_run_grid_is_one_csv(tiny_config, pretrained_dir, tmp_path):
    out = str(tmp_path / "single")
    os.makedirs(out)
    rc = cli.main([
        "adapt", "--config", tiny_config, "--out", out,
        "--checkpoint", os.path.join(pretrained_dir, "checkpoint.bin"),
        "--scheme", "Final", "--seed", "3", "--steps", "1", "--frames", "8",
    ])
    assert rc == 0
    assert os.listdir(os.path.join(out, "runs")) == ["run_Final_T1_seed3.csv"]


def test_report_aggregates(pretrained_dir):
    rc = cli.main(["report", "--runs", pretrained_dir])
    assert rc == 0
    report_dir = os.path.join(pretrained_dir, "report")
    agg = open(os.path.join(report_dir, "aggregate.csv")).read()
    assert "median" in agg.splitlines()[0]
    assert "Final" in agg and "B1" in agg
    assert os.path.exists(os.path.join(report_dir, "summary.txt"))


def test_report_on_empty_dir(tmp_path):
    assert cli.main(["report", "--runs", str(tmp_path)]) == 1


def test_report_malformed_csv_names_row(pretrained_dir, tmp_path, capsys):
    bad_dir = tmp_path / "runs"
    bad_dir.mkdir()
    src = os.path.join(pretrained_dir, "runs", "run_B1_T1_seed0.csv")
    lines = open(src).read().splitlines()
    lines[5] = "garbage,row"
    (bad_dir / "run_B1_T1_seed0.csv").write_text("\n".join(lines) + "\n")
    rc = cli.main(["report", "--runs", str(tmp_path)])
    assert rc == 1
    assert "row 6" in capsys.readouterr().err


def test_acceptance_check_exit_code(pretrained_dir, tmp_path):
    # duplicate the B1 runs under the Final name with inflated errors so the
    # ordering check must fail
    import csv

    runs = tmp_path / "runs"
    runs.mkdir()
    for seed in (0, 1):
        src = os.path.join(pretrained_dir, "runs", f"run_B1_T1_seed{seed}.csv")
        text = open(src).read()
        (runs / f"run_B1_T1_seed{seed}.csv").write_text(text)
        lines = text.splitlines()
        header = lines[0].replace("scheme=B1", "scheme=Final")
        rows = [lines[1]]
        for ln in lines[2:]:
            parts = ln.split(",")
            parts[1] = "Final"
            parts[12] = repr(float(parts[12]) * 10.0)
            rows.append(",".join(parts))
        (runs / f"run_Final_T1_seed{seed}.csv").write_text(
            "\n".join([header] + rows) + "\n"
        )
    rc = cli.main(["report", "--runs", str(tmp_path), "--check-acceptance"])
    assert rc == 3


def test_second_order_flag(tiny_config, pretrained_dir, tmp_path):
    out = str(tmp_path / "first")
    rc = cli.main([
        "adapt", "--config", tiny_config, "--out", out,
        "--checkpoint", os.path.join(pretrained_dir, "checkpoint.bin"),
        "--scheme", "Final", "--seed", "0", "--frames", "8",
        "--second-order", "first",
    ])
    assert rc == 0
    cfg_text = open(os.path.join(out, "config_used.ini")).read()
    assert "second_order = first" in cfg_text


def test_run_csv_determinism(tiny_config, pretrained_dir, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = str(tmp_path / name)
        rc = cli.main([
            "adapt", "--config", tiny_config, "--out", out,
            "--checkpoint", os.path.join(pretrained_dir, "checkpoint.bin"),
            "--scheme", "B1", "--seed", "0", "--frames", "10",
        ])
        assert rc == 0
        outs.append(out)

    def strip_wall(path):
        lines = open(path).read().splitlines()
        out = [lines[0], lines[1]]
        for ln in lines[2:]:
            out.append(",".join(ln.split(",")[:-1]))
        return "\n".join(out)

    a = strip_wall(os.path.join(outs[0], "runs", "run_B1_T1_seed0.csv"))
    c = strip_wall(os.path.join(outs[1], "runs", "run_B1_T1_seed0.csv"))
    assert a == c
    sa = open(os.path.join(outs[0], "summary.csv")).read()
    sb = open(os.path.join(outs[1], "summary.csv")).read()
    assert sa == sb
