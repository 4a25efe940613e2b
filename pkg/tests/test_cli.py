import csv
import json

import pytest

from toothgd.cli import main
from toothgd.heatmap import load_detections
from toothgd.volume import load_volume


@pytest.fixture(scope="module")
def ph(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "ph"
    assert main(["phantom", "--seed", "2", "--out", str(d)]) == 0
    return d


def test_no_args_prints_usage(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_command_and_flag(capsys):
    assert main(["frobnicate"]) == 1
    assert main(["phantom", "--colour", "red"]) == 1
    assert "usage" in capsys.readouterr().err


def test_help_exits_zero(capsys):
    assert main(["decode", "--help"]) == 0
    assert "--threshold" in capsys.readouterr().out


def test_io_error_exit_code(tmp_path, capsys):
    assert main(["decode", "--in", str(tmp_path / "missing")]) == 2
    assert "error" in capsys.readouterr().err


def test_validation_error_exit_code(tmp_path):
    assert main(["phantom", "--dims", "10", "10", "10", "--out", str(tmp_path / "p")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2")
    assert main(["run", "--config", str(bad)]) == 1


def test_phantom_outputs(ph):
    assert load_volume(ph / "labels").dims == (128, 128, 128)
    assert load_volume(ph / "intensity").dtype_tag == "f32"
    assert len(load_detections(ph / "gt.json")) == 32


def test_encode_decode_round_trip(ph, tmp_path):
    st = tmp_path / "stack"
    assert main(["encode", "--gt", str(ph / "gt.json"), "--like", str(ph / "labels"),
                 "--out", str(st)]) == 0
    assert main(["decode", "--in", str(st), "--threshold", "0", "--out", str(tmp_path / "d.json")]) == 0
    got = load_detections(tmp_path / "d.json")
    gt = load_detections(ph / "gt.json")
    assert [(d.fdi, d.center, d.dims) for d in got] == [(d.fdi, d.center, d.dims) for d in gt]


def test_distmap_and_segment(ph, tmp_path):
    assert main(["distmap", "--labels", str(ph / "labels"), "--label", "1",
                 "--out", str(tmp_path / "d1"), "--mask-out", str(tmp_path / "m1")]) == 0
    mask = load_volume(tmp_path / "m1").data
    labels = load_volume(ph / "labels").data
    assert (mask.astype(bool) == (labels == 1)).all()
    assert main(["segment", "--labels", str(ph / "labels"), "--dets", str(ph / "gt.json"),
                 "--out", str(tmp_path / "masks"), "--jobs", "2"]) == 0
    assert len(list((tmp_path / "masks").glob("tooth_*.raw"))) == 32


def test_eval(ph, tmp_path, capsys):
    assert main(["eval", "--pred", str(ph / "gt.json"), "--gt", str(ph / "gt.json"),
                 "--labels", str(ph / "labels"), "--svg", "--out", str(tmp_path / "ev")]) == 0
    assert "ap50=1.000000" in capsys.readouterr().out
    assert (tmp_path / "ev" / "pr_curve.svg").exists()
    assert main(["eval", "--pred", str(ph / "gt.json"), "--gt"]) == 1


def test_gradcheck_command(tmp_path):
    out = tmp_path / "g.csv"
    assert main(["gradcheck", "--trials", "3", "--seed", "7", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 18 and all(float(r["max_rel_error"]) <= 1e-4 for r in rows)


def test_demo_command(tmp_path):
    out = tmp_path / "demo"
    assert main(["demo-disentangle", "--dims", "16", "16", "16", "--extent", "8",
                 "--max-iters", "20", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary) == {"lambda_gd=0", "lambda_gd=1"}
    assert (out / "gd_loss.csv").exists() and (out / "gd_loss.svg").exists()
    assert main(["demo-disentangle", "--fixture", "three-tooth", "--out", str(out)]) == 1


def test_run_uses_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("TOOTHGD_OUTPUT_DIR", str(tmp_path / "env"))
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seeds": [0], "svg": False}))
    assert main(["run", "--config", str(cfg)]) == 0
    assert (tmp_path / "env" / "run" / "report.csv").exists()
