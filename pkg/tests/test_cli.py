import csv

import numpy as np
import pytest

from relpose.cli import main

TINY_CONFIG = """[model]
seq_len = 9
feature_dim = 16
tcn_channels = 16
dense_hidden = 32
{extra}
[train]
epochs = 1,1,1
batch_size = 16
"""


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen", "--seed", "3", "--frames", "30", "--sequences", "4", "--out", str(root / "d.rpd")]) == 0
    (root / "tiny.ini").write_text(TINY_CONFIG.format(extra=""))
    assert main(["train", "--config", str(root / "tiny.ini"), "--data", str(root / "d.rpd"),
                 "--out", str(root / "run"), "--quiet"]) == 0
    return root


def test_gen_is_byte_identical(tmp_path, capsys):
    for name in ("a", "b"):
        assert main(["gen", "--seed", "5", "--frames", "20", "--sequences", "2", "--out", str(tmp_path / f"{name}.rpd")]) == 0
    assert (tmp_path / "a.rpd").read_bytes() == (tmp_path / "b.rpd").read_bytes()
    assert (tmp_path / "gen_config.ini").exists()


def test_gen_amplitude_zero_reports_zero_mr(tmp_path, capsys):
    main(["gen", "--amplitude", "0", "--frames", "20", "--sequences", "2", "--out", str(tmp_path / "s.rpd")])
    assert "mean 0.000000" in capsys.readouterr().out


def test_gen_defaults_round_trip(tmp_path):
    from relpose.data import read_dataset

    assert main(["gen", "--out", str(tmp_path / "d.rpd")]) == 0
    ds = read_dataset(tmp_path / "d.rpd")
    assert len(ds.sequences) == 20 and ds.sequences[0].num_frames == 200


def test_train_all_outputs(workspace):
    run = workspace / "run"
    for name in ("stage1.ckpt", "stage2.ckpt", "stage3.ckpt", "metrics.csv", "config.ini", "train_config.ini"):
        assert (run / name).exists(), name
    assert len(_rows(run / "metrics.csv")) == 3


def test_train_rerun_is_byte_identical(workspace, tmp_path):
    assert main(["train", "--config", str(workspace / "tiny.ini"), "--data", str(workspace / "d.rpd"),
                 "--out", str(tmp_path), "--quiet"]) == 0
    assert (tmp_path / "metrics.csv").read_bytes() == (workspace / "run" / "metrics.csv").read_bytes()


def test_stage2_resume_and_verify_freeze(workspace, tmp_path, capsys):
    run = workspace / "run"
    args = ["train", "--config", str(workspace / "tiny.ini"), "--data", str(workspace / "d.rpd"), "--quiet"]
    assert main(args + ["--stage", "2", "--resume", str(run / "stage1.ckpt"), "--out", str(tmp_path)]) == 0
    assert main(["verify-freeze", "--before", str(run / "stage1.ckpt"), "--after", str(tmp_path / "stage2.ckpt")]) == 0
    assert main(["verify-freeze", "--before", str(run / "stage1.ckpt"), "--after", str(run / "stage3.ckpt")]) == 1
    assert "CHANGED" in capsys.readouterr().out


def test_missing_prerequisite_names_stage(workspace, tmp_path, capsys):
    code = main(["train", "--config", str(workspace / "tiny.ini"), "--data", str(workspace / "d.rpd"),
                 "--stage", "3", "--out", str(tmp_path)])
    assert code == 3
    assert "stage 2" in capsys.readouterr().err


def test_eval_csv(workspace, tmp_path):
    assert main(["eval", "--ckpt", str(workspace / "run" / "stage3.ckpt"), "--data", str(workspace / "d.rpd"),
                 "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "eval.csv")
    assert len(rows) == 5 and rows[-1]["sequence"] == "average"
    for r in rows:
        assert np.isfinite(float(r["mpjpe"]))
        assert float(r["p_mpjpe"]) <= float(r["mpjpe"])
    assert main(["eval", "--ckpt", str(workspace / "run" / "stage3.ckpt"), "--data", str(workspace / "d.rpd"),
                 "--protocol", "2", "--out", str(tmp_path)]) == 0
    assert "mpjpe" not in _rows(tmp_path / "eval.csv")[0]


def test_robustness_has_zero_control_row(workspace, tmp_path):
    assert main(["robustness", "--ckpt", str(workspace / "run" / "stage3.ckpt"), "--data", str(workspace / "d.rpd"),
                 "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "robustness.csv")
    assert len(rows) == 7
    assert float(rows[0]["magnitude"]) == 0 and float(rows[0]["consistency"]) == 0
    assert any(float(r["consistency"]) > 0 for r in rows[1:])


def test_p_only_model_is_shift_consistent(workspace, tmp_path):
    (tmp_path / "p.ini").write_text(TINY_CONFIG.format(extra="include_abs = false\ninclude_p = true\nglobal_input = relative"))
    assert main(["train", "--config", str(tmp_path / "p.ini"), "--data", str(workspace / "d.rpd"),
                 "--stage", "1", "--out", str(tmp_path), "--quiet"]) == 0
    assert main(["robustness", "--ckpt", str(tmp_path / "stage1.ckpt"), "--data", str(workspace / "d.rpd"),
                 "--out", str(tmp_path)]) == 0
    assert all(float(r["consistency"]) == 0 for r in _rows(tmp_path / "robustness.csv"))


def test_mr_table(workspace, tmp_path):
    run = workspace / "run"
    assert main(["mr", "--ckpt", str(run / "stage3.ckpt"), "--ckpt-b", str(run / "stage2.ckpt"),
                 "--data", str(workspace / "d.rpd"), "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "mr.csv")
    counts = [int(r["count"]) for r in rows]
    assert sum(counts) == 120 and max(counts) - min(counts) <= 1
    assert [float(r["mr_max"]) for r in rows] == sorted(float(r["mr_max"]) for r in rows)
    for r in rows:
        assert float(r["delta"]) == pytest.approx(float(r["mpjpe_b"]) - float(r["mpjpe"]), abs=2e-6)
    assert main(["mr", "--ckpt", str(run / "stage3.ckpt"), "--data", str(workspace / "d.rpd"),
                 "--bins", "500", "--out", str(tmp_path)]) == 4


def _encode(workspace, out, *extra):
    assert main(["encode", "--data", str(workspace / "d.rpd"), "--window", "7", "--seq-len", "9",
                 "--out", str(out), *extra]) == 0
    return _rows(out / "encode.csv")


def test_encode_dumps(workspace, tmp_path):
    base = _encode(workspace, tmp_path / "a")
    assert all(float(r["kt_0"]) == 0 and float(r["kt_1"]) == 0 for r in base if r["frame"] == "4")
    shifted = _encode(workspace, tmp_path / "b", "--shift", "0.1,0.05")
    assert [(r["kp_x"], r["kp_y"]) for r in base] == [(r["kp_x"], r["kp_y"]) for r in shifted]
    cs = _encode(workspace, tmp_path / "c", "--op", "CS")
    vals = [float(v) for r in cs for k, v in r.items() if k.startswith("kt_")]
    assert min(vals) >= -1 and max(vals) <= 1


def test_exit_codes(workspace, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2
    assert main(["eval", "--ckpt", str(tmp_path / "none.ckpt"), "--data", str(workspace / "d.rpd")]) == 4
    (tmp_path / "bad.ini").write_text("[model]\nnope = 1\n")
    assert main(["train", "--config", str(tmp_path / "bad.ini"), "--data", str(workspace / "d.rpd")]) == 3
    assert main(["encode", "--data", str(workspace / "d.rpd"), "--shift", "x", "--out", str(tmp_path)]) == 3


def test_output_dir_from_environment(workspace, tmp_path, monkeypatch):
    monkeypatch.setenv("RELPOSE_OUT", str(tmp_path / "env"))
    assert main(["encode", "--data", str(workspace / "d.rpd"), "--seq-len", "9"]) == 0
    assert (tmp_path / "env" / "encode.csv").exists()
    assert (tmp_path / "env" / "encode_config.ini").exists()
