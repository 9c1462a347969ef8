import json
import subprocess
import sys

import numpy as np
import pytest

from bitetransfer import plots
from bitetransfer.cli import build_parser, main, selftest_checks
from bitetransfer.config import validate_output
from bitetransfer.errors import OutputSchemaError


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert main(["gen-data", "--out", str(out), "--participants", "2", "--per-label", "6"]) == 0
    return out


def test_help_lists_every_subcommand(capsys):
    assert main(["--help"]) == 0
    text = capsys.readouterr().out
    for cmd in build_parser().subparsers:
        assert cmd in text
    for cmd in build_parser().subparsers:
        assert main([cmd, "--help"]) == 0


def test_gen_data_outputs_validate(small_data):
    summary = json.loads((small_data / "summary.json").read_text())
    validate_output(summary, "dataset")
    assert np.load(small_data / "X.npy").shape[0] == 48
    cfg = json.loads((small_data / "config.json").read_text())
    validate_output(cfg, "config")
    assert cfg["data"]["n_participants"] == 2


def test_overwrite_refused_without_force(small_data, capsys):
    args = ["gen-data", "--out", str(small_data), "--participants", "2", "--per-label", "6"]
    assert main(args) == 1
    err = capsys.readouterr().err
    assert "refusing to overwrite" in err and "usage:" in err
    assert main(args + ["--force"]) == 0


def test_usage_errors_exit_1(tmp_path, capsys):
    assert main(["no-such-command"]) == 1
    assert main(["train", "--out", str(tmp_path / "m")]) == 1          # --data missing
    assert main(["run-episode", "--out", str(tmp_path / "e"), "--scenario", "s9"]) == 1
    err = capsys.readouterr().err
    assert "usage: bitetransfer run-episode" in err


def test_config_file_overrides_flags_and_rejects_unknown_keys(small_data, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("model:\n  kind: mlp\n  epochs: 3\n")
    out = tmp_path / "m"
    assert main(["train", "--data", str(small_data), "--out", str(out), "--model", "svm", "--config", str(cfg)]) == 0
    assert json.loads((out / "model.json").read_text())["kind"] == "mlp"
    bad = tmp_path / "bad.yaml"
    bad.write_text("model:\n  colour: blue\n")
    assert main(["train", "--data", str(small_data), "--out", str(tmp_path / "m2"), "--config", str(bad)]) == 1


def test_missing_dataset_is_a_configuration_error(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nothing"), "--out", str(tmp_path / "m")]) == 1


def test_train_eval_roundtrip(small_data, tmp_path):
    m = tmp_path / "m"
    assert main(["train", "--data", str(small_data), "--out", str(m)]) == 0
    ev = tmp_path / "ev"
    assert main(["eval", "--data", str(small_data), "--model", str(m / "model.json"), "--out", str(ev),
                 "--no-plots"]) == 0
    metrics = json.loads((ev / "metrics.json").read_text())
    validate_output(metrics, "metrics")
    lines = (ev / "confusion.csv").read_text().splitlines()
    assert len(lines) == 5 and sum(int(v) for ln in lines[1:] for v in ln.split(",")[1:]) == 48


def test_selftest_passes(capsys):
    assert all(c["passed"] for c in selftest_checks(0, 10))
    assert main(["selftest", "--registration-trials", "5"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 3


def test_schema_violation_raises():
    with pytest.raises(OutputSchemaError):
        validate_output({"macro_f1": "high"}, "metrics")


def test_plots_are_byte_deterministic(tmp_path):
    cm = np.array([[5, 1, 0, 0], [0, 6, 0, 0], [1, 0, 4, 1], [0, 0, 0, 6]])
    plots.confusion(cm, tmp_path / "a.png", "t")
    plots.confusion(cm, tmp_path / "b.png", "t")
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_console_script_module_entry(tmp_path):
    res = subprocess.run([sys.executable, "-m", "bitetransfer.cli", "selftest", "--registration-trials", "3"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "PASS" in res.stdout
