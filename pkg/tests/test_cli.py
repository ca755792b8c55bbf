import json
import subprocess
import sys

import numpy as np
import pytest

from rsslab.cli import main
from rsslab.dataio import load_model

SMALL = {
    "synth": {"recordings": [["exp5", 300, "A"], ["exp6", 300, "A"], ["exp8", 300, "B"]]},
    "preprocess": {"window_len": 40, "stride": 4},
    "train": {"cnn": {"epochs": 2}},
    "bench": {"window_len": 40, "stride": 8, "seeds": [0, 1], "fractions": [0.25, 0.5], "train_steps": 10},
    "uncertainty": {"trials": 200},
}


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL))
    return str(p)


@pytest.fixture
def data_dir(tmp_path, cfg_file):
    d = tmp_path / "data"
    assert main(["gen-synth", "--config", cfg_file, "--out", str(d)]) == 0
    return d


def files_of(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


def test_no_args_is_usage_error(capsys):
    assert main([]) == 1
    assert main(["bench"]) == 1
    assert main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_missing_data_dir_exit_2(tmp_path, capsys):
    missing = tmp_path / "missing_dir"
    assert main(["bench", "--run", "r3", "--data", str(missing), "--out", str(tmp_path / "o")]) == 2
    assert "missing_dir" in capsys.readouterr().err


def test_unknown_config_key_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"preprocess": {"windowlen": 5}}))
    assert main(["gen-synth", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "preprocess.windowlen" in capsys.readouterr().err


def test_env_config_and_flag_precedence(tmp_path, cfg_file, monkeypatch):
    monkeypatch.setenv("RSSLAB_CONFIG", cfg_file)
    out = tmp_path / "o"
    assert main(["gen-synth", "--out", str(out), "--seed", "9"]) == 0
    snap = json.loads((out / "resolved_config.json").read_text())
    assert snap["config"]["seed"] == 9
    assert snap["config"]["synth"]["recordings"][0] == ["exp5", 300, "A"]
    assert snap["config"]["preprocess"]["filter_n"] is None  # untouched default


def test_simulate_uncertainty(tmp_path, cfg_file, capsys):
    out = tmp_path / "u"
    assert main(["simulate-uncertainty", "--config", cfg_file, "--out", str(out), "--scenarios", "single"]) == 0
    text = capsys.readouterr().out
    assert "sigma_t" in text and "eps_temp = 0.0500 m" in text
    rep = json.loads((out / "uncertainty_budget.json").read_text())
    assert rep["temporal"] == {"dt_s": 0.1, "eps_temp_m": 0.05}
    assert rep["scenarios"][0]["budget"]["sigma_px_m"] == pytest.approx(0.0023, abs=5e-5)


def test_pipeline_gen_preprocess_train_eval(tmp_path, cfg_file, data_dir):
    assert sorted(p.name for p in data_dir.glob("*.csv")) == ["exp5.csv", "exp6.csv", "exp8.csv"]
    pre = tmp_path / "pre"
    assert main(["preprocess", "--config", cfg_file, "--data", str(data_dir), "--out", str(pre)]) == 0
    man = json.loads((pre / "manifest.json").read_text())
    X = np.load(pre / "X.npy")
    assert X.shape == (man["num_windows"], 3, 40)
    assert len(np.load(pre / "train_idx.npy")) + len(np.load(pre / "test_idx.npy")) == man["num_windows"]
    for kind in ("cnn", "knn", "knn_interp"):
        m = tmp_path / f"m_{kind}"
        assert main(["train", "--config", cfg_file, "--data", str(data_dir), "--out", str(m), "--model", kind]) == 0
        assert load_model(m / "model.rsslab").kind == kind
        ev = tmp_path / f"e_{kind}"
        assert main(["eval", "--model", str(m / "model.rsslab"), "--data", str(data_dir), "--out", str(ev)]) == 0
        metrics = json.loads((ev / "metrics.json").read_text())
        assert metrics["overall"]["mean_l2_m"] >= 0
        assert set(metrics["per_recording"]) <= {"exp5", "exp6", "exp8"}


def test_loro_train(tmp_path, cfg_file, data_dir):
    m = tmp_path / "m"
    assert main(["train", "--config", cfg_file, "--data", str(data_dir), "--out", str(m), "--model", "knn",
                 "--split-mode", "leave_one_recording_out", "--holdout", "exp8"]) == 0
    ev = tmp_path / "e"
    assert main(["eval", "--model", str(m / "model.rsslab"), "--data", str(data_dir), "--out", str(ev)]) == 0
    assert list(json.loads((ev / "metrics.json").read_text())["per_recording"]) == ["exp8"]
    assert main(["train", "--config", cfg_file, "--data", str(data_dir), "--out", str(m),
                 "--split-mode", "leave_one_recording_out", "--holdout", "exp9"]) == 2


def test_corrupt_model_rejected(tmp_path, cfg_file, data_dir, capsys):
    m = tmp_path / "m"
    assert main(["train", "--config", cfg_file, "--data", str(data_dir), "--out", str(m), "--model", "knn"]) == 0
    art = m / "model.rsslab"
    raw = bytearray(art.read_bytes())
    raw[len(raw) // 2] ^= 0x01
    art.write_bytes(bytes(raw))
    assert main(["eval", "--model", str(art), "--data", str(data_dir), "--out", str(tmp_path / "e")]) == 2


@pytest.mark.parametrize("argv", [
    ["bench", "--run", "r1"],
    ["train", "--model", "cnn"],
    ["simulate-uncertainty", "--scenarios", "single"],
])
def test_deterministic_outputs_independent_of_workers(tmp_path, cfg_file, data_dir, argv):
    runs = []
    for workers in (1, 2):
        out = tmp_path / f"w{workers}"
        extra = ["--data", str(data_dir)] if argv[0] in ("bench", "train") else []
        assert main(argv + extra + ["--config", cfg_file, "--deterministic", "--workers", str(workers),
                                    "--out", str(out)]) == 0
        runs.append(files_of(out))
    a, b = runs
    assert set(a) == set(b)
    for name in a:
        if name == "resolved_config.json":
            sa, sb = json.loads(a[name]), json.loads(b[name])
            sa["config"].pop("workers"), sb["config"].pop("workers")
            sa["config"].pop("out_dir"), sb["config"].pop("out_dir")
            assert sa == sb
        else:
            assert a[name] == b[name], name


def test_convert(tmp_path):
    src = tmp_path / "raw.csv"
    src.write_text("time,px,py,a\n0.0,1,2,-50\n0.1,1,2,-51\n")
    mp = tmp_path / "map.json"
    mp.write_text(json.dumps({"t": "time", "x": "px", "y": "py", "rss": {"AP1": "a"}}))
    out = tmp_path / "o"
    assert main(["convert", str(src), "--map", str(mp), "--out", str(out), "--name", "exp1"]) == 0
    assert (out / "exp1.csv").read_text().splitlines()[0] == "t,x,y,rss_AP1"


def test_console_script_entry():
    r = subprocess.run([sys.executable, "-m", "rsslab.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "rsslab" in r.stdout
