import json
import subprocess
import sys

import numpy as np
import pytest

from rnnchaos import io
from rnnchaos.cli import main
from rnnchaos.model import spectral_init
from rnnchaos.numerics import derive_seed, make_rng
from rnnchaos.training import TrainConfig


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = write(d / "sim.json", {"version": 1, "n_steps": 60000, "skip": 1000})
    assert main(["simulate", "--config", cfg, "--out", str(d / "traj.bin")]) == 0
    return d


def test_simulate_byte_deterministic(workdir, tmp_path):
    cfg = str(workdir / "sim.json")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "again.bin")]) == 0
    assert (tmp_path / "again.bin").read_bytes() == (workdir / "traj.bin").read_bytes()
    t = io.load_trajectory(workdir / "traj.bin")
    assert len(t) == 3001 and t.dt == pytest.approx(0.02)
    assert t.states.min() == -1.0 and t.states.max() == 1.0


def test_simulate_seed_changes_output(workdir, tmp_path):
    cfg = str(workdir / "sim.json")
    main(["simulate", "--config", cfg, "--seed", "5", "--out", str(tmp_path / "s.bin")])
    assert (tmp_path / "s.bin").read_bytes() != (workdir / "traj.bin").read_bytes()


def test_unknown_config_key_is_rejected(tmp_path, capsys):
    cfg = write(tmp_path / "bad.json", {"version": 1, "n_step": 10})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "x.bin")]) == 2
    assert "n_step" in capsys.readouterr().err
    assert not (tmp_path / "x.bin").exists()


def test_wrong_version_and_type_rejected(tmp_path):
    for bad in ({"version": 2}, {"n_steps": "many"}, [1, 2]):
        cfg = write(tmp_path / "bad.json", bad)
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "x.bin")]) == 2


def test_missing_input_exit_code(tmp_path):
    assert main(["make-dataset", "--trajectory", str(tmp_path / "none.bin"),
                 "--out", str(tmp_path / "d.bin")]) == 2


def test_corrupt_input_exit_code(tmp_path):
    (tmp_path / "junk.bin").write_bytes(b"junk")
    assert main(["make-dataset", "--trajectory", str(tmp_path / "junk.bin"),
                 "--out", str(tmp_path / "d.bin")]) == 2


@pytest.fixture(scope="module")
def dataset(workdir):
    cfg = write(workdir / "ds.json", {"version": 1, "n_sequences": 60, "warmup_len": 20,
                                      "target_len": 15})
    out = str(workdir / "ds.bin")
    assert main(["make-dataset", "--config", cfg, "--trajectory", str(workdir / "traj.bin"),
                 "--out", out]) == 0
    return out


def test_train_zero_epochs_writes_init(workdir, dataset, tmp_path):
    cfg = write(tmp_path / "t.json", {"version": 1, "d": 10, "batch_size": 20,
                                      "warmup_len": 20, "seed": 3})
    out = str(tmp_path / "m.bin")
    assert main(["train", "--config", cfg, "--dataset", dataset, "--out", out,
                 "--max-epochs", "0"]) == 0
    p = io.load_params(out)
    tc = TrainConfig()
    ref = spectral_init(10, 3, tc.rho0, tc.alpha, make_rng(derive_seed(3, 0)))
    np.testing.assert_array_equal(p.W, ref.W)
    np.testing.assert_array_equal(p.W_out, ref.W_out)
    side = io.load_json(out + ".json")
    assert side["config"]["max_epochs"] == 0 and "wall_seconds" not in side["report"]


def test_train_byte_deterministic(dataset, tmp_path):
    cfg = write(tmp_path / "t.json", {"version": 1, "d": 8, "batch_size": 20,
                                      "warmup_len": 20, "max_epochs": 2})
    for name in ("a", "b"):
        assert main(["train", "--config", cfg, "--dataset", dataset,
                     "--out", str(tmp_path / f"{name}.bin")]) == 0
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert (tmp_path / "a.bin.json").read_bytes() == (tmp_path / "b.bin.json").read_bytes()


@pytest.fixture(scope="module")
def fitted(workdir):
    cfg = write(workdir / "fit.json", {"version": 1, "d": 40, "fit_len": 1500,
                                       "warmup_len": 100, "offset": 200})
    out = str(workdir / "rc.bin")
    assert main(["fit-rc", "--config", cfg, "--trajectory", str(workdir / "traj.bin"),
                 "--out", out]) == 0
    return out


def test_fit_rc_sidecar(fitted):
    side = io.load_json(fitted + ".json")
    assert side["offset"] == 200 and side["config"]["d"] == 40
    assert 0 < side["fit_one_step_rmse"] < 1e-2


def test_fit_rc_window_outside_trajectory(workdir, tmp_path):
    cfg = write(tmp_path / "f.json", {"version": 1, "d": 10, "fit_len": 2900,
                                      "warmup_len": 100, "offset": 100})
    assert main(["fit-rc", "--config", cfg, "--trajectory", str(workdir / "traj.bin"),
                 "--out", str(tmp_path / "x.bin")]) == 2


def test_analyze_outputs_and_determinism(workdir, fitted, tmp_path, capsys):
    cfg = write(tmp_path / "a.json", {"version": 1, "steps": 400, "transient": 50,
                                      "offset": 500})
    args = ["analyze", "--config", cfg, "--checkpoint", fitted,
            "--trajectory", str(workdir / "traj.bin")]
    assert main(args + ["--out-dir", str(tmp_path / "r1")]) == 0
    line = capsys.readouterr().out
    assert "D_L=" in line and "class=" in line and "horizon=" in line
    assert main(args + ["--out-dir", str(tmp_path / "r2")]) == 0
    for name in ("lyapunov.json", "error_curve.csv"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()
    rep = io.load_json(tmp_path / "r1" / "lyapunov.json")
    assert rep["n_steps"] == 350 and rep["warmup_offset"] == 500
    rows = (tmp_path / "r1" / "error_curve.csv").read_text().splitlines()
    assert rows[0] == "step,rmse" and len(rows) == 151


def test_analyze_ode(tmp_path):
    assert main(["analyze", "--ode", "lorenz", "--dt", "0.01", "--time", "60",
                 "--out-dir", str(tmp_path)]) == 0
    rep = io.load_json(tmp_path / "lyapunov.json")
    assert rep["class"] == "Strange"
    assert sum(rep["spectrum_per_step"]) / 0.01 == pytest.approx(-41 / 3, abs=0.05)


def test_ensemble_fit_outputs(workdir, tmp_path):
    cfg = write(tmp_path / "e.json", {
        "version": 1, "mode": "fit", "n_machines": 2, "runs_per_machine": 1,
        "n_steps": 300, "transient": 50, "fit": {"d": 20, "fit_len": 500, "warmup_len": 50}})
    out = tmp_path / "ens"
    assert main(["ensemble", "--config", cfg, "--trajectory", str(workdir / "traj.bin"),
                 "--out-dir", str(out)]) == 0
    rows = (out / "histogram.csv").read_text().splitlines()
    assert rows[0] == "bin_left,count" and len(rows) == 61
    summary = io.load_json(out / "ensemble.json")
    n_reports = len(summary["reports"])
    assert len(list((out / "reports").iterdir())) == n_reports
    assert sum(int(r.split(",")[1]) for r in rows[1:]) == sum(
        r["dl_dimension"] is not None for r in summary["reports"])


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "rnnchaos.cli", "--help"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("simulate", "make-dataset", "train", "fit-rc", "analyze", "ensemble"):
        assert cmd in res.stdout
