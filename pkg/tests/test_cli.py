import json

import numpy as np
import pytest

from virtualstain import io
from virtualstain.cli import main
from virtualstain.neural import Architecture, Generator

TINY = Architecture(levels=2, base_width=2, disc_width=2, disc_blocks=1, disc_pool=8, patch=16)
SMALL = {"fov": 96, "slide": 144, "heights": 4, "iterations": 8}


def report(out, command):
    return json.loads((out / f"{command}_report.json").read_text())


@pytest.fixture(scope="module")
def small_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.json"
    path.write_text(json.dumps(SMALL))
    return path


@pytest.fixture(scope="module")
def simulated(tmp_path_factory, small_config):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--config", str(small_config), "--seed", "7", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def tiny_model(tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "tiny.pstm"
    io.save_model(path, Generator(TINY, seed=0))
    return path


@pytest.fixture(scope="module")
def simulated_default(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim_default")
    assert main(["simulate", "--seed", "3", "--out", str(out)]) == 0
    return out


def test_simulate_outputs(simulated):
    rep = report(simulated, "simulate")
    assert rep["seed"] == 7 and rep["command"] == "simulate"
    assert {"phase", "holograms", "frames", "color", "slide"} <= set(rep["outputs"])
    assert {"numpy", "scipy", "python"} <= set(rep["versions"]) and rep["wall_time_s"] >= 0
    assert io.read_tensor(simulated / "holograms.pstn").shape == (4, 96, 96)
    assert io.read_tensor(simulated / "frames.pstn").shape == (4, 9, 32, 32)
    assert rep["config"]["fov"] == 96


def test_psr_then_reconstruct(simulated, small_config, tmp_path):
    assert main(["psr", "--config", str(small_config), "--input", str(simulated / "frames.pstn"),
                 "--out", str(tmp_path)]) == 0
    fused = io.read_tensor(tmp_path / "holograms_psr.pstn")
    assert fused.shape == (4, 96, 96)
    assert report(tmp_path, "psr")["metrics"]["factor"] == 3
    assert main(["reconstruct", "--config", str(small_config), "--input", str(tmp_path / "holograms_psr.pstn"),
                 "--out", str(tmp_path)]) == 0
    rep = report(tmp_path, "reconstruct")
    residuals = rep["metrics"]["amplitude_residual"]
    assert len(residuals) == 8
    truth = io.read_tensor(simulated / "phase_true.pstn")
    phase = io.read_tensor(tmp_path / "phase.pstn")
    assert phase.shape == truth.shape
    assert np.sqrt(np.mean((phase - truth) ** 2)) < 0.1


def test_autofocus(simulated_default, tmp_path):
    assert main(["autofocus", "--input", str(simulated_default / "holograms.pstn"),
                 "--out", str(tmp_path)]) == 0
    m = report(tmp_path, "autofocus")["metrics"]
    assert all(abs(a - b) <= 15 for a, b in zip(m["z_found"], m["z_nominal"]))


def test_register(simulated_default, tmp_path):
    sim = simulated_default
    assert main(["register", "--phase", str(sim / "phase_true.pstn"), "--color", str(sim / "slide.png"),
                 "--out", str(tmp_path)]) == 0
    rep = report(tmp_path, "register")
    assert rep["metrics"]["valid_fraction"] > 0.5
    registered = io.load_image(tmp_path / "registered.png")
    truth = io.load_image(sim / "color_true.png")
    valid = io.read_tensor(tmp_path / "valid.pstn").astype(bool)
    err = np.abs(registered - truth)[valid].mean()
    assert err < 0.05


def test_evaluate_identical(simulated, tmp_path, capsys):
    path = simulated / "color_true.png"
    assert main(["evaluate", "--prediction", str(path), "--reference", str(path), "--out", str(tmp_path)]) == 0
    assert "SSIM 1.000000" in capsys.readouterr().out
    assert report(tmp_path, "evaluate")["metrics"]["ssim"] == 1.0


def test_infer_tiles_3456(tiny_model, tmp_path):
    phase = np.random.default_rng(0).uniform(-1, 1, (3456, 3456)).astype(np.float32)
    io.write_tensor(tmp_path / "big.pstn", phase)
    assert main(["infer", "--model", str(tiny_model), "--input", str(tmp_path / "big.pstn"),
                 "--out", str(tmp_path)]) == 0
    rep = report(tmp_path, "infer")
    assert rep["metrics"]["tiles"] == 4 and rep["metrics"]["shape"] == [3456, 3456]
    assert io.load_image(tmp_path / "virtual_stain.png").shape == (3456, 3456, 3)


def test_robustness_csv(tiny_model, tmp_path):
    phase = 0.5 * np.sin(np.linspace(0, 6, 64))[:, None] * np.cos(np.linspace(0, 4, 64))[None, :]
    io.write_tensor(tmp_path / "p.pstn", phase.astype(np.float32))
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"noise_trials": 2, "noise_lengths": [1, 2]}))
    assert main(["robustness", "--config", str(cfg), "--model", str(tiny_model), "--input",
                 str(tmp_path / "p.pstn"), "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "robustness.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * 2
    assert float(lines[1].split(",")[3]) == 1.0


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"no_such_key": 1}))
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "no_such_key" in capsys.readouterr().err
    missing = tmp_path / "missing.pstn"
    assert main(["reconstruct", "--input", str(missing), "--out", str(tmp_path)]) == 2
    assert str(missing) in capsys.readouterr().err
    (tmp_path / "junk.pstn").write_bytes(b"junk")
    assert main(["reconstruct", "--input", str(tmp_path / "junk.pstn"), "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code == 2


def test_runtime_error_exit(tmp_path, monkeypatch, capsys):
    import virtualstain.cli as cli

    def boom(args, run):
        raise RuntimeError("solver blew up")

    monkeypatch.setitem(cli.COMMANDS, "evaluate", (boom, ""))
    assert main(["evaluate", "--prediction", "a", "--reference", "b", "--out", str(tmp_path)]) == 1
    assert "solver blew up" in capsys.readouterr().err
