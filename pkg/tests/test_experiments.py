import hashlib
import json
import math

import numpy as np
import pytest

from grushin_lab import cli
from grushin_lab.config import parse_config
from grushin_lab.experiments import eventually_nonincreasing, noise_inject, run, run_rng


def test_noise_identity_and_statistics():
    data = np.sin(np.linspace(0, 20, 20000)) + 0.3
    assert np.array_equal(noise_inject(data, 0.0, 1), data)
    a = noise_inject(data, 0.01, 5)
    np.testing.assert_array_equal(a, noise_inject(data, 0.01, 5))
    rms_target = 0.01 * math.sqrt(np.mean(data ** 2))
    rms = math.sqrt(np.mean((a - data) ** 2))
    assert abs(rms / rms_target - 1) < 0.1
    b = noise_inject(data, 0.01, 6)
    assert abs(np.corrcoef(a - data, b - data)[0, 1]) < 0.05
    c = noise_inject(data, 0.01, 5, stream=1)
    assert abs(np.corrcoef(a - data, c - data)[0, 1]) < 0.05
    with pytest.raises(ValueError):
        noise_inject(data, -1, 0)


def test_run_rng_is_counter_based():
    assert run_rng(3, 4).random() == run_rng(3, 4).random()
    assert run_rng(3, 4).random() != run_rng(3, 5).random()


def test_eventually_nonincreasing():
    assert eventually_nonincreasing([1, 3, 2, 1])
    assert eventually_nonincreasing([3, 2, 1])
    assert not eventually_nonincreasing([1, 2, 3, 4])
    assert not eventually_nonincreasing([1])


def _cfg_file(tmp_path, text):
    p = tmp_path / "cfg.yaml"
    p.write_text(text)
    return str(p)


def test_check_class_zero_is_a_verdict(tmp_path):
    cfg = _cfg_file(tmp_path, "initial_data:\n  utilde0: {kind: zero}\n")
    assert cli.main(["check-class", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    res = json.loads((tmp_path / "o" / "check_class.json").read_text())["result"]
    assert res["member"] is False and res["K1_max"] == 0.0


def test_eigen_scaling_gamma_one(tmp_path):
    cfg = _cfg_file(tmp_path, "physics:\n  gamma: 1.0\ncoefficients:\n  b: {kind: constant, value: 1.0}\n")
    assert cli.main(["eigen-scaling", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    res = json.loads((tmp_path / "o" / "scaling.json").read_text())["result"]
    assert res["slope"] == pytest.approx(0.5, abs=0.05)
    header = (tmp_path / "o" / "scaling.csv").read_text().splitlines()[0]
    assert header == "n,mu_n,lambda_n,ratio"


def test_manifest_and_resolved_config(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["forward", "--out", str(out), "--seed", "11"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["schema_version"] == 1 and manifest["seed"] == 11
    names = {f["name"] for f in manifest["files"]}
    assert {"forward.json", "forward_mode1.csv", "resolved_config.yaml"} <= names
    for f in manifest["files"]:
        assert hashlib.sha256((out / f["name"]).read_bytes()).hexdigest() == f["sha256"]
    assert parse_config(out / "resolved_config.yaml").ensemble.seed == 11


def test_config_error_exit_code(tmp_path):
    cfg = _cfg_file(tmp_path, "physics:\n  gamma: 1.5\n")
    out = tmp_path / "o"
    assert cli.main(["forward", "--config", cfg, "--out", str(out)]) == cli.EXIT_CONFIG
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "config" and any("gamma" in d for d in err["details"])


def test_io_error_exit_code(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["forward", "--out", str(blocker / "sub")]) == cli.EXIT_IO
    assert cli.main(["forward", "--config", str(tmp_path / "missing.yaml")]) == cli.EXIT_IO


def test_numerical_error_exit_code(tmp_path):
    cfg = _cfg_file(tmp_path, "reconstruct:\n  eps_den: 0.9\n")
    out = tmp_path / "o"
    assert cli.main(["reconstruct", "--config", cfg, "--out", str(out)]) == cli.EXIT_NUMERIC
    assert json.loads((out / "error.json").read_text())["error"] == "numerical"


def test_small_sweep_deterministic_across_threads(tmp_path):
    cfg = parse_config("ensemble:\n  count: 4\ndiscretization:\n  n_cells: 128\n")
    run(cfg, "stability-sweep", tmp_path / "a", threads=1)
    cfg = parse_config("ensemble:\n  count: 4\ndiscretization:\n  n_cells: 128\n")
    run(cfg, "stability-sweep", tmp_path / "b", threads=3)
    for name in ("stability.json", "stability.csv", "t1_sweep.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    reports = json.loads((tmp_path / "a" / "stability.json").read_text())["result"]
    assert [r["N"] for r in reports] == [1, 2, 4, 8]
