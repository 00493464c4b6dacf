import hashlib
import json

import pytest

from osgoodflow.cli import main

from conftest import SCENARIOS


def run(tmp_path, *argv, plots=False):
    out = tmp_path / "out"
    extra = [] if plots else ["--no-plots"]
    code = main([*argv, "--out", str(out), *extra])
    return code, out


def test_simulate_with_manifest(tmp_path):
    code, out = run(tmp_path, "simulate", "--scenario", str(SCENARIOS / "minimal.json"), "--dt", "0.1", plots=True)
    assert code == 0
    man = json.loads((out / "manifest.json").read_text())
    assert set(man["outputs"]) == {"trajectory.csv", "summary.json", "trajectory.png"}
    for name, digest in man["outputs"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    summary = json.loads((out / "summary.json").read_text())
    assert summary["mass_constant"] and summary["final_positions"] == [[[1.0]]]
    assert man["exit_status"] == 0 and "PCG64" in man["rng"]


def test_simulate_reproducible(tmp_path):
    path = str(SCENARIOS / "two_species_lipschitz.json")
    main(["simulate", "--scenario", path, "--dt", "0.1", "--out", str(tmp_path / "a"), "--no-plots"])
    main(["simulate", "--scenario", path, "--dt", "0.1", "--out", str(tmp_path / "b"), "--no-plots"])
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() == (tmp_path / "b" / "trajectory.csv").read_bytes()


@pytest.mark.parametrize("argv", [
    ["simulate", "--scenario", "minimal.json", "--dt", "2"],
    ["simulate", "--scenario", "minimal.json", "--dt", "0.3"],
    ["simulate", "--scenario", "missing.json", "--dt", "0.1"],
])
def test_operational_errors(tmp_path, capsys, argv):
    argv = [str(SCENARIOS / a) if a.endswith(".json") else a for a in argv]
    code, _ = run(tmp_path, *argv)
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_osgood_exit_codes(tmp_path):
    code, out = run(tmp_path, "osgood", "--scenario", str(SCENARIOS / "loglip_attraction.json"), plots=True)
    assert code == 0
    assert json.loads((out / "osgood.json").read_text())["is_osgood"] is True
    code, out = run(tmp_path, "osgood", "--scenario", str(SCENARIOS / "power_modulus.json"), "--lambda", "1")
    assert code == 2
    assert json.loads((out / "osgood.json").read_text())["is_osgood"] is False


def test_certify_identical(tmp_path):
    code, out = run(tmp_path, "certify", "--twin", str(SCENARIOS / "twin_identical.json"), "--dt", "0.05")
    assert code == 0
    cert = json.loads((out / "certificate.json").read_text())
    assert cert["verdict"] == "PASS" and cert["q_level"]["observed_sup_Q"] == 0.0


def test_certify_mass_twin(tmp_path):
    code, out = run(tmp_path, "certify", "--twin", str(SCENARIOS / "twin_mass_perturbation.json"), "--dt", "0.05",
                    plots=True)
    assert code == 0
    cert = json.loads((out / "certificate.json").read_text())
    assert cert["q_level"]["observed_sup_Q"] <= cert["omega"]
    assert (out / "certificate.png").exists() and (out / "certificate.csv").exists()


def test_certify_refused(tmp_path):
    scen = json.loads((SCENARIOS / "power_modulus.json").read_text())
    twin = tmp_path / "twin.json"
    twin.write_text(json.dumps({"schema": 1, "a": scen, "cloud": {"box": [[-2, 2]] * scen["d"], "resolution": 4}}))
    code, out = run(tmp_path, "certify", "--twin", str(twin), "--dt", "0.1")
    assert code == 2
    assert json.loads((out / "certificate.json").read_text())["verdict"] == "REFUSED"


def test_verify(tmp_path):
    code, out = run(tmp_path, "verify", "--scenario", str(SCENARIOS / "two_species_lipschitz.json"),
                    "--dt-ladder", "0.05,0.025,0.0125", plots=True)
    rep = json.loads((out / "verify.json").read_text())
    assert code == 0 and rep["passed"] and rep["mass_constant_all"]


def test_mollify(tmp_path):
    code, out = run(tmp_path, "mollify", "--scenario", str(SCENARIOS / "two_species_lipschitz.json"),
                    "--eps-ladder", "0.2,0.1", "--dt", "0.05", plots=True)
    assert code == 0
    assert json.loads((out / "mollify.json").read_text())["within_cap"]
