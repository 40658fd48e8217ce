import json

import numpy as np
import pytest

from gne_mesh.cli import EXIT_ERROR, EXIT_MAX_ROUNDS, EXIT_NUMERIC, EXIT_OK, EXIT_VERIFY, main
from gne_mesh.config import ConfigError, load_config, parse_config

GOOD = """{
  "scenario": {"template": "desk-cournot-2x1", "seed": 3},
  "tuning": {"c": 20, "tau": "auto", "nu": [0.1, 0.1], "sigma": "auto", "delta": 2.0},
  "stop": {"tol": 1e-7, "max_rounds": 500, "kkt_tol": null},
  "output": {"dir": "res", "stride": 5, "snapshots": true},
  "backend": "agents"
}"""


def test_parse_good_config(tmp_path):
    cfg = parse_config(GOOD, "c.json", tmp_path)
    assert cfg.template == "desk-cournot-2x1" and cfg.seed == 3
    assert cfg.tuning == {"c": 20.0, "tau": "auto", "nu": [0.1, 0.1], "sigma": "auto", "delta": 2.0}
    assert cfg.tol == 1e-7 and cfg.max_rounds == 500 and cfg.kkt_tol is None
    assert cfg.out_dir == tmp_path / "res" and cfg.stride == 5 and cfg.snapshots
    assert cfg.backend == "agents"


@pytest.mark.parametrize(
    "text, where, fragment",
    [
        ('{\n  "scenario": {"template": "x"},\n  "stop": {"tol": "small"}\n}', ":3:", "'tol' must be"),
        ('{\n  "scenario": {"template": "x"},\n  "colour": 1\n}', ":3:", "unknown key 'colour'"),
        ('{\n  "scenario": {"template": "x"}\n  "stop": {}\n}', ":3:", "Expecting"),
        ('{\n  "scenario": {"template": "x"},\n  "tuning": {\n    "c": true}\n}', ":4:", "'c' must be"),
        ('{\n  "scenario": {"template": "x"},\n  "backend": "gpu"\n}', ":3:", "backend"),
        ('{\n  "scenario": {"template": "x", "seed": -1}\n}', ":2:", "seed"),
        ('{\n  "scenario": {"game": "missing.json", "graph": "g.txt"}\n}', ":2:", "file not found"),
        ('{\n  "tuning": {}\n}', "cfg.json", "missing 'scenario'"),
        ('{\n  "scenario": {"template": "x"},\n  "tuning": {"rule": "fast"}\n}', ":3:", "rule"),
        ('{\n  "scenario": {"template": "x"},\n  "output": {"stride": 1.5}\n}', ":3:", "stride"),
    ],
)
def test_config_errors_carry_location(tmp_path, text, where, fragment):
    with pytest.raises(ConfigError) as exc:
        parse_config(text, "cfg.json", tmp_path)
    msg = str(exc.value)
    assert msg.startswith("cfg.json")
    assert where in msg and fragment in msg


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json")


def _generate(tmp_path, template, seed, name="gen"):
    out = tmp_path / name
    assert main(["generate", "--template", template, "--seed", str(seed), "--out", str(out)]) == EXIT_OK
    return out


def test_generate_is_deterministic(tmp_path):
    a = _generate(tmp_path, "fig1-cournot-20x7", 7, "a")
    b = _generate(tmp_path, "fig1-cournot-20x7", 7, "b")
    for f in ("game.json", "graph.txt", "config.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    c = _generate(tmp_path, "fig1-cournot-20x7", 8, "c")
    assert (a / "game.json").read_bytes() != (c / "game.json").read_bytes()
    cfg = json.loads((a / "config.json").read_text())
    assert cfg["tuning"] == {"c": 100.0, "tau": 0.003, "nu": 0.02, "sigma": 0.003}
    assert (a / "graph.txt").read_text().count("\n") >= 20


def test_run_verify_baseline_desk(tmp_path, capsys):
    gen = _generate(tmp_path, "desk-cournot-4x2", 1)
    out = tmp_path / "run"
    code = main(["run", "--config", str(gen / "config.json"), "--out", str(out)])
    assert code == EXIT_OK
    for f in ("tuning.json", "certificate.json", "trajectory.csv", "final_state.json"):
        assert (out / f).exists()
    state = json.loads((out / "final_state.json").read_text())
    assert state["stop_reason"] == "converged"
    assert main(["verify", "--config", str(gen / "config.json"), "--state",
                 str(out / "final_state.json")]) == EXIT_OK
    report = json.loads((out / "verification.json").read_text())
    assert report["passed"] and "x_star" in report["oracle"]

    state["point"]["bold_x"] = (np.array(state["point"]["bold_x"]) + 0.1).tolist()
    (out / "tampered.json").write_text(json.dumps(state))
    assert main(["verify", "--config", str(gen / "config.json"), "--state",
                 str(out / "tampered.json"), "--report", str(tmp_path / "r.json")]) == EXIT_VERIFY
    assert not json.loads((tmp_path / "r.json").read_text())["passed"]

    bout = tmp_path / "base"
    assert main(["baseline", "--config", str(gen / "config.json"), "--out", str(bout)]) == EXIT_OK
    base = json.loads((bout / "baseline_final_state.json").read_text())
    np.testing.assert_allclose(base["x"], state["x"], atol=1e-6)


def test_run_from_template_and_max_rounds(tmp_path):
    out = tmp_path / "mr"
    code = main(["run", "--template", "desk-cournot-2x1", "--seed", "0", "--out", str(out),
                 "--tol", "0", "--max-rounds", "50", "--stride", "0"])
    assert code == EXIT_MAX_ROUNDS
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert len(lines) == 52
    assert json.loads((out / "final_state.json").read_text())["stop_reason"] == "max_rounds"
    cert = json.loads((out / "certificate.json").read_text())
    assert cert["passed"] is True


def test_numeric_error_exit(tmp_path):
    gen = _generate(tmp_path, "desk-cournot-2x1", 0)
    cfg = json.loads((gen / "config.json").read_text())
    cfg["tuning"] = {"c": 1e6, "tau": 1.0, "nu": 0.01, "sigma": 0.01}
    cfg["init"] = {"bold_x": [[5.0, 1.0], [0.0, 5.0]], "z": [[0.0], [0.0]], "lam": [[0.0], [0.0]]}
    (gen / "bad.json").write_text(json.dumps(cfg))
    assert main(["run", "--config", str(gen / "bad.json"), "--out", str(tmp_path / "o")]) == EXIT_NUMERIC
    assert (tmp_path / "o" / "trajectory.csv").exists()


def test_bad_inputs_exit_one(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "scenario": {"template": "desk-cournot-2x1"},\n  "stop": {"tol": -1}\n}')
    assert main(["run", "--config", str(bad)]) == EXIT_ERROR
    assert "bad.json:3:" in capsys.readouterr().err
    assert main(["run", "--template", "desk-cournot-2x1"]) == EXIT_ERROR
    assert "seed" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["run", "--template", "no-such-template", "--seed", "1"])
