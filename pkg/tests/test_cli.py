import json

import pytest
import yaml

from affinepoly import cli
from affinepoly.cli import ConfigError, RunConfig, SolverConfig, main
from affinepoly.tables import REFERENCE, run_name, table_runs


def _cfg(mode="taylor", **solver):
    s = {"mode": mode, "N_target": 40, **solver}
    return {"family": {"family": "inclusions", "beta": 1.0, "theta": 0.5, "J": 16}, "solver": s, "mesh": {"elements": 64}}


def _write(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


@pytest.mark.parametrize(
    "patch, path",
    [
        ({"solver": {"mode": "fourier"}}, "solver.mode"),
        ({"solver": {"mode": "taylor", "dorfler": 0.5}}, "solver"),
        ({"solver": {"mode": "legendre", "bulk": 0.2}}, "solver.bulk"),
        ({"solver": {"mode": "taylor", "N_target": 0}}, "solver.N_target"),
        ({"family": {"family": "inclusions", "beta": 1, "theta": 1.5}}, "family.theta"),
        ({"family": {"family": "fourier", "beta": 1.0, "theta": 0.5}}, "family.beta"),
        ({"family": {"family": "haar", "alpha": 1, "theta": 0.5, "J": 3}}, "family.J"),
        ({"family": {"family": "spline", "theta": 0.5}}, "family.family"),
        ({"load": {"energy_pair": {"knots": [0, 0.5, 1], "values": [0, 1, 1]}}}, "load.energy_pair"),
        ({"load": {"gaussian": 1}}, "load.gaussian"),
        ({"mesh": {"elements": 2.5}}, "mesh.elements"),
        ({"extra": 1}, "extra"),
    ],
)
def test_config_validation_paths(patch, path):
    d = {**_cfg(), **patch}
    with pytest.raises(ConfigError) as exc:
        RunConfig.from_dict(d)
    assert exc.value.path == path


def test_config_defaults_and_digest(tmp_path):
    cfg = RunConfig.from_dict(_cfg())
    assert cfg.solver == SolverConfig("taylor", 40, bulk=0.2)
    assert cfg.load == {"constant": 1.0}
    other = RunConfig.from_dict({**_cfg(), "output_dir": "elsewhere"})
    assert cfg.digest() == other.digest()
    leg = RunConfig.from_dict(_cfg("legendre"))
    assert leg.solver.dorfler == 0.5 and leg.solver.cg_tol == 1e-10
    assert leg.digest() != cfg.digest()
    jp = tmp_path / "c.json"
    jp.write_text(json.dumps(_cfg()))
    assert cli.load_config(jp).digest() == cfg.digest()


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", _write(tmp_path, _cfg()), "--out", str(out)]) == 0
    for f in ("rearrangement.csv", "rates.csv", "coefficients.csv", "diagnostics.json", "manifest.json"):
        assert (out / f).exists()
    man = json.loads((out / "manifest.json").read_text())
    assert man["counts"]["members"] == 40
    assert len(man["config_sha256"]) == 64
    diag = json.loads((out / "diagnostics.json").read_text())
    assert all(w["holds"] for w in diag["weighted_l2"])
    assert diag["reference_inverse_p"] == 1.5
    text = capsys.readouterr().out
    assert "s_5" in text and "(pre-asymptotic)" in text


def test_run_is_byte_deterministic(tmp_path):
    for mode in ("taylor", "legendre"):
        p = _write(tmp_path, _cfg(mode))
        a, b = tmp_path / f"{mode}a", tmp_path / f"{mode}b"
        assert main(["run", p, "--out", str(a)]) == 0
        assert main(["run", p, "--out", str(b)]) == 0
        for f in ("rearrangement.csv", "rates.csv", "coefficients.csv", "diagnostics.json"):
            assert (a / f).read_bytes() == (b / f).read_bytes()


def test_single_coefficient_reports_reason(tmp_path, capsys):
    d = _cfg()
    d["solver"]["N_target"] = 1
    assert main(["run", _write(tmp_path, d), "--out", str(tmp_path / "o")]) == 0
    assert "rates: none" in capsys.readouterr().out
    assert (tmp_path / "o" / "rates.csv").read_text() == "i,s_i\n"


def test_energy_pair_load_and_custom_family(tmp_path):
    d = {
        "family": {"family": "half_inclusions", "edges": [0, 0.25, 0.5, 1], "b": [0.3, 0.2, 0.1]},
        "solver": {"mode": "taylor", "N_target": 8},
        "load": {"energy_pair": {"knots": [0, 0.125, 0.25, 1], "values": [0, 0.1, 0, 0]}},
    }
    assert main(["run", _write(tmp_path, d), "--out", str(tmp_path / "o")]) == 0


def test_exit_codes(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.yaml")]) == cli.EXIT_CONFIG
    bad = tmp_path / "bad.yaml"
    bad.write_text("family: [unclosed")
    assert main(["run", str(bad)]) == cli.EXIT_CONFIG
    d = _cfg()
    d["solver"]["bulk"] = 3
    assert main(["run", _write(tmp_path, d)]) == cli.EXIT_CONFIG
    assert "solver.bulk" in capsys.readouterr().err
    # UEA violation surfaces as a config error
    d = {"family": {"family": "constant", "b": [0.7, 0.6]}, "solver": {"mode": "taylor", "N_target": 4}}
    assert main(["run", _write(tmp_path, d)]) == cli.EXIT_CONFIG


def test_solver_failure_exit(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise cli.galerkin.ConvergenceError("stalled")

    monkeypatch.setattr(cli.galerkin, "adaptive_solve", boom)
    assert main(["run", _write(tmp_path, _cfg("legendre")), "--out", str(tmp_path / "o")]) == cli.EXIT_SOLVER


def test_analyze_roundtrip(tmp_path, capsys):
    out = tmp_path / "out"
    main(["run", _write(tmp_path, _cfg()), "--out", str(out)])
    capsys.readouterr()
    assert main(["analyze", str(out / "coefficients.csv"), "--out", str(tmp_path / "an")]) == 0
    assert (tmp_path / "an" / "rates.csv").read_text() == (out / "rates.csv").read_text()
    junk = tmp_path / "junk.csv"
    junk.write_text("a,b\n1,2\n")
    assert main(["analyze", str(junk)]) == cli.EXIT_CONFIG


def test_oracle_check_passes(capsys):
    assert main(["oracle-check"]) == 0
    assert capsys.readouterr().out.count("[pass]") == 3


def test_table_runs_cover_reference():
    runs = table_runs()
    assert len(runs) == len(REFERENCE) == 22
    assert len({r["name"] for r in runs}) == 22
    for r in runs:
        RunConfig.from_dict({k: v for k, v in r.items()})
    assert run_name("fourier", 2.0, 2**-3, "legendre") == "fourier_beta2_theta2m3_legendre"
