import csv
import json
import subprocess
import sys

import pytest

from presemi.cli import RunConfig, dumps, main, run_pipeline
from presemi.errors import SpecError

SEED_TILT = '{"phi": "0.7853981633974483", "Lambda": ["cos(0.3)", "sin(0.3)"]}'


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_flat_defaults(tmp_path):
    assert main(["--input", "flat2", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["exit_status"] == 0 and report["pass"]
    assert report["routes"]["shoot"]["checks"]["gamma11_max"]["value"] == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["gamma_prime.csv", "report.json",
                                                           "transform_grid.csv"]
    rows = read_csv(tmp_path / "transform_grid.csv")
    assert rows[0] == ["tau", "label2", "f1", "f2", "det_jac", "regular"]
    assert len(rows) == 1 + 41 * 21
    rows = read_csv(tmp_path / "gamma_prime.csv")
    assert rows[0][:3] == ["node", "tau", "label2"] and rows[0][-1] == "residual"
    assert len(rows[0]) == 3 + 8 + 1


def test_sheared_both_routes(tmp_path):
    out = tmp_path / "run"
    assert main(["--input", "sheared2", "--route", "both", "--out", str(out), "--emit-plots"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["route_agreement"]["pass"] and report["route_agreement"]["value"] < 1e-5
    assert set(report["routes"]) == {"shoot", "picard"}
    assert report["structure"]["equiaffine"]["flag"]
    assert report["structure"]["dof"]["applicable"] == 0  # n(n-1)^2/2 - (n-1) at n = 2
    history = read_csv(out / "picard_history.csv")
    assert history[0] == ["iteration", "sup_diff"] and len(history) == 1 + report["routes"]["picard"]["iteration"]["iterations"]
    for name in ("transform_grid_picard.csv", "geodesics.csv", "residual_heatmap.csv"):
        assert (out / name).is_file()


def test_bad_connection_file_exits_2(tmp_path, capsys):
    spec = tmp_path / "conn.json"
    spec.write_text(json.dumps({"n": 2, "domain": [[-1, 1], [-1, 1]], "symmetric": True,
                                "gamma": [{"h": 2, "i": 1, "j": 1, "expr": "x1 + x3"}]}))
    out = tmp_path / "out"
    assert main(["--input", str(spec), "--out", str(out)]) == 2
    report = json.loads((out / "report.json").read_text())
    assert report["error"]["module"] == "connection"
    assert report["error"]["context"]["offset"] == 5
    assert report["error"]["context"]["component"] == [2, 1, 1]
    assert "exceeds dimension" in capsys.readouterr().err


def test_connection_file_round_trip(tmp_path):
    spec = tmp_path / "sheared.json"
    spec.write_text(json.dumps({"n": 2, "domain": [[-1, 1], [-1, 1]], "symmetric": True,
                                "gamma": [{"h": 2, "i": 1, "j": 1, "expr": "1"}]}))
    a = run_pipeline(RunConfig(str(spec), route="both"))
    b = run_pipeline(RunConfig("sheared2", route="both"))
    assert a.status == 0
    assert a.report["routes"] == b.report["routes"]


@pytest.mark.parametrize("seed, message", [("{broken", "JSON"), ('{"phi": "x1", "Lambda": ["1", "0"]}', "x2"),
                                           ('{"phi": "0"}', "Lambda"), ("missing.json", "readable"),
                                           ('{"phi": "0", "Lambda": ["0", "1"]}', "tangent")])
def test_bad_seed_exits_2(seed, message):
    result = run_pipeline(RunConfig("sheared2", seed=seed))
    assert result.status == 2
    assert message in result.report["error"]["message"]


def test_unknown_input_and_route():
    assert run_pipeline(RunConfig("nowhere.json")).status == 2
    with pytest.raises(SpecError):
        RunConfig("flat2", route="sideways")
    assert run_pipeline(RunConfig("flat2", tau_span=(0.1, 0.5))).status == 2


def test_check_failure_exits_1(tmp_path):
    assert main(["--input", "sheared2", "--tol-gamma11", "0", "--out", str(tmp_path)]) == 1
    report = json.loads((tmp_path / "report.json").read_text())
    assert not report["routes"]["shoot"]["checks"]["gamma11_max"]["pass"]
    assert report["exit_status"] == 1


def test_exit_status_follows_pass_flags():
    for cfg in (RunConfig("flat2"), RunConfig("noneq2", route="both"), RunConfig("torsion2", route="picard")):
        rep = run_pipeline(cfg).report
        flags = [c["pass"] for r in rep["routes"].values() for c in r["checks"].values()]
        if "route_agreement" in rep:
            flags.append(rep["route_agreement"]["pass"])
        assert rep["exit_status"] == (0 if all(flags) else 1)


def test_structure_report():
    rep = run_pipeline(RunConfig("noneq2")).report["structure"]
    assert rep["symmetric"] and not rep["equiaffine"]["flag"]
    assert rep["equiaffine"]["residual"] == pytest.approx(1.0, abs=1e-6)
    rep = run_pipeline(RunConfig("torsion2")).report["structure"]
    assert rep["equiaffine"] is None and rep["dof"]["applicable"] == 6


def test_deterministic_reports(tmp_path):
    args = ["--input", "sphere2", "--route", "both", "--seed", SEED_TILT, "--tau-span", "-0.4", "0.4",
            "--tau-count", "81"]
    main(args + ["--out", str(tmp_path / "a")])
    main(args + ["--out", str(tmp_path / "b")])
    for name in ("report.json", "transform_grid.csv", "gamma_prime.csv", "picard_history.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_dumps():
    text = dumps({"b": 0.1, "a": [1, 2.5, float("nan")], "c": {"ok": True, "none": None}, "s": "x\"y"})
    assert text.index('"b"') < text.index('"a"')
    assert "0.10000000000000001" in text and "null" in text
    assert json.loads(text)["a"] == [1, 2.5, None]


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "presemi", "--input", "flat2"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "gamma11_max" in out.stdout
