import csv
import json

import pytest

from hydrodispatch.cli import BUILDING_HEADER, COMPARE_HEADER, NETWORK_HEADER, PIPE_HEADER, main
from hydrodispatch.network import bundled_instance_path

PIPE = str(bundled_instance_path("pipe-example"))
SIX = str(bundled_instance_path("six-bus"))


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_simulate_pipe_row(tmp_path, capsys):
    assert main(["simulate-pipe", PIPE, "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "pipe_P1.csv")
    assert rows[0] == PIPE_HEADER
    row = dict(zip(rows[0], rows[1]))
    assert row["period"] == "12"
    assert abs(float(row["t_out_wmm_c"]) - 95.194) < 0.01
    assert float(row["transit_nm_s"]) == 5400.0
    assert "95.1" in capsys.readouterr().out


def test_simulate_pipe_single_method_leaves_blanks(tmp_path):
    assert main(["simulate-pipe", PIPE, "--out", str(tmp_path), "--method", "nm"]) == 0
    row = dict(zip(*read_csv(tmp_path / "pipe_P1.csv")[:2]))
    assert row["t_out_wmm_c"] == "" and row["t_out_nm_c"] != ""


def test_simulate_pipe_json(tmp_path, capsys):
    assert main(["simulate-pipe", PIPE, "--out", str(tmp_path), "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["pipeline"] == "P1" and len(doc["rows"]) == 1


def test_missing_instance_is_input_error(tmp_path, capsys):
    assert main(["dispatch", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
    assert "not found" in capsys.readouterr().err


def test_malformed_instance_is_input_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"horizon": {"periods": 0, "dt_seconds": 3600}}))
    assert main(["simulate-network", str(bad), "--out", str(tmp_path)]) == 2


def test_unknown_pipe_is_input_error(tmp_path):
    assert main(["simulate-pipe", PIPE, "--pipe", "X9", "--out", str(tmp_path)]) == 2


def test_dispatch_rejects_nm(tmp_path, capsys):
    assert main(["dispatch", SIX, "--method", "nm", "--out", str(tmp_path)]) == 2
    assert "wmm" in capsys.readouterr().err


def test_bad_iteration_limit(tmp_path):
    assert main(["dispatch", SIX, "--max-iter", "0", "--out", str(tmp_path)]) == 2


def test_bad_epsilon_rejected_by_parser(tmp_path):
    with pytest.raises(SystemExit) as err:
        main(["dispatch", SIX, "--epsilon", "-1", "--out", str(tmp_path)])
    assert err.value.code == 2


def test_simulate_network_outputs(tmp_path):
    assert main(["simulate-network", SIX, "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "network.csv")
    assert rows[0] == NETWORK_HEADER
    temps = [float(r[2]) for r in rows[1:]]
    assert all(20.0 < t < 150.0 for t in temps)
    for b in ("H4", "H5", "H6"):
        brows = read_csv(tmp_path / f"building_{b}.csv")
        assert brows[0] == BUILDING_HEADER and len(brows) == 25


def test_dispatch_outputs(tmp_path, capsys):
    assert main(["dispatch", SIX, "--out", str(tmp_path), "--json"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["feasible"]
    conv = read_csv(tmp_path / "convergence.csv")
    assert conv[0] == ["r", "ubd", "lbd", "gap", "sp_status", "wall_ms"]
    assert float(conv[-1][3]) < 1e-4
    doc = json.loads((tmp_path / "solution.json").read_text())
    assert doc["method"] == "gbd"


def test_compare_table(tmp_path):
    assert main(["compare", SIX, "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "comparison.csv")
    assert rows[0] == COMPARE_HEADER
    cost = {r[0]: float(r[1]) for r in rows[1:]}
    assert cost["dynamic"] <= cost["steady"]
    assert read_csv(tmp_path / "wind_dispatch.csv")[0] == ["method", "period", "available_mw", "dispatched_mw", "curtailment_mw"]


def test_scenarios_bad_grid(tmp_path):
    assert main(["scenarios", SIX, "--grid", "w=1,2", "--out", str(tmp_path)]) == 2
    assert main(["scenarios", SIX, "--montecarlo", "0", "--out", str(tmp_path)]) == 2


def test_scenarios_rerun_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["scenarios", SIX, "--montecarlo", "2", "--seed", "5", "--out", str(out)]) == 0
    assert (a / "scenarios_aggregate.csv").read_bytes() == (b / "scenarios_aggregate.csv").read_bytes()
    rows = read_csv(a / "scenarios.csv")
    assert len(rows) == 3
