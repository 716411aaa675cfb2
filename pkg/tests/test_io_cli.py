import csv
import json
from pathlib import Path

import pytest

from helpers import os1
from socdispatch.cli import main
from socdispatch.io import (
    ScenarioDocument,
    ScenarioFormatError,
    dump_scenario,
    fmt,
    load_scenario,
    scenario_from_dict,
    scenario_to_dict,
)

FIXTURES = Path(__file__).parent / "fixtures"
OS1 = str(FIXTURES / "os1.json")
OS1_B = str(FIXTURES / "os1_bidb.json")


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def os1_dict():
    return json.loads(Path(OS1).read_text())


def test_round_trip_preserves_scenario(tmp_path):
    doc = load_scenario(OS1)
    assert doc.scenario == os1()
    assert doc.name == "OS-1"
    dump_scenario(doc, tmp_path / "again.json")
    assert load_scenario(tmp_path / "again.json") == doc
    # unbounded limits survive as the string "inf"
    unbounded = ScenarioDocument(os1(rCup=float("inf")))
    raw = scenario_to_dict(unbounded)
    assert raw["storages"][0]["spec"]["rCup"] == "inf"
    assert scenario_from_dict(raw).scenario == unbounded.scenario


@pytest.mark.parametrize("path, value, where", [
    (("storages", 0, "bid", "cC"), [10], "storages[0].bid"),
    (("storages", 0, "spec", "gCmax"), "five", "storages[0].spec.gCmax"),
    (("demand",), [1, 2, 3], "demand"),
])
def test_format_errors_name_the_field(path, value, where):
    raw = os1_dict()
    node = raw
    for key in path[:-1]:
        node = node[key]
    node[path[-1]] = value
    with pytest.raises(ScenarioFormatError) as err:
        scenario_from_dict(raw)
    assert err.value.where.startswith(where)


def test_malformed_json_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"horizon": 2,\n')
    code, _, err = run(capsys, "clear", bad)
    assert code == 2 and "line 2, column 1" in err
    code, _, _ = run(capsys, "clear", tmp_path / "missing.json")
    assert code == 2


def test_fmt_twelve_significant_digits():
    assert fmt(1 / 3) == "0.333333333333"
    assert fmt(-0.0) == "0"
    assert fmt(5.0) == "5"
    assert fmt(float("inf")) == "inf"


def test_validate(capsys):
    code, out, _ = run(capsys, "validate", OS1)
    assert code == 0 and "bid shape: ok" in out and "EDCR: yes" in out
    code, out, _ = run(capsys, "validate", OS1_B)
    assert code == 0 and "EDCR: no (ratios 2)" in out


def test_clear_writes_outputs(tmp_path, capsys):
    code, out, _ = run(capsys, "clear", OS1, "--out", tmp_path)
    assert code == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary == json.loads(out)
    assert summary["objective"] == pytest.approx(5.0, abs=1e-9)
    assert summary["lmp"] == pytest.approx([10, 15], abs=1e-9)
    assert read_csv(tmp_path / "dispatch.csv") == [["t", "id", "gC", "gD", "e"],
                                                   ["1", "s1", "1", "0", "5"], ["2", "s1", "0", "1", "4"]]
    duals = read_csv(tmp_path / "duals.csv")
    assert duals[0][:4] == ["t", "id", "lambda", "phi"] and len(duals) == 3
    assert read_csv(tmp_path / "prices.csv") == [["t", "price"], ["1", "10"], ["2", "15"]]


def test_clear_modes(capsys):
    code, out, _ = run(capsys, "clear", OS1, "--mode", "oracle")
    assert code == 0 and json.loads(out)["objective"] == pytest.approx(5.0, abs=1e-9)
    code, _, err = run(capsys, "clear", OS1_B)
    assert code == 3 and "EDCR required; use --mode oracle" in err
    code, out, _ = run(capsys, "clear", OS1_B, "--mode", "oracle")
    assert code == 0


def test_infeasible_exits_5(tmp_path, capsys):
    raw = os1_dict()
    raw["demand"] = [1, 6]
    path = tmp_path / "tight.json"
    path.write_text(json.dumps(raw))
    code, _, err = run(capsys, "clear", path)
    assert code == 5 and "discharge capacity" in err


def test_price_and_loc(tmp_path, capsys):
    code, out, _ = run(capsys, "price", OS1)
    assert code == 0 and out.split() == ["t,price", "1,10", "2,15"]
    code, out, _ = run(capsys, "price", OS1, "--scheme", "tlmp")
    assert code == 0 and "10" in out and "15" in out
    code, out, _ = run(capsys, "loc", OS1, "--out", tmp_path)
    assert code == 0
    rows = read_csv(tmp_path / "loc.csv")
    assert rows == [["id", "scheme", "Q", "payment", "cost", "loc"], ["s1", "lmp", "0", "5", "5", "0"]]
    code, out, _ = run(capsys, "loc", OS1, "--scheme", "r-tlmp", "--window", 1)
    assert code == 0 and out.splitlines()[1].endswith(",0")


def test_roll(tmp_path, capsys):
    code, out, _ = run(capsys, "roll", OS1, "--window", 1, "--forecast", "additive:sigma=0.5", "--out", tmp_path)
    assert code == 0
    summary = json.loads(out)
    assert summary["window"] == 1 and len(summary["r_lmp"]) == 2
    assert read_csv(tmp_path / "prices.csv")[0] == ["t", "id", "r_lmp", "r_tlmp_charge", "r_tlmp_discharge"]
    code, _, _ = run(capsys, "roll", OS1, "--forecast", "gaussian")
    assert code == 2


def test_roll_is_seed_reproducible(capsys):
    argv = ("roll", OS1, "--window", 2, "--forecast", "multiplicative:sigma=0.2")
    a = run(capsys, "--seed", 3, *argv)
    b = run(capsys, "--seed", 3, *argv)
    assert a == b


def test_demo_affine(tmp_path, capsys):
    code, out, err = run(capsys, "demo-affine", OS1, "--points", 2)
    assert code == 0 and len(out.splitlines()) == 3 and "none" in err
    csv_path = tmp_path / "profile.csv"
    code, _, err = run(capsys, "demo-affine", OS1_B, "--soc", 6, "--out", csv_path)
    assert code == 0
    rows = read_csv(csv_path)[1:]
    step = float(rows[1][0]) - float(rows[0][0])
    flagged = float(err.rsplit("=", 1)[1])
    assert abs(flagged - (5 - 6)) <= step + 1e-12
    code, _, _ = run(capsys, "demo-affine", OS1, "--points", 1)
    assert code == 2


def test_compare_oracle(tmp_path, capsys):
    code, out, _ = run(capsys, "compare-oracle", OS1)
    summary = json.loads(out)
    assert code == 0 and summary["equivalent"] and summary["gap"] <= 1e-9
    code, out, _ = run(capsys, "compare-oracle", OS1_B)
    assert code == 0 and "note" in json.loads(out)
    raw = os1_dict()
    raw["horizon"], raw["demand"] = 7, [0] * 7
    path = tmp_path / "long.json"
    path.write_text(json.dumps(raw))
    code, _, _ = run(capsys, "compare-oracle", path)
    assert code == 4


def test_tolerance_environment(monkeypatch, capsys):
    monkeypatch.setenv("SOCDISPATCH_TOL", "1e-6")
    assert load_scenario(OS1).scenario.options.tolerances.feas == 1e-6
    code, out, _ = run(capsys, "clear", OS1)
    assert code == 0 and json.loads(out)["objective"] == pytest.approx(5.0)
    monkeypatch.setenv("SOCDISPATCH_TOL", "abc")
    code, _, err = run(capsys, "clear", OS1)
    assert code == 2 and "SOCDISPATCH_TOL" in err
