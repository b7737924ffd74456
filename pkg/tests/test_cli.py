import csv
import io
import json

import pytest

from evgame import cli, engine
from evgame.data_io import ScenarioConfig


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "n25m2.cfg"
    p.write_text("n_evs = 25\nn_stations = 2\n")
    return p


def table(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_run_writes_artifacts(tmp_path, cfg_file, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg_file), "--algorithm", "proposed",
                     "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["evs.csv", "slots.csv", "summary.json"]
    line = capsys.readouterr().out.strip()
    assert "total_cost=" in line and "mean_qos=" in line and "terminal_q=" in line


def test_run_is_byte_identical(tmp_path, cfg_file):
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        assert cli.main(["run", "--config", str(cfg_file), "--seed", "7", "--out", str(d)]) == 0
    for name in ("slots.csv", "evs.csv", "summary.json"):
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()


def test_unknown_algorithm(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["run", "--algorithm", "greedy"])
    assert info.value.code == 2
    err = capsys.readouterr().err
    assert all(name in err for name in ("proposed", "occma", "ocsa_f", "ocsa_n", "edf"))


def test_bad_config_key(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("n_cars = 3\n")
    assert cli.main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "n_cars" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_fault_exits_one_with_dump(tmp_path, monkeypatch):
    def boom(cfg, *a, **k):
        raise engine.EngineFault("forced", {"slot": 12})
    monkeypatch.setattr(engine, "run", boom)
    out = tmp_path / "o"
    assert cli.main(["run", "--out", str(out)]) == 1
    assert json.loads((out / "fault_dump.json").read_text()) == {"slot": 12}


def test_compare_one_seed(tmp_path, capsys):
    assert cli.main(["compare", "--seeds", "3", "--out", str(tmp_path)]) == 0
    rows = table(capsys.readouterr().out)
    per_seed = [r for r in rows if r["seed"] == "3"]
    assert len(per_seed) == 5
    occma = next(r for r in per_seed if r["algorithm"] == "occma")
    assert float(occma["normalized_cost"]) == 1.0
    assert (tmp_path / "compare.csv").exists()


def test_compare_shape(bundled_series):
    seeds = cli.parse_seeds("1..10")
    rows = cli.compare_rows(ScenarioConfig(), seeds, bundled_series)
    assert len(rows) == 50
    agg = cli.aggregate(rows)
    assert len(agg) == 10 and {r["seed"] for r in agg} == {"mean", "std"}


def test_parse_seeds():
    assert cli.parse_seeds("3") == [3]
    assert cli.parse_seeds("1,4,9") == [1, 4, 9]
    assert cli.parse_seeds("1..4") == [1, 2, 3, 4]
    with pytest.raises(ValueError):
        cli.parse_seeds(" , ")
    assert cli.main(["compare", "--seeds", "x"]) == 2


def test_sweep_usage_errors(capsys):
    assert cli.main(["sweep", "--param", "v_charg", "--values", ""]) == 2
    assert cli.main(["sweep", "--param", "colour", "--values", "1"]) == 2


def test_sweep_v_charg(tmp_path, capsys):
    assert cli.main(["sweep", "--param", "v_charg", "--values", "50,350",
                     "--out", str(tmp_path)]) == 0
    rows = table(capsys.readouterr().out)
    assert [r["value"] for r in rows] == ["50", "350"]
    assert all(r["status"] == "ok" for r in rows)
    assert (tmp_path / "sweep.csv").read_text().startswith("parameter,value")


def test_sweep_table_scenarios(capsys):
    assert cli.main(["sweep", "--param", "n", "--values", "25,50,100,200"]) == 0
    rows = table(capsys.readouterr().out)
    assert [r["value"] for r in rows] == ["25", "50", "100", "200"]
    assert all(r["status"] == "ok" for r in rows)


def test_help_lists_every_key(capsys):
    with pytest.raises(SystemExit):
        cli.main(["run", "--help"])
    text = capsys.readouterr().out
    for key in ScenarioConfig.__dataclass_fields__:
        assert key in text
