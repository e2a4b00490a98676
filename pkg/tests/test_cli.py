import csv
import json
from pathlib import Path

import pytest

import rbdsde
from rbdsde.cli import EXIT_BLOWUP, EXIT_CHECK, EXIT_OK, EXIT_PARSE, SCHEMA_VERSION, main, run_experiment

CONFIGS = Path(rbdsde.__file__).parent / "configs"


def _write(tmp_path, name, cfg):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def _load(out):
    return json.loads((out / "report.json").read_text())


@pytest.fixture
def out(tmp_path, monkeypatch):
    target = tmp_path / "out"
    monkeypatch.setenv("RBDSDE_OUT", str(target))
    return target


def _solve_cfg(**problem):
    return {"study": "solve", "grid": {"T": 1.0, "M": 20}, "solver": {"degree": 1},
            "problem": problem, "ensemble": {"N": 500, "d": 1, "seed": 3},
            "params": {"pilot_paths": 2000}}


def test_constant_config(out):
    assert main(["solve", "--config", str(CONFIGS / "constant.json")]) == EXIT_OK
    rep = _load(out)
    assert rep["schema"] == SCHEMA_VERSION == 1
    assert rep["pass"] is True
    assert rep["results"]["Y0"]["mean"] == 1.0
    assert rep["results"]["norms"]["mp_norm"] == 0.0
    assert rep["results"]["norms"]["k_norm"] == 0.0
    assert (out / "solution.csv").exists()
    rows = list(csv.reader((out / "plotdata.csv").open()))
    assert rows[0] == ["t", "mean_Y", "mean_K"] and len(rows) == 52


def test_misspelled_family_is_a_parse_error(tmp_path, out):
    path = _write(tmp_path, "bad.json", _solve_cfg(family="lineer", params={}))
    assert run_experiment(path) == EXIT_PARSE
    assert not (out / "report.json").exists()


def test_missing_seed_and_bad_json(tmp_path, out):
    cfg = _solve_cfg(family="constant", params={})
    del cfg["ensemble"]["seed"]
    assert run_experiment(_write(tmp_path, "noseed.json", cfg)) == EXIT_PARSE
    # the command-line seed fills the gap
    assert run_experiment(tmp_path / "noseed.json", seed=5) == EXIT_OK
    (tmp_path / "broken.json").write_text("{not json")
    assert run_experiment(tmp_path / "broken.json") == EXIT_PARSE
    assert run_experiment(tmp_path / "missing.json") == EXIT_PARSE


def test_blowup_exit_code(tmp_path, out):
    cfg = _solve_cfg(family="linear", params={"xi_a": 1.0, "xi_b": 1.0, "f_y": 1e200})
    cfg["solver"]["f_step_mode"] = "explicit"
    assert run_experiment(_write(tmp_path, "blow.json", cfg)) == EXIT_BLOWUP
    rep = _load(out)
    assert rep["error"]["type"] == "NumericalBlowup" and rep["pass"] is False


def test_failing_check_exit_code(tmp_path, out):
    cfg = json.loads((CONFIGS / "truncation.json").read_text())
    cfg["params"]["max_final_over_first"] = 1e-6
    assert run_experiment(_write(tmp_path, "strict.json", cfg)) == EXIT_CHECK
    rep = _load(out)
    assert rep["pass"] is False and rep["checks"]["D_strictly_decreasing"] is True


def test_truncation_config(out):
    assert main(["truncation-study", "--config", str(CONFIGS / "truncation.json")]) == EXIT_OK
    rows = list(csv.DictReader((out / "plotdata.csv").open()))
    D = [float(r["D"]) for r in rows]
    assert len(D) == 4 and all(b < a for a, b in zip(D, D[1:]))


def test_report_is_deterministic(tmp_path, monkeypatch):
    reports = []
    for k in range(2):
        monkeypatch.setenv("RBDSDE_OUT", str(tmp_path / f"run{k}"))
        assert main(["verify-estimates", "--config", str(CONFIGS / "battery.json"), "--paths", "1000"]) == EXIT_OK
        rep = _load(tmp_path / f"run{k}")
        rep.pop("timestamp")
        reports.append(json.dumps(rep, sort_keys=True))
    assert reports[0] == reports[1]
    a, b = ((tmp_path / f"run{k}" / "plotdata.csv").read_bytes() for k in range(2))
    assert a == b


def test_output_location(tmp_path, monkeypatch):
    monkeypatch.delenv("RBDSDE_OUT", raising=False)
    cfg = _solve_cfg(family="constant", params={})
    cfg["output"] = {"dir": str(tmp_path / "configured")}
    assert run_experiment(_write(tmp_path, "c.json", cfg)) == EXIT_OK
    assert (tmp_path / "configured" / "report.json").exists()
    monkeypatch.setenv("RBDSDE_OUT", str(tmp_path / "env"))
    assert run_experiment(tmp_path / "c.json") == EXIT_OK
    assert (tmp_path / "env" / "report.json").exists()
    monkeypatch.delenv("RBDSDE_OUT")
    monkeypatch.chdir(tmp_path)
    del cfg["output"]
    assert run_experiment(_write(tmp_path, "plain.json", cfg)) == EXIT_OK
    assert (tmp_path / "rbdsde-out" / "plain" / "report.json").exists()


def test_overrides_are_recorded(out):
    code = main(["solve", "--config", str(CONFIGS / "constant.json"), "--paths", "300", "--steps", "10",
                 "--seed", "9", "--threads", "2"])
    assert code == EXIT_OK
    cfg = _load(out)["config"]
    assert cfg["ensemble"] == {"N": 300, "d": 1, "seed": 9}
    assert cfg["grid"]["M"] == 10


def test_unknown_subcommand_exits_via_argparse():
    with pytest.raises(SystemExit):
        main(["no-such-study", "--config", "x.json"])
