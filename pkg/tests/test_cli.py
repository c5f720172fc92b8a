import json
from pathlib import Path

import jsonschema
import pytest

from fibwalk import cli, combinatorics

ROOT = Path(__file__).resolve().parent.parent
SCHEMAS = ROOT / "schema" / "v1"
CONFIGS = ROOT / "configs"


def schema(name):
    return json.loads((SCHEMAS / f"{name}.json").read_text())


def run(argv, tmp_path, name="out.json"):
    out = tmp_path / name
    try:
        code = cli.main(["--output", str(out), *argv])
    except SystemExit as exc:  # argparse rejects before dispatch
        return exc.code, None
    return code, json.loads(out.read_text())


@pytest.fixture(scope="module")
def solution(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("solve")
    code, doc = run(["solve", "--ell", "2", "--depth", "12"], tmp, "solve.json")
    assert code == 0
    return tmp / "solve.json", doc


def test_solve_output(solution):
    _, doc = solution
    jsonschema.validate(doc, schema("solve"))
    assert doc["ok"] and doc["result"]["verdict"]["ok"]
    assert doc["result"]["lambda_star"].startswith("9.78101749785812")


@pytest.mark.parametrize("argv", [
    ["solve", "--ell", "2", "--depth", "0"],
    ["solve", "--ell", "2"],
    ["walk-sim", "--threads", "0", "--config", "x.json"],
    ["estimate-nu", "--ell", "2", "--depth", "12", "--level", "0", "--seed", "1"],
])
def test_usage_errors(argv, tmp_path):
    assert run(argv, tmp_path)[0] == cli.EXIT_USAGE


def test_invalid_order_is_usage_error(tmp_path):
    code, doc = run(["solve", "--ell", "1", "--depth", "6"], tmp_path)
    assert code == cli.EXIT_USAGE and not doc["ok"]


def test_precision_cap_exit(tmp_path):
    code, doc = run(["solve", "--ell", "2", "--depth", "30", "--bits", "64", "--precision-cap", "64"], tmp_path)
    assert code == cli.EXIT_PRECISION and "error" in doc


def test_precision_cap_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("FIBWALK_PRECISION_CAP", "64")
    code, _ = run(["solve", "--ell", "2", "--depth", "30", "--bits", "64"], tmp_path)
    assert code == cli.EXIT_PRECISION


def test_not_found_exit(tmp_path, monkeypatch):
    def missing(*a, **k):
        raise combinatorics.NotFoundError("no parameter in the bracket")
    monkeypatch.setattr(combinatorics, "solve_parameter", missing)
    code, doc = run(["solve", "--ell", "2", "--depth", "6"], tmp_path)
    assert code == cli.EXIT_NOT_FOUND and not doc["ok"]


def test_combinatorics_verdicts(solution, tmp_path):
    path, _ = solution
    code, doc = run(["combinatorics", "--ell", "2", "--depth", "12", "--solution", str(path)], tmp_path)
    jsonschema.validate(doc, schema("combinatorics"))
    assert code == 0 and doc["result"]["verdict"]["ok"]
    code, doc = run(["combinatorics", "--ell", "2", "--depth", "6", "--lambda", "0.9"], tmp_path)
    assert code == cli.EXIT_FAIL and not doc["result"]["verdict"]["ok"]
    # |f(c) - c| = 0.4 exactly at working precision
    assert doc["result"]["closest_returns"][0]["distance"] == "4e-1"


def test_scaling_report(solution, tmp_path):
    path, _ = solution
    code, doc = run(["scaling-report", "--ell", "2", "--depth", "12", "--solution", str(path)], tmp_path)
    jsonschema.validate(doc, schema("scaling-report"))
    assert code == 0
    out = tmp_path / "r.csv"
    code = cli.main(["--output", str(out), "scaling-report", "--ell", "2", "--depth", "12",
                     "--solution", str(path), "--format", "csv"])
    assert code == 0 and out.read_text().startswith("n,S_n,")


def test_distortion_report(solution, tmp_path):
    path, _ = solution
    code, doc = run(["distortion-report", "--ell", "2", "--depth", "12", "--solution", str(path),
                     "--samples", "20", "--koebe-samples", "2", "--seed", "4"], tmp_path)
    jsonschema.validate(doc, schema("distortion-report"))
    assert code == 0 and doc["result"]["summary"]["passed"]


def test_validate_scaling(tmp_path):
    code, doc = run(["validate-scaling", "--config", str(CONFIGS / "geometric_pair.json")], tmp_path)
    jsonschema.validate(doc, schema("validate-scaling"))
    assert code == 0 and doc["ok"]


def test_walk_sim(tmp_path):
    code, doc = run(["walk-sim", "--config", str(CONFIGS / "walk_escape.json")], tmp_path)
    jsonschema.validate(doc, schema("walk-sim"))
    assert code == 0
    with pytest.warns(UserWarning):
        code, doc = run(["walk-sim", "--config", str(CONFIGS / "walk_descent.json")], tmp_path)
    jsonschema.validate(doc, schema("walk-sim"))


def test_estimate_nu_and_basin(solution, tmp_path):
    path, _ = solution
    code, doc = run(["estimate-nu", "--ell", "2", "--depth", "12", "--solution", str(path),
                     "--level", "6", "--samples", "200", "--seed", "1"], tmp_path)
    jsonschema.validate(doc, schema("estimate-nu"))
    assert code == 0
    code, doc = run(["basin-mc", "--ell", "2", "--depth", "12", "--solution", str(path),
                     "--samples", "20", "--horizon", "20", "--seed", "1"], tmp_path)
    jsonschema.validate(doc, schema("basin-mc"))
    assert code == 0


def test_output_is_byte_identical(solution, tmp_path):
    path, _ = solution
    argv = ["basin-mc", "--ell", "2", "--depth", "12", "--solution", str(path),
            "--samples", "20", "--horizon", "30", "--seed", "9"]
    run(argv, tmp_path, "a.json")
    run(argv, tmp_path, "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_shipped_manifest_is_valid():
    jsonschema.validate(json.loads((CONFIGS / "pipeline_ell2.json").read_text()), schema("pipeline-manifest"))


def test_pipeline(tmp_path):
    manifest = {"steps": [
        {"name": "solve", "argv": ["solve", "--ell", "2", "--depth", "10"]},
        {"name": "check", "argv": ["combinatorics", "--ell", "2", "--depth", "10", "--solution", "{solve}"]},
    ]}
    jsonschema.validate(manifest, schema("pipeline-manifest"))
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(manifest))
    code, doc = run(["pipeline", "--manifest", str(path)], tmp_path, "pipeline.json")
    assert code == 0 and doc["ok"]
    assert [s["exit_code"] for s in doc["steps"]] == [0, 0]
    check = json.loads((tmp_path / "check.json").read_text())
    assert check["result"]["verdict"]["ok"]


def test_pipeline_stops_on_hard_error(tmp_path):
    manifest = {"steps": [
        {"name": "cap", "argv": ["solve", "--ell", "2", "--depth", "30", "--bits", "64", "--precision-cap", "64"]},
        {"name": "never", "argv": ["solve", "--ell", "2", "--depth", "6"]},
    ]}
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(manifest))
    code, doc = run(["pipeline", "--manifest", str(path)], tmp_path, "pipeline.json")
    assert code == cli.EXIT_PRECISION and len(doc["steps"]) == 1
