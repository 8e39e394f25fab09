import copy
import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from fedlangevin import cli
from fedlangevin.analytics import BudgetProblem, budget_iterations
from fedlangevin.errors import ConfigError, TraceParseError

SPEC = {
    "name": "smoke",
    "potentials": {"generate": {"num_clients": 3, "dim": 2, "seed": 1, "n_terms": 4}},
    "sweep": {
        "rule": ["fald", "vrfald"],
        "p_comm": [0.5],
        "gamma": {"multiplier": [0.5]},
        "tau": [0.0, 1.0],
    },
    "sampler": {"total_iters": 400, "batch_size": 1},
    "replication": {"chains": 2, "base_seed": 3},
    "outputs": {"traces": True},
}


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return path


def typed(value, types):
    """Interpret one CSV cell using the types a row schema allows."""
    if value == "" and "null" in types:
        return None
    if "boolean" in types and value in ("true", "false"):
        return value == "true"
    if "integer" in types:
        try:
            return int(value)
        except ValueError:
            pass
    if "number" in types:
        return float(value)
    return value


def csv_rows(path, schema_name):
    schema = cli.load_schema(schema_name)
    props = schema.get("properties", {})
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        doc = {}
        for key, value in row.items():
            spec = props.get(key)
            if spec is None:  # pattern properties hold plain numbers
                spec = {"type": "number"}
            types = spec.get("type", ["string"])
            doc[key] = typed(value, [types] if isinstance(types, str) else types)
        cli.validate_document(doc, schema_name)
        out.append(doc)
    return out


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture
def spec_path(tmp_path):
    return write_json(tmp_path / "spec.json", SPEC)


# -- run ---------------------------------------------------------------------


def test_run_writes_valid_artifacts(tmp_path, spec_path, capsys, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    out = tmp_path / "out"
    code, stdout, _ = run_cli(capsys, "run", "--spec", str(spec_path), "--out", str(out))
    assert code == 0
    assert json.loads(stdout)["rows"] == 8

    summary = json.loads((out / "summary.json").read_text())
    cli.validate_document(summary, "summary")
    assert summary["created"] == "1970-01-01T00:00:00+00:00"
    for name in summary["files"]:
        assert (out / name).exists()

    results = csv_rows(out / "results.csv", "results_row")
    cells = csv_rows(out / "cells.csv", "cells_row")
    metrics = csv_rows(out / "metrics.csv", "metrics_row")
    assert len(results) == 8 and len(cells) == 4
    assert {m["config_hash"] for m in metrics} == {summary["config_hash"]}
    assert all(r["n_samples"] == 360 for r in results)
    for trace in sorted((out / "traces").iterdir()):
        rows = csv_rows(trace, "trace_row")
        assert len(rows) == 360
    cli.validate_document(json.loads((out / "posterior.json").read_text()), "gaussian_law")
    cli.validate_document(json.loads((out / "potentials.json").read_text()), "potential_set")


def test_single_cell_two_replicates(tmp_path):
    doc = copy.deepcopy(SPEC)
    doc["sweep"] = {"rule": ["fald"], "p_comm": [0.5], "gamma": {"absolute": [0.01]}}
    result = cli.run_experiment(cli.ExperimentSpec.from_dict(doc))
    assert len(result.rows) == 2
    assert result.rows[0]["seed_shared"] != result.rows[1]["seed_shared"]


def test_rerun_is_byte_identical(tmp_path, spec_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    spec = cli.load_experiment(spec_path)
    for name in ("a", "b"):
        cli.write_outputs(cli.run_experiment(spec, workers=1), tmp_path / name)
    monkeypatch.setenv(cli.WORKERS_ENV, "2")
    cli.write_outputs(cli.run_experiment(spec), tmp_path / "c")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) > 5
    for rel in files:
        first = (tmp_path / "a" / rel).read_bytes()
        assert first == (tmp_path / "b" / rel).read_bytes(), rel
        assert first == (tmp_path / "c" / rel).read_bytes(), rel


def test_table_shaped_grid(tmp_path):
    doc = copy.deepcopy(SPEC)
    doc["sweep"] = {
        "rule": ["fald", "vrfald"],
        "p_comm": [0.2, 0.1, 0.05],
        "gamma": {"multiplier": [0.5, 0.2, 0.1]},
    }
    doc["sampler"]["total_iters"] = 100
    doc["replication"]["chains"] = 1
    doc["outputs"]["traces"] = False
    spec = cli.ExperimentSpec.from_dict(doc)
    result = cli.run_experiment(spec)
    cli.write_outputs(result, tmp_path)
    cells = csv_rows(tmp_path / "cells.csv", "cells_row")
    assert len(cells) == 18
    keys = {(c["rule"], c["p_comm"], c["gamma_multiplier"]) for c in cells}
    assert len(keys) == 18
    for c in cells:
        assert c["gamma"] == pytest.approx(c["gamma_multiplier"] * c["p_comm"] * result.gamma_bar, rel=1e-15)
    assert not (tmp_path / "traces").exists()


def test_config_hash_tracks_semantic_fields(tmp_path):
    def digest(doc, base_dir="."):
        spec = cli.ExperimentSpec.from_dict(doc, base_dir)
        return cli.config_hash(spec, cli.build_potentials(spec))

    base = digest(SPEC)
    cosmetic = copy.deepcopy(SPEC)
    cosmetic["name"] = "renamed"
    cosmetic["outputs"]["traces"] = False
    assert digest(cosmetic) == base

    # same potentials through a file: same content, same hash
    pset = cli.build_potentials(cli.ExperimentSpec.from_dict(SPEC))
    from fedlangevin.potentials import potential_set_to_dict

    write_json(tmp_path / "set.json", potential_set_to_dict(pset))
    by_path = copy.deepcopy(SPEC)
    by_path["potentials"] = {"path": "set.json"}
    assert digest(by_path, tmp_path) == base

    # explicit defaults are the same experiment
    explicit = copy.deepcopy(SPEC)
    explicit["sampler"]["burn_in"] = 40
    explicit["sweep"]["q_cv"] = ["p_comm"]
    assert digest(explicit) == base

    for path, value in [
        (("sweep", "tau"), [0.0, 0.5]),
        (("replication", "base_seed"), 4),
        (("sampler", "thinning"), 2),
        (("potentials", "generate", "seed"), 2),
    ]:
        changed = copy.deepcopy(SPEC)
        target = changed
        for key in path[:-1]:
            target = target[key]
        target[path[-1]] = value
        assert digest(changed) != base, path


def test_common_seeds_share_streams_across_cells():
    doc = copy.deepcopy(SPEC)
    doc["replication"]["common_seeds"] = True
    spec = cli.ExperimentSpec.from_dict(doc)
    cells = cli.expand_cells(spec, 0.1)
    assert cli.cell_seeds(spec, cells[0], 0) == cli.cell_seeds(spec, cells[1], 0)
    assert cli.cell_seeds(spec, cells[0], 0) != cli.cell_seeds(spec, cells[0], 1)
    own = cli.ExperimentSpec.from_dict(SPEC)
    assert cli.cell_seeds(own, cells[0], 0) != cli.cell_seeds(own, cells[1], 0)


@pytest.mark.parametrize(
    "mutate, path",
    [
        (lambda d: d["sweep"].update(p_comm=[1.5]), "sweep.p_comm.0"),
        (lambda d: d["sampler"].update(total_iters=0), "sampler.total_iters"),
        (lambda d: d["sampler"].update(burn_in=400), "sampler.burn_in"),
        (lambda d: d.update(extra=1), "<root>"),
    ],
)
def test_invalid_spec_reports_field_path(mutate, path):
    doc = copy.deepcopy(SPEC)
    mutate(doc)
    with pytest.raises(ConfigError) as info:
        cli.ExperimentSpec.from_dict(doc)
    assert info.value.path == path


def test_run_time_config_error_paths():
    doc = copy.deepcopy(SPEC)
    doc["sampler"]["batch_size"] = 9
    with pytest.raises(ConfigError) as info:
        cli.run_experiment(cli.ExperimentSpec.from_dict(doc))
    assert info.value.path == "sampler.batch_size"

    doc = copy.deepcopy(SPEC)
    doc["sweep"]["gamma"] = {"absolute": [0.01]}
    doc["sweep"]["p_comm"] = [0.5, 0.1]
    doc["sweep"]["q_cv"] = [1.0, 0.0]
    with pytest.raises(ConfigError) as info:
        cli.run_experiment(cli.ExperimentSpec.from_dict(doc))
    assert info.value.path == "sweep.q_cv.1"


def test_run_errors_are_json(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"potentials": {}\n  oops')
    code, _, err = run_cli(capsys, "run", "--spec", str(bad), "--out", str(tmp_path / "o"))
    doc = json.loads(err)
    cli.validate_document(doc, "error")
    assert code == 2 and doc["error"] == "parse_error" and doc["line"] == 2

    doc = copy.deepcopy(SPEC)
    doc["sweep"]["tau"] = [3.0]
    code, _, err = run_cli(capsys, "run", "--spec", str(write_json(tmp_path / "s.json", doc)), "--out", str(tmp_path))
    assert code == 2 and json.loads(err)["path"] == "sweep.tau.0"

    code, _, err = run_cli(capsys, "run", "--spec", str(tmp_path / "missing.json"), "--out", str(tmp_path))
    assert code == 2 and json.loads(err)["error"] == "io_error"


def test_worker_env_validated(monkeypatch):
    monkeypatch.setenv(cli.WORKERS_ENV, "zero")
    with pytest.raises(ConfigError):
        cli.worker_count()


# -- analyze -----------------------------------------------------------------


@pytest.fixture
def posterior_1d(tmp_path):
    return write_json(tmp_path / "post.json", {"mean": [0.0], "covariance": [[1.0]]})


def write_trace(path, values):
    path.write_text("iteration,x0\n" + "".join(f"{k + 1},{v}\n" for k, v in enumerate(values)))
    return path


def test_analyze_hand_built_trace(tmp_path, posterior_1d, capsys):
    trace = write_trace(tmp_path / "t.csv", [0.0, 2.0])
    code, out, _ = run_cli(capsys, "analyze", "--trace", str(trace), "--posterior", str(posterior_1d))
    assert code == 0
    report = json.loads(out)
    cli.validate_document(report, "analyze_report")
    t = report["traces"][0]
    assert t["variance_mse"] == pytest.approx(1.0)
    assert t["gaussian_fit_w2"] == pytest.approx(math.sqrt(1 + (math.sqrt(2) - 1) ** 2), rel=1e-12)
    # potentials 0 and 2; the 0.9-quantile interpolates to 1.8
    assert t["hpd"]["threshold"] == pytest.approx(1.8)


def test_analyze_identical_traces(tmp_path, posterior_1d, rng):
    values = rng.standard_normal(50)
    a = write_trace(tmp_path / "a.csv", values)
    b = write_trace(tmp_path / "b.csv", values)
    report = cli.analyze([a, b], posterior_1d, reference_path=a)
    assert report["pairwise_w2_1d"][0]["per_coordinate"] == [0.0]
    assert report["traces"][0]["hpd"]["relative_error_vs_reference"] == 0.0


@pytest.mark.parametrize(
    "text, line",
    [
        ("", 1),
        ("iter,x0\n1,0.0\n", 1),
        ("iteration,x0\n1,0.0\n2,0.5,1.0\n", 3),
        ("iteration,x0\n1,abc\n", 2),
        ("iteration,x0\n1,0.0\n2,nan\n", 3),
        ("iteration,x0\n", None),
    ],
)
def test_malformed_traces(tmp_path, posterior_1d, capsys, text, line):
    bad = tmp_path / "bad.csv"
    bad.write_text(text)
    with pytest.raises(TraceParseError) as info:
        cli.read_trace(bad)
    assert info.value.line == line
    code, out, err = run_cli(capsys, "analyze", "--trace", str(bad), "--posterior", str(posterior_1d))
    assert code == 2 and out == ""
    assert json.loads(err)["line"] == line


# -- budget and generate -----------------------------------------------------


def test_budget_command(tmp_path, capsys):
    problem = write_json(tmp_path / "p.json", {"c0": 10.0, "c1": 0.0, "c2": 1.0, "m": 1.0, "epsilon": 0.1, "p_comm": 0.1})
    code, out, _ = run_cli(capsys, "budget", "--problem", str(problem))
    assert code == 0
    sol = json.loads(out)
    cli.validate_document(sol, "budget_solution")
    p = BudgetProblem(10.0, 0.0, 1.0, 1.0, 0.1)
    gammas = np.arange(1, 100_000) * p.gamma_max() / 100_000
    assert sol["K_eps"] == pytest.approx(budget_iterations(p, gammas).min(), rel=1e-6)
    assert sol["communications"]["expected_rounds"] == pytest.approx(0.1 * sol["K_eps"])


def test_budget_doubling_epsilon_does_not_increase_k():
    a = cli.solve_budget({"c0": 4.0, "c1": 0.1, "c2": 1.0, "m": 1.0, "epsilon": 0.2})
    b = cli.solve_budget({"c0": 4.0, "c1": 0.1, "c2": 1.0, "m": 1.0, "epsilon": 0.4})
    assert b["K_eps"] <= a["K_eps"]


def test_budget_infeasible_is_structured(tmp_path, capsys):
    problem = write_json(tmp_path / "p.json", {"c0": 0.001, "c1": 0.0, "c2": 1.0, "m": 1.0, "epsilon": 0.1})
    code, out, err = run_cli(capsys, "budget", "--problem", str(problem))
    assert code == 3 and out == ""
    doc = json.loads(err)
    cli.validate_document(doc, "error")
    assert doc["error"] == "infeasible"


def test_generate_round_trips(tmp_path, capsys):
    out = tmp_path / "set.json"
    assert cli.main(["generate", "--num-clients", "4", "--dim", "2", "--seed", "9", "--out", str(out)]) == 0
    cli.validate_document(json.loads(out.read_text()), "potential_set")


def test_console_script_runs(tmp_path):
    problem = write_json(tmp_path / "p.json", {"c0": 10.0, "c1": 0.0, "c2": 1.0, "m": 1.0, "epsilon": 0.1})
    proc = subprocess.run(
        [sys.executable, "-m", "fedlangevin", "budget", "--problem", str(problem)],
        capture_output=True,
        text=True,
        check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["K_eps"] == pytest.approx(761.64, rel=1e-4)
