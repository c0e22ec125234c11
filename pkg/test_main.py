import json
import math

import pytest

from conftest import random_model
from main import build_parser, main
from model import save_model


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, out


@pytest.fixture
def grid_file(tmp_path, capsys):
    path = tmp_path / "grid.json"
    code, out = run(capsys, "gen-spinglass", "--rows", "2", "--cols", "2", "--coupling", "1.5",
                    "--seed", "4", "-o", str(path))
    assert code == 0
    assert json.loads(out) == {"path": str(path), "variables": 4, "edges": 4}
    return path


def test_logz(capsys, grid_file):
    code, out = run(capsys, "logz", str(grid_file), "--samples", "2000", "--seed", "1")
    assert code == 0
    result = json.loads(out)
    assert math.isfinite(result["log_partition"])
    assert result["full_perturbation"]["mean"] == pytest.approx(result["log_partition"], abs=0.15)
    assert result["lowdim_upper_bound"]["M"] == 2000


def test_map_agrees_across_solvers(capsys, grid_file):
    _, brute = run(capsys, "map", str(grid_file))
    _, cut = run(capsys, "map", str(grid_file), "--solver", "mincut")
    brute, cut = json.loads(brute), json.loads(cut)
    assert brute["argmax"] == cut["argmax"]
    assert all(v in (-1, 1) for v in brute["argmax"])
    assert brute["value"] == pytest.approx(cut["value"])


def test_perturbed_map(capsys, grid_file):
    code, out = run(capsys, "map", str(grid_file), "--perturb", "lowdim", "--solver", "mincut", "--seed", "3")
    assert code == 0
    assert json.loads(out)["solver"] == "mincut"


def test_sample_exact(capsys, grid_file):
    code, out = run(capsys, "sample-exact", str(grid_file), "--count", "500", "--show-samples")
    assert code == 0
    result = json.loads(out)
    assert len(result["samples"]) == 500
    assert sum(result["frequencies"].values()) == pytest.approx(1.0)


def test_sample_sequential(capsys, grid_file):
    code, out = run(capsys, "sample-seq", str(grid_file), "--mj-schedule", "20", "--count", "3", "--workers", "1")
    assert code == 0
    result = json.loads(out)
    assert result["count"] == 3
    assert result["accepted"] == len(result["samples"]) == 3
    assert result["solver_calls"] > 0


def test_sample_sequential_with_planned_counts(capsys, tmp_path):
    path = tmp_path / "pair.json"
    save_model(random_model(2, (2, 2)), path)
    code, out = run(capsys, "sample-seq", str(path), "--epsilon", "5.0", "--delta", "0.2", "--workers", "1")
    assert code == 0
    assert len(json.loads(out)["estimator"]["M"]) == 2


def test_check_inequality(capsys):
    code, out = run(capsys, "check-inequality", "gumbel-poincare", "--params", "h=arctan")
    assert code == 0
    result = json.loads(out)
    assert result["all_hold"]
    assert result["reports"][0]["parameters"] == {"h": "arctan"}

    code, out = run(capsys, "check-inequality", "poincare", "--params", "density=laplace", "eta=0.5", "h=sin")
    assert code == 0
    assert json.loads(out)["all_hold"]


def test_plot(capsys, tmp_path):
    data = tmp_path / "data.csv"
    data.write_text("# pmap-dataset 1\nc,M,mean_abs_error\n0,1,0.5\n1,1,0.4\n")
    code, out = run(capsys, "plot", "--in", str(data), "--kind", "line", "-o", str(tmp_path / "fig.svg"))
    assert code == 0
    assert (tmp_path / "fig.svg").exists()


def test_experiment_writes_outputs(capsys, tmp_path):
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"rows": 2, "cols": 2, "M_values": [1, 5], "replicates": 4,
                                "coupling_grid": [0.5], "reference_M": 100, "solver": "brute"}))
    code, _ = run(capsys, "experiment", "error-vs-coupling", "--config", str(plan),
                  "--output-dir", str(tmp_path / "out"), "--workers", "1")
    assert code == 0
    assert (tmp_path / "out" / "error-vs-coupling.csv").exists()
    assert (tmp_path / "out" / "error-vs-coupling_report.json").exists()


def test_invalid_input_exit_code(capsys, tmp_path):
    assert main(["logz", str(tmp_path / "missing.json")]) == 2
    path = tmp_path / "ternary.json"
    save_model(random_model(5, (3, 2)), path)
    assert main(["map", str(path), "--solver", "mincut"]) == 2
    assert main(["check-inequality", "log-sobolev", "--params", "lambda=0.5"]) == 2
    assert main(["check-inequality", "poincare", "--params", "eta"]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y\n1,2\n")
    assert main(["plot", "--in", str(bad), "--kind", "line", "-o", str(tmp_path / "x.svg")]) == 2


def test_resource_limit_exit_code(capsys, tmp_path):
    path = tmp_path / "big.json"
    assert main(["gen-spinglass", "--rows", "3", "--cols", "7", "-o", str(path)]) == 0
    assert main(["logz", str(path)]) == 3


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
