import csv
import json
import math
import shutil
import subprocess

import numpy as np
import pytest

from wpinn.cli import main
from wpinn.bench import CSV_COLUMNS, load_params

CONFIG = """[experiment]
problem = laplace_eigen
frequencies = pi
method = optimal_weight
hidden_layers = 5 5
iterations = 12
n_interior = 4
n_boundary = 4
check_every = 5
seeds = 0 1
eval_resolution = 11
output_dir = {out}
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(CONFIG.format(out=tmp_path / "results"))
    return path


def test_run_writes_results_params_and_traces(config, tmp_path, capsys):
    assert main(["run", str(config)]) == 0
    out = tmp_path / "results"
    with open(out / "results.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["seed"]) for r in rows] == [0, 1]
    assert list(rows[0]) == list(CSV_COLUMNS)
    assert all(int(r["iterations"]) == 12 for r in rows)
    params, arch, seed = load_params(out / "laplace_eigen_optimal_weight_seed1.params.txt")
    assert seed == 1 and arch.hidden_layers == (5, 5)
    assert (out / "laplace_eigen_optimal_weight_seed0.trace.csv").exists()
    assert "best seed" in capsys.readouterr().out


def test_run_overrides_and_json(config, tmp_path):
    target = tmp_path / "one.json"
    assert main(["run", str(config), "--seed", "7", "--iterations", "3", "--format", "json", "--out", str(target)]) == 0
    records = json.loads(target.read_text())
    assert [r["seed"] for r in records] == [7]
    assert records[0]["iterations"] == 3


def test_dump_field_from_saved_params(config, tmp_path):
    assert main(["run", str(config), "--seed", "0", "--iterations", "2"]) == 0
    params_file = tmp_path / "results" / "laplace_eigen_optimal_weight_seed0.params.txt"
    field = tmp_path / "field.csv"
    assert main(["dump-field", str(config), str(params_file), "--out", str(field)]) == 0
    data = np.loadtxt(field, delimiter=",", skiprows=1)
    assert data.shape == (121, 5)
    np.testing.assert_allclose(data[:, 4], np.abs(data[:, 2] - data[:, 3]), rtol=0, atol=0)


def test_lambda_command(config, capsys):
    assert main(["lambda", str(config)]) == 0
    text = capsys.readouterr().out
    values = dict(line.split() for line in text.strip().splitlines())
    e = math.exp(-2 * math.pi)
    m_i = math.pi**3 * (1 - e)
    assert float(values["M_I"]) == pytest.approx(m_i, rel=1e-6)
    assert float(values["lambda_optimal"]) == pytest.approx(1.58e-2, rel=0.02)
    assert float(values["lambda_original"]) == pytest.approx(0.8)
    assert values["bounds_source"] == "closed_form"


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "/nonexistent/exp.ini"],
        ["lambda", "/nonexistent/exp.ini"],
    ],
)
def test_errors_exit_nonzero(argv, capsys):
    assert main(argv) != 0
    assert "error" in capsys.readouterr().err


def test_bad_config_value_exits_nonzero(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text("[experiment]\nmethod = fastest\n")
    assert main(["run", str(path)]) == 1


def test_dump_field_dimension_mismatch(config, tmp_path):
    assert main(["run", str(config), "--seed", "0", "--iterations", "1"]) == 0
    params_file = tmp_path / "results" / "laplace_eigen_optimal_weight_seed0.params.txt"
    other = tmp_path / "cd.ini"
    other.write_text("[experiment]\nproblem = convection_diffusion\nalpha = 0.1\n")
    assert main(["dump-field", str(other), str(params_file)]) == 1


def test_usage_error_exits_nonzero():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code != 0


@pytest.mark.skipif(shutil.which("wpinn") is None, reason="console script not installed")
def test_console_script(config):
    proc = subprocess.run(["wpinn", "lambda", str(config)], capture_output=True, text=True)
    assert proc.returncode == 0 and "lambda_optimal" in proc.stdout
    proc = subprocess.run(["wpinn", "run", "/nonexistent.ini"], capture_output=True, text=True)
    assert proc.returncode != 0
