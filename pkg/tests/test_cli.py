import csv
import json

import numpy as np
import pytest

from ofpca import cli
from ofpca.basis import basis_matrix, make_space
from ofpca.errors import NumericalError
from ofpca.evaluation import grid_points
from ofpca.manifold import g_orthonormalize
from ofpca.modelio import ModelFile, load_model, save_model
from ofpca.simgen import builtin_truth


@pytest.fixture(scope="module")
def data_1d(tmp_path_factory):
    path = tmp_path_factory.mktemp("sim") / "d.ndjson"
    assert cli.main(["simulate", "--setting", "1d", "--n", "400", "--seed", "3", "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def fitted(data_1d):
    model = data_1d.with_name("m.json")
    args = ["fit", "--data", str(data_1d), "--model", str(model), "--epochs", "1", "--q", "10", "--n-init", "200"]
    assert cli.main(args) == 0
    return model


def projected_model(setting, R, knots=5):
    """Spline model whose components are the L2 projections of the true ones."""
    truth = builtin_truth(setting)
    space = make_space(truth.domain, [knots] * truth.dims, 3)
    pts = grid_points(truth.domain, 401 if truth.dims == 1 else 81)
    coef, *_ = np.linalg.lstsq(basis_matrix(space, pts), truth.evaluate(pts, R), rcond=None)
    theta = g_orthonormalize(coef, space.gram)
    return ModelFile(space.spec(), theta, truth.eigenvalues[:R].copy(), 0.25, 1e-4, 0.0, (), {})


def test_simulate_line_count_and_determinism(tmp_path):
    a, b = tmp_path / "a.ndjson", tmp_path / "b.ndjson"
    for path in (a, b):
        assert cli.main(["simulate", "--n", "5000", "--seed", "7", "--out", str(path)]) == 0
    assert len(a.read_text().splitlines()) == 5000
    assert a.read_bytes() == b.read_bytes()
    assert json.loads((tmp_path / "a.ndjson.truth.json").read_text())["setting"] == "1d"


def test_simulate_needs_subjects(tmp_path, capsys):
    assert cli.main(["simulate", "--n", "0", "--out", str(tmp_path / "x")]) == cli.EXIT_CONFIG
    assert "n: must be >= 1" in capsys.readouterr().err


def test_fit_writes_all_outputs(fitted):
    metrics = list(csv.reader(fitted.with_suffix(".metrics.csv").open()))
    tuning = list(csv.reader(fitted.with_suffix(".tuning.csv").open()))
    assert metrics[0][:3] == ["step", "grad_norm", "v_score"] and len(metrics) == 81
    assert tuning[0] == ["block", "candidate", "tau", "abv", "selected", "best"] and len(tuning) == 1 + 8 * 6
    model = load_model(fitted)
    assert model.rank == 3 and model.meta["steps"] == 80


def test_fit_is_deterministic(data_1d, fitted, tmp_path):
    again = tmp_path / "again.json"
    args = ["fit", "--data", str(data_1d), "--model", str(again), "--epochs", "1", "--q", "10", "--n-init", "200"]
    assert cli.main(args) == 0
    assert again.read_bytes() == fitted.read_bytes()
    assert again.with_suffix(".metrics.csv").read_bytes() == fitted.with_suffix(".metrics.csv").read_bytes()


def test_fit_config_file_and_flags(data_1d, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("R = 2\nepochs = 1\ntuning = false\ntau = 0.001\n")
    model = tmp_path / "m.json"
    assert cli.main(["fit", "--data", str(data_1d), "--config", str(cfg), "--model", str(model), "--n-init", "300"]) == 0
    loaded = load_model(model)
    assert loaded.rank == 2 and loaded.tau == 0.001


@pytest.mark.parametrize(
    "extra, code",
    [
        (["--R", "0"], cli.EXIT_CONFIG),
        (["--optimizer", "adam"], cli.EXIT_CONFIG),
        (["--bogus", "1"], 2),
        (["--config", "missing.cfg"], cli.EXIT_CONFIG),
        (["--domain", "0:1,0:1"], cli.EXIT_DATA),
    ],
)
def test_fit_errors(data_1d, tmp_path, extra, code):
    args = ["fit", "--data", str(data_1d), "--model", str(tmp_path / "m.json"), *extra]
    if extra[0] == "--bogus":
        with pytest.raises(SystemExit) as exc:
            cli.main(args)
        assert exc.value.code == code
    else:
        assert cli.main(args) == code


def test_fit_reports_bad_data(tmp_path):
    bad = tmp_path / "bad.ndjson"
    bad.write_text('{"id": "a"}\n')
    assert cli.main(["fit", "--data", str(bad), "--model", str(tmp_path / "m.json")]) == cli.EXIT_DATA


def test_numerical_failure_exit_code(monkeypatch, data_1d, tmp_path):
    def boom(*args, **kwargs):
        raise NumericalError("covariance is not positive definite")

    monkeypatch.setattr(cli, "fit", boom)
    assert cli.main(["fit", "--data", str(data_1d), "--model", str(tmp_path / "m.json")]) == cli.EXIT_NUMERICAL


def test_eval_report(fitted, tmp_path, capsys):
    report = tmp_path / "r.json"
    assert cli.main(["eval", "--model", str(fitted), "--truth", "builtin:1d", "--report", str(report)]) == 0
    out = json.loads(report.read_text())
    assert len(out["rmse"]) == 3 and out["grid"] == 201
    assert "phi_3" in capsys.readouterr().out


def test_eval_errors(fitted, tmp_path):
    assert cli.main(["eval", "--model", str(tmp_path / "none.json"), "--truth", "builtin:1d"]) == cli.EXIT_CONFIG
    assert cli.main(["eval", "--model", str(fitted), "--truth", "builtin:2d"]) == cli.EXIT_CONFIG
    assert cli.main(["eval", "--model", str(fitted), "--truth", "builtin:3d"]) == cli.EXIT_CONFIG


def test_eval_spline_floor(tmp_path):
    # the projection of phi_1 = 1 is exact; the cosines leave the spline approximation error
    model = tmp_path / "proj.json"
    save_model(projected_model("1d", 3), model)
    spec = tmp_path / "truth.json"
    spec.write_text(json.dumps({"domain": [[0, 1]], "components": [
        [{"coef": 1, "freq": [0]}], [{"coef": 2**0.5, "freq": [1]}], [{"coef": 2**0.5, "freq": [2]}]]}))
    report = tmp_path / "r.json"
    assert cli.main(["eval", "--model", str(model), "--truth", str(spec), "--report", str(report)]) == 0
    rmse = json.loads(report.read_text())["rmse"]
    assert rmse[0] < 0.01
    assert max(rmse) < 0.05


@pytest.mark.parametrize("setting, grid, rows", [("1d", 201, 201), ("2d", 101, 10201)])
def test_export_rows_and_values(tmp_path, setting, grid, rows):
    m = projected_model(setting, 3)
    model = tmp_path / "m.json"
    save_model(m, model)
    out = tmp_path / "fpc.csv"
    assert cli.main(["export-fpc", "--model", str(model), "--grid", str(grid), "--out", str(out)]) == 0
    table = list(csv.reader(out.open()))
    d = m.space.dims
    assert table[0] == [f"loc_{j + 1}" for j in range(d)] + ["fpc_1", "fpc_2", "fpc_3"]
    assert len(table) == rows + 1
    values = np.array(table[1:], dtype=float)
    expected = basis_matrix(m.space, values[:, :d]) @ m.theta
    assert np.abs(values[:, d:] - expected).max() < 1e-12


def test_export_errors(tmp_path, fitted):
    assert cli.main(["export-fpc", "--model", str(tmp_path / "x.json"), "--out", str(tmp_path / "o.csv")]) == 2
    assert cli.main(["export-fpc", "--model", str(fitted), "--grid", "1", "--out", str(tmp_path / "o.csv")]) == 2
