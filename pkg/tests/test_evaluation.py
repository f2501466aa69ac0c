import csv
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ofpca.basis import make_space
from ofpca.config import defaults_for
from ofpca.errors import ConfigError
from ofpca.evaluation import (
    FpcEstimate,
    StepRecord,
    diagnostics,
    fpc_rmse,
    grid_points,
    reconstruct_covariance,
    write_metrics_csv,
)
from ofpca.pipeline import fit
from ofpca.simgen import builtin_truth, gen_1d, truth_from_spec


class FunctionEstimate:
    """Estimate given by closed-form functions rather than spline coefficients."""

    def __init__(self, truth, R, sign=None, shift=0.0, lam=None):
        self.truth, self.rank, self.shift = truth, R, shift
        self.sign = np.ones(R) if sign is None else np.asarray(sign, float)
        self.space = make_space(truth.domain, [1] * truth.dims, 3)
        self.lam = truth.eigenvalues[:R] if lam is None else np.asarray(lam, float)

    def evaluate(self, points):
        return self.truth.evaluate(np.asarray(points, float).reshape(-1, self.truth.dims), self.rank) * self.sign + self.shift


def test_grid_points():
    pts = grid_points([(0, 1), (0, 2)], 3)
    assert pts.shape == (9, 2)
    np.testing.assert_array_equal(pts[:3], [[0, 0], [0, 1], [0, 2]])


@pytest.mark.parametrize("setting", ["1d", "2d"])
def test_rmse_of_truth_is_zero(setting):
    truth = builtin_truth(setting)
    R = 3
    assert np.all(fpc_rmse(FunctionEstimate(truth, R), truth) == 0.0)
    assert np.all(fpc_rmse(FunctionEstimate(truth, R, sign=[-1, 1, -1]), truth) == 0.0)


@given(st.lists(st.sampled_from([-1.0, 1.0]), min_size=3, max_size=3))
def test_rmse_sign_invariance(signs):
    truth = builtin_truth("1d")
    est = FunctionEstimate(truth, 3, shift=0.05)
    flipped = FunctionEstimate(truth, 3, sign=signs, shift=0.05 * np.asarray(signs))
    np.testing.assert_allclose(fpc_rmse(flipped, truth), fpc_rmse(est, truth), rtol=1e-14)


def test_rmse_of_constant_shift(space1d):
    truth = truth_from_spec({"domain": [[0, 1]], "components": [[{"coef": 1, "freq": [0]}]]})
    # B-splines sum to one, so constant coefficients give constant functions
    exact = FpcEstimate(space1d, np.ones((space1d.p, 1)), np.array([1.0]), 1.0)
    assert fpc_rmse(exact, truth)[0] < 1e-14
    shifted = FpcEstimate(space1d, np.full((space1d.p, 1), 1.1), np.array([1.0]), 1.0)
    assert fpc_rmse(shifted, truth)[0] == pytest.approx(0.1, abs=1e-12)


def test_rmse_checks_domain_and_rank(space1d):
    est = FpcEstimate(space1d, np.ones((space1d.p, 3)), np.ones(3), 1.0)
    with pytest.raises(ConfigError):
        fpc_rmse(est, builtin_truth("2d"))
    one = truth_from_spec({"domain": [[0, 1]], "components": [[{"coef": 1, "freq": [0]}]]})
    with pytest.raises(ConfigError):
        fpc_rmse(est, one)


def test_covariance_matches_direct_sum():
    truth = builtin_truth("1d")
    R = 4
    est = FunctionEstimate(truth, R)
    grid = np.linspace(0, 1, 21)
    worst = 0.0
    for s in grid:
        for t in grid:
            direct = sum(0.4 / r**2 * truth.evaluate(np.array([[s]]))[0, r - 1] * truth.evaluate(np.array([[t]]))[0, r - 1]
                         for r in range(1, R + 1))
            got = reconstruct_covariance(est, s, t)
            worst = max(worst, abs(got - direct) / max(abs(direct), 1e-12))
            assert got == reconstruct_covariance(est, t, s)
    assert worst < 1e-6


def test_covariance_rank_one_and_bilinear():
    truth = builtin_truth("1d")
    est = FunctionEstimate(truth, 1, lam=[1.0])
    t = 0.37
    assert reconstruct_covariance(est, t, t) == pytest.approx(truth.evaluate(np.array([[t]]), 1)[0, 0] ** 2)
    double = FunctionEstimate(truth, 3, lam=2 * truth.eigenvalues[:3])
    base = FunctionEstimate(truth, 3)
    assert reconstruct_covariance(double, 0.2, 0.9) == pytest.approx(2 * reconstruct_covariance(base, 0.2, 0.9), rel=1e-14)


def records(norms, smoothed=None):
    return [
        StepRecord(k, g, 1.0, 0.1, (1.0,), 0.5, None if smoothed is None else smoothed[k - 1])
        for k, g in enumerate(norms, 1)
    ]


def test_diagnostics_constant_norm():
    out = diagnostics(records([3.0] * 500))
    assert len(out) == 500
    assert out[-1].grad_norm == pytest.approx(3.0, rel=1e-14)


def test_diagnostics_converges_to_level():
    out = diagnostics(records([10.0] + [2.0] * 2000))
    assert out[-1].grad_norm == pytest.approx(2.0, rel=1e-6)


def test_diagnostics_prefers_vector_smoothing():
    out = diagnostics(records([5.0, 6.0, 7.0], smoothed=[5.0, 1.0, 0.5]))
    assert [r.grad_norm for r in out] == [5.0, 1.0, 0.5]


def test_diagnostics_empty():
    with pytest.raises(ConfigError):
        diagnostics([])


def test_smoothed_norm_falls_on_simulation():
    subs, _ = gen_1d(1500, 4)
    res = fit(subs, replace(defaults_for(1), epochs=2, tuning=False, tau=1e-4, n_init=500))
    series = diagnostics(res.history)
    assert len(series) == res.steps
    assert series[-1].grad_norm < series[0].grad_norm


def test_metrics_csv(tmp_path):
    rows = records([1.0, 0.5])
    path = tmp_path / "m.csv"
    write_metrics_csv(path, diagnostics(rows))
    table = list(csv.reader(path.open()))
    assert table[0] == ["step", "grad_norm", "v_score", "tau", "lambda_1", "sigma2"]
    assert len(table) == 3 and float(table[2][1]) == pytest.approx(0.99 * 1.0 + 0.01 * 0.5)
