import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ofpca.basis import basis_matrix, eval_basis, gram_matrix, make_space, penalty_matrix
from ofpca.errors import ConfigError, DomainError


def fit_coefficients(space, func, n=400, seed=0):
    """Least-squares spline coefficients of ``func``; exact when ``func`` lies in the space."""
    pts = np.random.default_rng(seed).uniform(0, 1, (n, space.dims))
    coef, *_ = np.linalg.lstsq(basis_matrix(space, pts), func(pts), rcond=None)
    return coef


@pytest.mark.parametrize(
    "domain, knots, degree, p",
    [([(0, 1)], [5], 3, 9), ([(0, 1), (0, 1)], [5, 5], 3, 81), ([(0, 1)], [1], 1, 3)],
)
def test_basis_size(domain, knots, degree, p):
    assert make_space(domain, knots, degree).p == p


def test_linear_hats():
    space = make_space([(0, 1)], [1], 1)
    np.testing.assert_allclose(eval_basis(space, 0.0), [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(eval_basis(space, 0.25), [0.5, 0.5, 0], atol=1e-15)


def test_single_row_and_duplicates(space1d):
    B = basis_matrix(space1d, np.array([[0.3], [0.3], [0.7]]))
    np.testing.assert_array_equal(B[0], eval_basis(space1d, 0.3))
    np.testing.assert_array_equal(B[0], B[1])


@pytest.mark.parametrize("dims", [1, 2])
def test_partition_of_unity(dims):
    space = make_space([(0, 1)] * dims, [5] * dims, 3)
    pts = np.random.default_rng(1).uniform(0, 1, (1000, dims))
    pts[0], pts[1] = 0.0, 1.0
    assert np.max(np.abs(basis_matrix(space, pts).sum(axis=1) - 1.0)) < 1e-12


def test_gram_piecewise_constant():
    G = gram_matrix(make_space([(0, 1)], [1], 0))
    np.testing.assert_allclose(G, np.diag([0.5, 0.5]), atol=1e-15)


def test_gram_linear_hats():
    # hat functions of width 1/2: exact integrals of products of linear pieces
    expected = np.array([[1 / 6, 1 / 12, 0], [1 / 12, 1 / 3, 1 / 12], [0, 1 / 12, 1 / 6]])
    np.testing.assert_allclose(gram_matrix(make_space([(0, 1)], [1], 1)), expected, atol=1e-15)


@pytest.mark.parametrize("degree, knots, interval", [(3, 5, (0, 1)), (2, 4, (-1, 2)), (4, 7, (0, 3))])
def test_gram_matches_trapezoid(degree, knots, interval):
    space = make_space([interval], [knots], degree)
    x = np.linspace(*interval, 400001)
    B = basis_matrix(space, x[:, None])
    ref = np.trapezoid(B[:, :, None] * B[:, None, :], x, axis=0)
    rel = np.linalg.norm(gram_matrix(space) - ref) / np.linalg.norm(ref)
    assert rel < 1e-8


def test_gram_kronecker(space2d):
    m = space2d.marginals
    np.testing.assert_allclose(space2d.gram, np.kron(m[0].gram, m[1].gram), atol=1e-15)


def test_tensor_ordering(space2d):
    s, t = 0.31, 0.77
    m = space2d.marginals
    expected = np.kron(m[0].evaluate(np.array([s]))[0], m[1].evaluate(np.array([t]))[0])
    np.testing.assert_array_equal(eval_basis(space2d, [s, t]), expected)


@pytest.mark.parametrize("a, b", [(1.0, 0.0), (0.0, 1.0), (-2.5, 3.0)])
def test_penalty_nullspace_1d(space1d, a, b):
    theta = fit_coefficients(space1d, lambda x: a + b * x[:, 0])
    assert abs(theta @ penalty_matrix(space1d) @ theta) < 1e-10


def test_penalty_nullspace_2d(space2d):
    for f in (lambda x: 1 + 0 * x[:, 0], lambda x: x[:, 0], lambda x: x[:, 1], lambda x: x[:, 0] * x[:, 1]):
        theta = fit_coefficients(space2d, f)
        assert abs(theta @ penalty_matrix(space2d) @ theta) < 1e-10


def test_penalty_of_square(space1d):
    # the integral of (d^2/dt^2 t^2)^2 over [0, 1] is 4
    theta = fit_coefficients(space1d, lambda x: x[:, 0] ** 2)
    assert theta @ penalty_matrix(space1d) @ theta == pytest.approx(4.0, rel=1e-10)


def test_penalty_matches_quadrature_of_second_derivative(space1d):
    theta = np.random.default_rng(3).standard_normal(space1d.p)
    x = np.linspace(0, 1, 200001)
    d2 = space1d.marginals[0].evaluate(x, deriv=2) @ theta
    assert theta @ penalty_matrix(space1d) @ theta == pytest.approx(np.trapezoid(d2**2, x), rel=1e-6)


@given(st.lists(st.floats(-5, 5), min_size=9, max_size=9))
def test_penalty_psd(coef):
    space = make_space([(0, 1)], [5], 3)
    theta = np.array(coef)
    assert theta @ penalty_matrix(space) @ theta >= -1e-10 * (1 + theta @ theta)


@given(st.floats(0, 1), st.floats(0, 1))
def test_partition_of_unity_property(s, t):
    space = make_space([(0, 1), (0, 1)], [2, 3], 2)
    assert abs(eval_basis(space, [s, t]).sum() - 1.0) < 1e-12


def test_out_of_domain(space1d):
    with pytest.raises(DomainError):
        basis_matrix(space1d, np.array([[1.5]]))


@pytest.mark.parametrize(
    "domain, knots, degree",
    [([(1, 0)], [5], 3), ([(0, 1)], [-1], 3), ([(0, 1)], [5], -1), ([], [], 3), ([(0, 1)], [5, 5], 3)],
)
def test_invalid_space(domain, knots, degree):
    with pytest.raises(ConfigError):
        make_space(domain, knots, degree)


def test_penalty_needs_degree_two():
    with pytest.raises(ConfigError):
        penalty_matrix(make_space([(0, 1)], [3], 1))


def test_spec_round_trip(space2d):
    from ofpca.basis import SplineSpace

    again = SplineSpace.from_spec(space2d.spec())
    np.testing.assert_array_equal(again.gram, space2d.gram)
