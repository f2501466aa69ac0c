"""Generalized Stiefel manifold ``{Theta : Theta^T G Theta = I}``.

The Riemannian metric is ``<xi, eta> = tr(xi^T G eta)``.  Under it the normal
space at ``Theta`` is ``{Theta S : S symmetric}``, which gives the closed-form
tangent projection used here.  Retraction is Cholesky-QR in the ``G`` inner
product.
"""
from __future__ import annotations

import numpy as np
from scipy import linalg

from .errors import NumericalError, RankError, StateError, StepError

__all__ = [
    "GramMetric",
    "as_metric",
    "sym",
    "feasibility_residual",
    "tangency_residual",
    "project_tangent",
    "riemannian_grad",
    "retract",
    "retract_halving",
    "inverse_retract_approx",
    "g_orthonormalize",
    "g_norm",
]

FEASIBLE_TOL = 1e-8
BASE_POINT_TOL = 1e-6
MAX_HALVINGS = 10


class GramMetric:
    """A symmetric positive-definite Gram matrix with a cached Cholesky factor."""

    def __init__(self, G: np.ndarray):
        G = np.asarray(G, dtype=float)
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise NumericalError(f"Gram matrix must be square, got shape {G.shape}")
        try:
            self._cho = linalg.cho_factor(G, lower=True, check_finite=True)
        except linalg.LinAlgError as exc:
            raise NumericalError("Gram matrix is not positive definite") from exc
        self.G = G

    @property
    def p(self) -> int:
        return self.G.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Apply ``G^{-1}``."""
        return linalg.cho_solve(self._cho, rhs, check_finite=False)


def as_metric(G) -> GramMetric:
    return G if isinstance(G, GramMetric) else GramMetric(G)


def sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def feasibility_residual(theta: np.ndarray, G) -> float:
    """``||Theta^T G Theta - I||_F``."""
    G = as_metric(G).G
    r = theta.shape[1]
    return float(np.linalg.norm(theta.T @ G @ theta - np.eye(r)))


def tangency_residual(theta: np.ndarray, G, xi: np.ndarray) -> float:
    """``||sym(Theta^T G xi)||_F``; zero for tangent vectors."""
    G = as_metric(G).G
    return float(np.linalg.norm(sym(theta.T @ G @ xi)))


def g_norm(xi: np.ndarray, G) -> float:
    """Norm of ``xi`` under the metric ``tr(xi^T G xi)``."""
    G = as_metric(G).G
    return float(np.sqrt(max(np.sum(xi * (G @ xi)), 0.0)))


def _check_base(theta: np.ndarray, metric: GramMetric) -> None:
    res = feasibility_residual(theta, metric)
    if not res < BASE_POINT_TOL:
        raise StateError(f"base point is not on the manifold (residual {res:.3e})")


def _project(theta: np.ndarray, G: np.ndarray, xi: np.ndarray) -> np.ndarray:
    return xi - theta @ sym(theta.T @ (G @ xi))


def project_tangent(theta: np.ndarray, G, xi_raw: np.ndarray, check: bool = True) -> np.ndarray:
    """Orthogonal projection (in the ``G`` metric) onto the tangent space at ``theta``."""
    metric = as_metric(G)
    if check:
        _check_base(theta, metric)
    return _project(theta, metric.G, xi_raw)


def riemannian_grad(theta: np.ndarray, G, euclid_grad: np.ndarray, check: bool = True) -> np.ndarray:
    """Convert a Euclidean gradient to the Riemannian gradient, ``P(G^{-1} grad)``."""
    metric = as_metric(G)
    if check:
        _check_base(theta, metric)
    return _project(theta, metric.G, metric.solve(euclid_grad))


def retract(theta: np.ndarray, G, xi: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Cholesky-QR retraction of ``scale * xi`` at ``theta``.

    Raises
    ------
    StepError
        If ``Y^T G Y`` is not numerically positive definite.
    """
    if scale == 0.0:
        return theta.copy()
    metric = as_metric(G)
    y = theta + scale * xi
    a = sym(y.T @ metric.G @ y)
    try:
        low = linalg.cholesky(a, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise StepError("retraction lost full rank; reduce the step") from exc
    out = linalg.solve_triangular(low, y.T, lower=True).T
    if not np.all(np.isfinite(out)) or not feasibility_residual(out, metric) < FEASIBLE_TOL:
        raise StepError("retraction did not restore feasibility")
    return out


def retract_halving(theta: np.ndarray, G, xi: np.ndarray, scale: float) -> np.ndarray:
    """Retract, halving ``scale`` up to ``MAX_HALVINGS`` times on step errors."""
    for _ in range(MAX_HALVINGS + 1):
        try:
            return retract(theta, G, xi, scale)
        except StepError:
            scale *= 0.5
    raise StepError(f"retraction failed after {MAX_HALVINGS} step halvings")


def inverse_retract_approx(base: np.ndarray, G, target: np.ndarray) -> np.ndarray:
    """First-order inverse retraction: tangent projection of ``target - base``.

    Accurate to ``O(||xi||^2)`` for ``target = retract(base, xi)``.
    """
    metric = as_metric(G)
    _check_base(base, metric)
    _check_base(target, metric)
    return _project(base, metric.G, target - base)


def g_orthonormalize(M: np.ndarray, G, rtol: float = 1e-12) -> np.ndarray:
    """Map a full-column-rank ``M`` to ``M L^{-T}`` with ``L L^T = M^T G M``."""
    metric = as_metric(G)
    M = np.asarray(M, dtype=float)
    a = sym(M.T @ metric.G @ M)
    w = np.linalg.eigvalsh(a)
    if w[0] <= rtol * max(w[-1], np.finfo(float).tiny):
        raise RankError("matrix is rank deficient in the G inner product")
    low = linalg.cholesky(a, lower=True)
    return linalg.solve_triangular(low, M.T, lower=True).T
