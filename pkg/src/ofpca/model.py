"""Covariance model, discrepancy loss, gradients and batch initialization.

For one subject with basis matrix ``B`` and centered observations ``y`` the
model covariance is ``Sigma = B Theta diag(lam) Theta^T B^T + sigma2 I`` and the
discrepancy is ``tr(Sigma^{-1} y y^T) + log|Sigma|``.

Eigenvalues and noise variance are kept as unconstrained ``eta``/``zeta`` with
``lam = exp(eta) + delta`` and ``sigma2 = exp(zeta) + delta``.

Mini-batches are zero-padded to a common length so that every subject is
processed by one batched factorization.  Padded rows have a zero basis row, a
zero value and a unit diagonal in ``Sigma``; they contribute nothing to the
loss or the gradients.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import LinearOperator, cg

from .basis import SplineSpace, basis_matrix
from .errors import ConfigError, DataError, InitializationError, NumericalError
from .manifold import g_orthonormalize

__all__ = [
    "DEFAULT_DELTA",
    "ModelParams",
    "Subject",
    "Batch",
    "EuclideanGrads",
    "assemble_sigma",
    "loss_subject",
    "loss_batch",
    "grads_batch",
    "evaluate_batch",
    "batch_init",
]

DEFAULT_DELTA = 1e-4

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Spline coefficients ``theta`` (p x R) with log-shifted variances."""

    theta: np.ndarray
    eta: np.ndarray
    zeta: float
    delta: float = DEFAULT_DELTA

    @classmethod
    def from_natural(cls, theta, lam, sigma2, delta: float = DEFAULT_DELTA) -> "ModelParams":
        lam = np.asarray(lam, dtype=float)
        if np.any(lam < delta) or sigma2 < delta:
            raise ConfigError("eigenvalues and noise variance must be at least delta")
        with np.errstate(divide="ignore"):
            eta = np.log(lam - delta)
            zeta = float(np.log(sigma2 - delta))
        return cls(np.asarray(theta, dtype=float), eta, zeta, delta)

    @property
    def lam(self) -> np.ndarray:
        return np.exp(self.eta) + self.delta

    @property
    def sigma2(self) -> float:
        return float(np.exp(self.zeta) + self.delta)

    @property
    def rank(self) -> int:
        return self.theta.shape[1]

    def sorted(self) -> "ModelParams":
        """Columns reordered by decreasing eigenvalue."""
        order = np.argsort(-self.eta, kind="stable")
        return replace(self, theta=self.theta[:, order], eta=self.eta[order])


@dataclass(frozen=True, eq=False)
class Subject:
    """One functional observation: ``m`` locations in ``d`` dimensions and values."""

    id: str
    locations: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float)
        if loc.ndim == 1:
            loc = loc[:, None]
        val = np.asarray(self.values, dtype=float).reshape(-1)
        if len(val) < 1:
            raise DataError(f"subject {self.id!r} has no observations")
        if loc.shape[0] != len(val):
            raise DataError(f"subject {self.id!r}: {loc.shape[0]} locations but {len(val)} values")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "values", val)

    @property
    def m(self) -> int:
        return len(self.values)

    @property
    def dims(self) -> int:
        return self.locations.shape[1]


@dataclass(frozen=True, eq=False)
class Batch:
    """Zero-padded stack of subjects: ``B`` is ``(n, m_max, p)``, ``y`` and ``mask`` ``(n, m_max)``."""

    B: np.ndarray
    y: np.ndarray
    mask: np.ndarray
    ids: tuple = field(default=())

    @property
    def size(self) -> int:
        return self.B.shape[0]

    @classmethod
    def from_designs(cls, designs: Sequence[np.ndarray], values: Sequence[np.ndarray], ids=()) -> "Batch":
        if len(designs) == 0:
            raise ConfigError("mini-batch must contain at least one subject")
        n, p = len(designs), designs[0].shape[1]
        m_max = max(d.shape[0] for d in designs)
        B = np.zeros((n, m_max, p))
        y = np.zeros((n, m_max))
        mask = np.zeros((n, m_max), dtype=bool)
        for i, (d, v) in enumerate(zip(designs, values)):
            m = d.shape[0]
            B[i, :m] = d
            y[i, :m] = v
            mask[i, :m] = True
        return cls(B, y, mask, tuple(ids))

    @classmethod
    def from_subjects(cls, subjects: Iterable[Subject], space: SplineSpace) -> "Batch":
        subjects = list(subjects)
        return cls.from_designs(
            [basis_matrix(space, s.locations) for s in subjects],
            [s.values for s in subjects],
            [s.id for s in subjects],
        )


def _as_batch(batch, space: SplineSpace) -> Batch:
    if isinstance(batch, Batch):
        return batch
    if isinstance(batch, Subject):
        batch = [batch]
    return Batch.from_subjects(batch, space)


@dataclass(frozen=True, eq=False)
class EuclideanGrads:
    d_theta: np.ndarray
    d_eta: np.ndarray
    d_zeta: float


def assemble_sigma(B_i: np.ndarray, params: ModelParams) -> np.ndarray:
    """Model covariance of one subject's observation vector."""
    u = B_i @ params.theta
    sigma = (u * params.lam) @ u.T
    sigma[np.diag_indices_from(sigma)] += params.sigma2
    return sigma


def loss_subject(subject: Subject, space: SplineSpace, params: ModelParams) -> float:
    """Covariance discrepancy ``tr(Sigma^{-1} y y^T) + log|Sigma|`` of one subject."""
    sigma = assemble_sigma(basis_matrix(space, subject.locations), params)
    try:
        cho = linalg.cho_factor(sigma, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"covariance of subject {subject.id!r} is not positive definite") from exc
    y = subject.values
    quad = float(y @ linalg.cho_solve(cho, y))
    logdet = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
    return quad + logdet


def evaluate_batch(
    batch: Batch,
    params: ModelParams,
    penalty: np.ndarray | None = None,
    tau: float = 0.0,
    grad: bool = True,
) -> tuple[float, EuclideanGrads | None]:
    """Average discrepancy over the batch and, optionally, Euclidean gradients.

    The returned loss excludes the penalty; the gradient includes it.
    """
    theta, lam, s2 = params.theta, params.lam, params.sigma2
    B, y, mask = batch.B, batch.y, batch.mask
    n, m, _ = B.shape

    u = B @ theta
    sigma = np.matmul(u * lam, np.swapaxes(u, 1, 2))
    diag = np.where(mask, s2, 1.0)
    idx = np.arange(m)
    sigma[:, idx, idx] += diag
    try:
        low = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("model covariance is not positive definite") from exc
    low_inv = np.linalg.inv(low)
    w = low_inv @ y[:, :, None]
    quad = np.sum(w[:, :, 0] ** 2, axis=1)
    logdet = 2.0 * np.sum(np.log(low[:, idx, idx]), axis=1)
    loss = float(np.mean(quad + logdet))
    if not grad:
        return loss, None

    sigma_inv = np.swapaxes(low_inv, 1, 2) @ low_inv
    z = np.swapaxes(low_inv, 1, 2) @ w
    W = sigma_inv - z @ np.swapaxes(z, 1, 2)
    Wu = W @ u
    p = B.shape[2]
    d_theta = (2.0 / n) * (B.reshape(n * m, p).T @ Wu.reshape(n * m, -1)) * lam
    if tau != 0.0:
        d_theta = d_theta + (2.0 * tau) * (penalty @ theta)
    d_eta = (lam - params.delta) * np.sum(u * Wu, axis=(0, 1)) / n
    trace = np.sum(np.where(mask, W[:, idx, idx], 0.0))
    d_zeta = (s2 - params.delta) * float(trace) / n
    return loss, EuclideanGrads(d_theta, d_eta, d_zeta)


def loss_batch(batch, space: SplineSpace, params: ModelParams, tau: float = 0.0) -> float:
    """Average discrepancy over ``batch`` plus ``tau * tr(Theta^T P Theta)``."""
    b = _as_batch(batch, space)
    loss, _ = evaluate_batch(b, params, grad=False)
    if tau != 0.0:
        theta = params.theta
        loss += tau * float(np.sum(theta * (space.penalty @ theta)))
    return loss


def grads_batch(batch, space: SplineSpace, params: ModelParams, tau: float = 0.0) -> EuclideanGrads:
    """Euclidean gradients of :func:`loss_batch` w.r.t. ``theta``, ``eta`` and ``zeta``."""
    b = _as_batch(batch, space)
    penalty = space.penalty if tau != 0.0 else None
    return evaluate_batch(b, params, penalty, tau)[1]


def batch_init(
    subjects: Sequence[Subject],
    space: SplineSpace,
    R: int,
    ridge: float = 1e-2,
    delta: float = DEFAULT_DELTA,
) -> ModelParams:
    """Initial estimate from a smoothed fit of within-subject cross products.

    The coefficient covariance ``K`` (so that the covariance surface is
    ``b(s)^T K b(t)``) minimizes the mean squared error to all products
    ``y_j y_l`` with ``j != l`` of observations within a subject, plus
    ``ridge * tr(K P K G)``.  Leaving out the diagonal keeps the noise out of
    the fit.  The top ``R`` solutions of ``G K G v = mu G v`` give ``theta``.
    Given ``theta``, eigenvalues and noise variance are fitted by least squares
    to all products including the squares, whose expectation under the model
    is ``sum_r lam_r u_jr u_lr + sigma2 [j == l]``.
    """
    subjects = list(subjects)
    p = space.p
    if R < 1 or R > p:
        raise ConfigError(f"rank R must lie in [1, {p}], got {R}")
    total = sum(s.m for s in subjects)
    if len(subjects) < R or total < p:
        raise InitializationError(
            f"need at least {p} observations over {R} or more subjects to initialize, "
            f"got {total} over {len(subjects)}"
        )
    designs = [basis_matrix(space, s.locations) for s in subjects]
    values = [s.values for s in subjects]
    K = _cross_product_covariance(Batch.from_designs(designs, values), space, ridge)
    G = space.gram
    gkg = G @ K @ G
    _, vecs = linalg.eigh(0.5 * (gkg + gkg.T), G)
    theta = g_orthonormalize(vecs[:, ::-1][:, :R], G)
    lam, sigma2 = _moment_variances(designs, values, theta)
    lam = np.maximum(lam, 2.0 * delta)
    sigma2 = max(sigma2, 2.0 * delta)
    order = np.argsort(-lam, kind="stable")
    return ModelParams.from_natural(theta[:, order], lam[order], sigma2, delta)


def _cross_product_covariance(batch: Batch, space: SplineSpace, ridge: float) -> np.ndarray:
    B, y, mask = batch.B, batch.y, batch.mask
    n, m, p = B.shape
    off = mask[:, :, None] & mask[:, None, :] & ~np.eye(m, dtype=bool)
    pairs = int(off.sum())
    if pairs == 0:
        raise InitializationError("no subject has two or more observations")
    Bt = np.swapaxes(B, 1, 2)
    yy = np.where(off, y[:, :, None] * y[:, None, :], 0.0)
    rhs = (Bt @ yy @ B).sum(axis=0) / pairs
    G, P = space.gram, space.penalty

    def normal(vec):
        K = vec.reshape(p, p)
        fitted = (B @ K @ Bt) * off
        out = (Bt @ fitted @ B).sum(axis=0) / pairs + ridge * (P @ K @ G + G @ K @ P)
        return out.ravel()

    op = LinearOperator((p * p, p * p), matvec=normal, dtype=float)
    sol, info = cg(op, rhs.ravel(), rtol=1e-10, maxiter=20 * p * p)
    if info != 0:
        log.warning("initial covariance fit stopped after %d iterations", info)
    K = sol.reshape(p, p)
    return 0.5 * (K + K.T)


def _moment_variances(designs, values, theta) -> tuple[np.ndarray, float]:
    R = theta.shape[1]
    gram = np.zeros((R + 1, R + 1))
    rhs = np.zeros(R + 1)
    for d, y in zip(designs, values):
        u = d @ theta
        feats = np.empty((R + 1, len(y) ** 2))
        for r in range(R):
            feats[r] = np.outer(u[:, r], u[:, r]).ravel()
        feats[R] = np.eye(len(y)).ravel()
        gram += feats @ feats.T
        rhs += feats @ np.outer(y, y).ravel()
    sol = np.linalg.lstsq(gram, rhs, rcond=None)[0]
    return sol[:R], float(sol[R])
