"""Accuracy metrics, covariance reconstruction and convergence diagnostics."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .basis import SplineSpace, basis_matrix
from .errors import ConfigError
from .model import ModelParams

__all__ = [
    "FpcEstimate",
    "grid_points",
    "fpc_rmse",
    "reconstruct_covariance",
    "StepRecord",
    "diagnostics",
    "write_metrics_csv",
]

SMOOTHING = 0.99


@dataclass(frozen=True, eq=False)
class FpcEstimate:
    space: SplineSpace
    theta: np.ndarray
    lam: np.ndarray
    sigma2: float

    @classmethod
    def from_params(cls, space: SplineSpace, params: ModelParams) -> "FpcEstimate":
        return cls(space, params.theta, params.lam, params.sigma2)

    @property
    def rank(self) -> int:
        return self.theta.shape[1]

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Estimated components at ``points``; shape ``(n, R)``."""
        return basis_matrix(self.space, points) @ self.theta


def grid_points(domain, resolution: int) -> np.ndarray:
    """Regular grid with ``resolution`` points per dimension, first dimension slowest."""
    axes = [np.linspace(lo, hi, resolution) for lo, hi in domain]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def fpc_rmse(estimate: FpcEstimate, truth, grid_resolution: int | None = None) -> np.ndarray:
    """Sign-aligned root mean squared error of each component on a regular grid.

    ``truth`` needs ``domain`` and ``evaluate(points, R)``; components are
    matched by index.  The default grid is 201 points in 1D, 101 x 101 in 2D.
    """
    dims = estimate.space.dims
    if tuple(map(tuple, truth.domain)) != tuple(map(tuple, estimate.space.domain)):
        raise ConfigError("estimate and truth are defined on different domains")
    R = estimate.rank
    if len(truth.eigenfunctions) < R:
        raise ConfigError(f"truth has {len(truth.eigenfunctions)} components, estimate has {R}")
    if grid_resolution is None:
        grid_resolution = 201 if dims == 1 else 101
    pts = grid_points(estimate.space.domain, grid_resolution)
    est = estimate.evaluate(pts)
    ref = truth.evaluate(pts, R)
    plus = np.sqrt(np.mean((est - ref) ** 2, axis=0))
    minus = np.sqrt(np.mean((est + ref) ** 2, axis=0))
    return np.minimum(plus, minus)


def reconstruct_covariance(estimate: FpcEstimate, s, t) -> float:
    """Rank-R covariance ``sum_r lam_r phi_r(s) phi_r(t)``."""
    phi = estimate.evaluate(np.vstack([np.atleast_1d(np.asarray(s, float)), np.atleast_1d(np.asarray(t, float))]))
    return float(np.sum(estimate.lam * (phi[0] * phi[1])))


@dataclass(frozen=True)
class StepRecord:
    """One optimizer step.

    ``smoothed_norm``, when present, is the length of the chain's smoothed
    gradient vector (see :func:`ofpca.optim.advance`).
    """

    step: int
    grad_norm: float
    v_score: float
    tau: float
    lam: tuple
    sigma2: float
    smoothed_norm: float | None = None


def diagnostics(history: Sequence[StepRecord], smoothing: float = SMOOTHING) -> list[StepRecord]:
    """Smoothed gradient-norm series; other fields pass through.

    Records that carry ``smoothed_norm`` already hold the length of the
    smoothed gradient vector, which averages out mini-batch noise instead of
    accumulating it; those values are reported as they are.  Otherwise the
    raw norms are smoothed exponentially, starting from the first one.
    """
    if not history:
        raise ConfigError("diagnostics need at least one step")
    out, level = [], None
    for rec in history:
        if rec.smoothed_norm is not None:
            level = rec.smoothed_norm
        elif level is None:
            level = rec.grad_norm
        else:
            level = smoothing * level + (1 - smoothing) * rec.grad_norm
        out.append(StepRecord(rec.step, level, rec.v_score, rec.tau, rec.lam, rec.sigma2))
    return out


def write_metrics_csv(path, rows: Sequence[StepRecord]) -> None:
    """One line per step; pass :func:`diagnostics` output to report smoothed norms."""
    R = len(rows[0].lam) if rows else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "grad_norm", "v_score", "tau", *[f"lambda_{r + 1}" for r in range(R)], "sigma2"])
        for rec in rows:
            vals = [rec.grad_norm, rec.v_score, rec.tau, *rec.lam, rec.sigma2]
            w.writerow([rec.step, *(repr(float(v)) for v in vals)])
