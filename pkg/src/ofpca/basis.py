"""Marginal and tensor-product B-spline bases.

Tensor-product functions are ordered with dimension 1 varying slowest, i.e.
the basis vector at ``(s, t)`` is ``kron(b_1(s), b_2(t))``.  The Gram and
penalty matrices use the same ordering, so coefficient vectors can be moved
between them without reshuffling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, reduce
from typing import Sequence

import numpy as np
from scipy.interpolate import BSpline

from .errors import ConfigError, DomainError

__all__ = [
    "MarginalSpline",
    "SplineSpace",
    "make_space",
    "eval_basis",
    "basis_matrix",
    "gram_matrix",
    "penalty_matrix",
]


def _gauss_nodes(degree: int) -> tuple[np.ndarray, np.ndarray]:
    # exact for polynomials of degree 2 * degree, the order of b b^T
    n = math.ceil((2 * degree + 1 + 2) / 2)
    return np.polynomial.legendre.leggauss(n)


@dataclass(frozen=True, eq=False)
class MarginalSpline:
    """B-spline basis of a given degree on ``[lower, upper]``.

    ``knots`` is the full knot vector, with the boundary knots repeated
    ``degree + 1`` times.
    """

    degree: int
    knots: np.ndarray
    lower: float
    upper: float

    @classmethod
    def uniform(cls, lower: float, upper: float, n_inner: int, degree: int) -> "MarginalSpline":
        if degree < 0:
            raise ConfigError(f"degree must be non-negative, got {degree}")
        if n_inner < 0:
            raise ConfigError(f"inner knot count must be non-negative, got {n_inner}")
        lower, upper = float(lower), float(upper)
        if not (np.isfinite(lower) and np.isfinite(upper)) or not lower < upper:
            raise ConfigError(f"invalid interval [{lower}, {upper}]")
        inner = np.linspace(lower, upper, n_inner + 2)[1:-1]
        knots = np.concatenate([np.full(degree + 1, lower), inner, np.full(degree + 1, upper)])
        knots.setflags(write=False)
        return cls(degree, knots, lower, upper)

    @property
    def n_basis(self) -> int:
        return len(self.knots) - self.degree - 1

    @property
    def n_inner(self) -> int:
        return self.n_basis - self.degree - 1

    @cached_property
    def _spline(self) -> BSpline:
        return BSpline(self.knots, np.eye(self.n_basis), self.degree, extrapolate=False)

    def evaluate(self, x: np.ndarray, deriv: int = 0) -> np.ndarray:
        """Basis values (or derivatives) at in-domain points; shape ``(len(x), n_basis)``."""
        x = np.asarray(x, dtype=float)
        if deriv == 0:
            out = self._spline(x)
        elif deriv <= self.degree:
            out = self._spline.derivative(deriv)(x)
        else:
            out = np.zeros((x.size, self.n_basis))
        if self.degree == 0:
            # scipy leaves the closed right endpoint undefined for piecewise constants
            out[x == self.upper] = 0.0
            out[x == self.upper, -1] = 1.0
        return out

    def _integrate_outer(self, deriv: int) -> np.ndarray:
        nodes, weights = _gauss_nodes(self.degree)
        breaks = np.unique(self.knots)
        out = np.zeros((self.n_basis, self.n_basis))
        for a, b in zip(breaks[:-1], breaks[1:]):
            half = 0.5 * (b - a)
            x = a + half * (nodes + 1.0)
            vals = self.evaluate(x, deriv)
            out += (vals * (half * weights)[:, None]).T @ vals
        return 0.5 * (out + out.T)

    @cached_property
    def gram(self) -> np.ndarray:
        g = self._integrate_outer(0)
        g.setflags(write=False)
        return g

    @cached_property
    def roughness(self) -> np.ndarray:
        """Integrated outer product of second derivatives."""
        if self.degree < 2:
            raise ConfigError(
                f"second-derivative penalty needs degree >= 2, got {self.degree}"
            )
        r = self._integrate_outer(2)
        r.setflags(write=False)
        return r


@dataclass(frozen=True, eq=False)
class SplineSpace:
    """Tensor product of one or more marginal B-spline bases."""

    marginals: tuple[MarginalSpline, ...]

    @property
    def dims(self) -> int:
        return len(self.marginals)

    @property
    def p(self) -> int:
        return math.prod(m.n_basis for m in self.marginals)

    @property
    def domain(self) -> tuple[tuple[float, float], ...]:
        return tuple((m.lower, m.upper) for m in self.marginals)

    @cached_property
    def gram(self) -> np.ndarray:
        g = reduce(np.kron, [m.gram for m in self.marginals])
        g.setflags(write=False)
        return g

    @cached_property
    def penalty(self) -> np.ndarray:
        terms = []
        for j in range(self.dims):
            factors = [m.roughness if l == j else m.gram for l, m in enumerate(self.marginals)]
            terms.append(reduce(np.kron, factors))
        pen = sum(terms)
        pen = 0.5 * (pen + pen.T)
        pen.setflags(write=False)
        return pen

    def spec(self) -> dict:
        """JSON-friendly description sufficient to rebuild the space."""
        return {
            "domain": [[m.lower, m.upper] for m in self.marginals],
            "inner_knots": [m.n_inner for m in self.marginals],
            "degree": [m.degree for m in self.marginals],
        }

    @classmethod
    def from_spec(cls, spec: dict) -> "SplineSpace":
        degrees = spec["degree"]
        if isinstance(degrees, int):
            degrees = [degrees] * len(spec["domain"])
        return cls(
            tuple(
                MarginalSpline.uniform(lo, hi, k, deg)
                for (lo, hi), k, deg in zip(spec["domain"], spec["inner_knots"], degrees)
            )
        )

    def check_points(self, points: np.ndarray) -> np.ndarray:
        """Return points as an ``(n, d)`` array, raising on any out-of-domain row."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, self.dims) if self.dims > 1 else pts[:, None]
        if pts.ndim != 2 or pts.shape[1] != self.dims:
            raise DomainError(f"expected points of dimension {self.dims}, got shape {pts.shape}")
        lo = np.array([m.lower for m in self.marginals])
        hi = np.array([m.upper for m in self.marginals])
        bad = ~np.all((pts >= lo) & (pts <= hi), axis=1)
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise DomainError(f"location {pts[row].tolist()} at row {row} is outside the domain {self.domain}")
        return pts


def make_space(
    domain: Sequence[Sequence[float]],
    inner_knots: Sequence[int] | int,
    degree: int,
) -> SplineSpace:
    """Build a tensor-product spline space with equally spaced interior knots.

    Parameters
    ----------
    domain : sequence of ``(lower, upper)`` pairs, one per dimension.
    inner_knots : interior knot count per dimension (an int applies to all).
    degree : polynomial degree shared by all marginals.
    """
    domain = [tuple(iv) for iv in domain]
    if len(domain) == 0:
        raise ConfigError("domain must have at least one dimension")
    if isinstance(inner_knots, (int, np.integer)):
        inner_knots = [int(inner_knots)] * len(domain)
    if len(inner_knots) != len(domain):
        raise ConfigError("inner_knots must give one count per dimension")
    for iv in domain:
        if len(iv) != 2:
            raise ConfigError(f"interval {iv} must have two endpoints")
    return SplineSpace(
        tuple(MarginalSpline.uniform(lo, hi, k, degree) for (lo, hi), k in zip(domain, inner_knots))
    )


def basis_matrix(space: SplineSpace, locations: np.ndarray) -> np.ndarray:
    """Evaluate the tensor-product basis at ``m`` locations; returns ``(m, p)``."""
    pts = space.check_points(locations)
    out = space.marginals[0].evaluate(pts[:, 0])
    for j in range(1, space.dims):
        right = space.marginals[j].evaluate(pts[:, j])
        out = (out[:, :, None] * right[:, None, :]).reshape(len(pts), -1)
    return out


def eval_basis(space: SplineSpace, t) -> np.ndarray:
    """Basis vector ``b(t)`` at a single point."""
    pt = np.atleast_1d(np.asarray(t, dtype=float)).reshape(1, -1)
    return basis_matrix(space, pt)[0]


def gram_matrix(space: SplineSpace) -> np.ndarray:
    return space.gram


def penalty_matrix(space: SplineSpace) -> np.ndarray:
    """Tensor-product second-derivative roughness penalty.

    ``sum_j G_1 x ... x P_j x ... x G_d`` so that ``theta^T P theta`` is the sum
    over coordinates of the integrated squared second partial derivative.
    """
    return space.penalty
