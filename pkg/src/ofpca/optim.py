"""Streaming parameter updates on the generalized Stiefel manifold.

Three update rules share one gradient computation:

* plain Riemannian SGD,
* Riemannian Adam, whose ``theta`` momentum is re-projected onto the current
  tangent space before it is combined with the new gradient,
* Riemannian iterate averaging, layered on top of either of the above.

``eta`` and ``zeta`` live in Euclidean space and use the ordinary versions of
each rule.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, replace

import numpy as np

from .basis import SplineSpace
from .errors import ConfigError
from .manifold import (
    GramMetric,
    as_metric,
    g_norm,
    g_orthonormalize,
    inverse_retract_approx,
    project_tangent,
    retract,
    retract_halving,
    riemannian_grad,
)
from .model import Batch, ModelParams, _as_batch, evaluate_batch

__all__ = [
    "StepSchedule",
    "AdamState",
    "AvgState",
    "StepResult",
    "step_size",
    "riemannian_grads",
    "rsgd_step",
    "radam_step",
    "asgd_update",
    "averaged_params",
    "gradient_norm",
    "Chain",
    "advance",
    "GRAD_SMOOTHING",
    "REORTH_EVERY",
]

# weight of the past in the smoothed gradient kept for diagnostics
GRAD_SMOOTHING = 0.99
# iterates are re-orthonormalized on every multiple of this step count
REORTH_EVERY = 500


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes ``a * k**-gamma * rsgd_norm_scale``."""

    a: float = 0.2
    gamma: float = 0.6
    rsgd_norm_scale: float = 1.0

    def __post_init__(self):
        if not self.a > 0:
            raise ConfigError(f"step coefficient a must be positive, got {self.a}")
        if not 0.5 < self.gamma <= 1.0:
            raise ConfigError(f"step exponent gamma must lie in (0.5, 1], got {self.gamma}")
        if not self.rsgd_norm_scale > 0:
            raise ConfigError("rsgd_norm_scale must be positive")


def step_size(schedule: StepSchedule, k: int) -> float:
    if k < 1:
        raise ConfigError(f"step index must be >= 1, got {k}")
    return schedule.a * float(k) ** (-schedule.gamma) * schedule.rsgd_norm_scale


@dataclass
class AdamState:
    m_theta: np.ndarray
    v_theta: np.ndarray
    m_eta: np.ndarray
    v_eta: np.ndarray
    m_zeta: float = 0.0
    v_zeta: float = 0.0
    k: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, p: int, R: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        for name, b in (("beta1", beta1), ("beta2", beta2)):
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {b}")
        if not eps > 0:
            raise ConfigError("eps must be positive")
        return cls(np.zeros((p, R)), np.zeros((p, R)), np.zeros(R), np.zeros(R), beta1=beta1, beta2=beta2, eps=eps)

    def copy(self) -> "AdamState":
        return copy.deepcopy(self)


@dataclass
class AvgState:
    """Running Riemannian average of the iterates from step ``k_A`` on."""

    theta_bar: np.ndarray
    eta_bar: np.ndarray
    zeta_bar: float
    k_A: int
    count: int = 0

    @classmethod
    def start(cls, params: ModelParams, k_A: int) -> "AvgState":
        return cls(params.theta.copy(), params.eta.copy(), params.zeta, k_A)

    def copy(self) -> "AvgState":
        return copy.deepcopy(self)


@dataclass(frozen=True)
class StepResult:
    """Per-step record: the pre-update validation score and gradient norms.

    ``grad_norm`` is the length of this step's stochastic gradient and
    ``smoothed_norm`` the length of the chain's exponentially smoothed
    gradient after folding this step in.
    """

    v_score: float
    grad_norm: float
    smoothed_norm: float = float("nan")


def riemannian_grads(
    params: ModelParams,
    batch,
    space: SplineSpace,
    tau: float,
    metric: GramMetric | None = None,
):
    """Return ``(v_score, S_theta, s_eta, s_zeta)`` at ``params``.

    ``v_score`` is the unpenalized average discrepancy of ``batch``.
    """
    metric = metric or as_metric(space.gram)
    b = _as_batch(batch, space)
    penalty = space.penalty if tau != 0.0 else None
    loss, g = evaluate_batch(b, params, penalty, tau)
    s_theta = riemannian_grad(params.theta, metric, g.d_theta, check=False)
    return loss, s_theta, g.d_eta, g.d_zeta


def _rsgd_apply(params, metric, s_theta, s_eta, s_zeta, alpha):
    theta = retract_halving(params.theta, metric, -s_theta, alpha)
    return replace(params, theta=theta, eta=params.eta - alpha * s_eta, zeta=params.zeta - alpha * s_zeta)


def rsgd_step(
    params: ModelParams,
    batch,
    space: SplineSpace,
    tau: float,
    schedule: StepSchedule,
    k: int,
    metric: GramMetric | None = None,
) -> ModelParams:
    """One Riemannian SGD step on the batch."""
    metric = metric or as_metric(space.gram)
    alpha = step_size(schedule, k)
    _, s_theta, s_eta, s_zeta = riemannian_grads(params, batch, space, tau, metric)
    return _rsgd_apply(params, metric, s_theta, s_eta, s_zeta, alpha)


def _radam_apply(params, state: AdamState, metric, s_theta, s_eta, s_zeta, alpha):
    b1, b2, eps = state.beta1, state.beta2, state.eps
    k = state.k + 1
    m_theta = (1 - b1) * s_theta + b1 * project_tangent(params.theta, metric, state.m_theta, check=False)
    v_theta = (1 - b2) * s_theta * s_theta + b2 * state.v_theta
    m_eta = (1 - b1) * s_eta + b1 * state.m_eta
    v_eta = (1 - b2) * s_eta * s_eta + b2 * state.v_eta
    m_zeta = (1 - b1) * s_zeta + b1 * state.m_zeta
    v_zeta = (1 - b2) * s_zeta * s_zeta + b2 * state.v_zeta
    factor = alpha * np.sqrt(1 - b2**k) / (1 - b1**k)

    theta = retract_halving(params.theta, metric, -m_theta / (np.sqrt(v_theta) + eps), factor)
    eta = params.eta - factor * m_eta / (np.sqrt(v_eta) + eps)
    zeta = params.zeta - factor * m_zeta / (np.sqrt(v_zeta) + eps)
    new_state = AdamState(m_theta, v_theta, m_eta, v_eta, float(m_zeta), float(v_zeta), k, b1, b2, eps)
    return replace(params, theta=theta, eta=eta, zeta=float(zeta)), new_state


def radam_step(
    params: ModelParams,
    adam_state: AdamState,
    batch,
    space: SplineSpace,
    tau: float,
    schedule: StepSchedule,
    k: int,
    metric: GramMetric | None = None,
) -> tuple[ModelParams, AdamState]:
    """One Riemannian Adam step; ``adam_state.k`` must equal ``k - 1``."""
    if adam_state.k != k - 1:
        raise ConfigError(f"Adam state is at step {adam_state.k}, cannot take step {k}")
    metric = metric or as_metric(space.gram)
    alpha = step_size(schedule, k)
    _, s_theta, s_eta, s_zeta = riemannian_grads(params, batch, space, tau, metric)
    return _radam_apply(params, adam_state, metric, s_theta, s_eta, s_zeta, alpha)


def asgd_update(avg: AvgState, params: ModelParams, k: int, G) -> AvgState:
    """Fold the iterate produced by step ``k`` into the running average.

    Before ``k_A`` the average simply tracks the iterate.  From then on the
    ``n``-th averaged iterate moves the average a ``1/n`` fraction of the way
    toward it along the manifold.
    """
    if k < avg.k_A:
        return AvgState(params.theta.copy(), params.eta.copy(), params.zeta, avg.k_A, 0)
    n = avg.count + 1
    if n == 1:
        return AvgState(params.theta.copy(), params.eta.copy(), params.zeta, avg.k_A, 1)
    metric = as_metric(G)
    direction = inverse_retract_approx(avg.theta_bar, metric, params.theta)
    theta_bar = retract(avg.theta_bar, metric, direction, 1.0 / n)
    eta_bar = avg.eta_bar + (params.eta - avg.eta_bar) / n
    zeta_bar = avg.zeta_bar + (params.zeta - avg.zeta_bar) / n
    return AvgState(theta_bar, eta_bar, float(zeta_bar), avg.k_A, n)


def averaged_params(avg: AvgState, delta: float) -> ModelParams:
    return ModelParams(avg.theta_bar.copy(), avg.eta_bar.copy(), avg.zeta_bar, delta)


def gradient_norm(s_theta: np.ndarray, metric) -> float:
    """Length of a Riemannian ``theta`` gradient in the ``G`` metric (an L2 function norm)."""
    return g_norm(s_theta, metric)


@dataclass
class Chain:
    """Everything one optimizer trajectory carries between steps."""

    params: ModelParams
    method: str = "radam"
    adam: AdamState | None = None
    avg: AvgState | None = None
    grad_ema: np.ndarray | None = None

    @classmethod
    def start(
        cls,
        params: ModelParams,
        method: str = "radam",
        averaging: bool = True,
        k_A: int = 1,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> "Chain":
        if method not in ("rsgd", "radam"):
            raise ConfigError(f"unknown optimizer {method!r}")
        p, R = params.theta.shape
        adam = AdamState.zeros(p, R, beta1, beta2, eps) if method == "radam" else None
        avg = AvgState.start(params, k_A) if averaging else None
        return cls(params, method, adam, avg)

    def copy(self) -> "Chain":
        return Chain(
            self.params,
            self.method,
            self.adam.copy() if self.adam is not None else None,
            self.avg.copy() if self.avg is not None else None,
            self.grad_ema,
        )

    def estimate(self) -> ModelParams:
        """The averaged parameters when averaging is on, else the current iterate."""
        if self.avg is None or self.avg.count == 0:
            return self.params
        return averaged_params(self.avg, self.params.delta)


def advance(
    chain: Chain,
    batch: Batch,
    space: SplineSpace,
    metric: GramMetric,
    tau: float,
    schedule: StepSchedule,
    k: int,
) -> tuple[Chain, StepResult]:
    """Score ``batch`` at the current iterate, then take step ``k`` on it.

    The chain also keeps an exponentially smoothed ``theta`` gradient for
    diagnostics: the old average is projected onto the current tangent space
    (as the Adam momentum is) before the new gradient is mixed in.
    """
    alpha = step_size(schedule, k)
    theta = chain.params.theta
    v, s_theta, s_eta, s_zeta = riemannian_grads(chain.params, batch, space, tau, metric)
    if chain.grad_ema is None:
        ema = s_theta
    else:
        carried = project_tangent(theta, metric, chain.grad_ema, check=False)
        ema = GRAD_SMOOTHING * carried + (1.0 - GRAD_SMOOTHING) * s_theta
    if chain.method == "radam":
        params, adam = _radam_apply(chain.params, chain.adam, metric, s_theta, s_eta, s_zeta, alpha)
    else:
        params, adam = _rsgd_apply(chain.params, metric, s_theta, s_eta, s_zeta, alpha), None
    if k % REORTH_EVERY == 0:
        params = replace(params, theta=g_orthonormalize(params.theta, metric))
    avg = asgd_update(chain.avg, params, k, metric) if chain.avg is not None else None
    result = StepResult(v, gradient_norm(s_theta, metric), gradient_norm(ema, metric))
    return Chain(params, chain.method, adam, avg, ema), result
