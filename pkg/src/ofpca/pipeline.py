"""End-to-end streaming fit: initialize, tune during the first epoch, refine."""
from __future__ import annotations

import logging
import math
import threading
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .basis import SplineSpace, basis_matrix, make_space
from .config import FitConfig
from .errors import DataError, DomainError
from .evaluation import StepRecord
from .manifold import FEASIBLE_TOL, GramMetric, feasibility_residual
from .model import Batch, ModelParams, Subject, batch_init
from .optim import Chain, StepSchedule, advance, gradient_norm, riemannian_grads
from .stream import BatchPlan, center_subjects, make_batches
from .tuning import Beam, best_candidate, flush, select_and_expand, update_stage

__all__ = ["FitResult", "fit", "rsgd_norm_scale", "design_matrices"]

log = logging.getLogger(__name__)


@dataclass
class FitResult:
    space: SplineSpace
    params: ModelParams
    init_params: ModelParams
    tau: float
    tau_path: list
    history: list
    tuning_log: list
    steps: int
    max_residual: float
    violations: int
    seconds: float
    schedule: StepSchedule
    meta: dict = field(default_factory=dict)


def design_matrices(subjects: Sequence[Subject], space: SplineSpace) -> list[np.ndarray]:
    """Basis matrix of every subject, computed in one vectorized pass."""
    if not subjects:
        return []
    locs = np.concatenate([s.locations for s in subjects])
    if locs.shape[1] != space.dims:
        raise DataError(f"data has dimension {locs.shape[1]}, the spline space {space.dims}")
    try:
        full = basis_matrix(space, locs)
    except DomainError:
        for s in subjects:
            try:
                space.check_points(s.locations)
            except DomainError as exc:
                raise DomainError(f"subject {s.id!r}: {exc}") from None
        raise
    bounds = np.cumsum([0] + [s.m for s in subjects])
    return [full[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def rsgd_norm_scale(params, designs, subjects, space, metric, batch_size) -> float:
    """Reciprocal of the mean ``G``-norm of the data gradient over mini-batches of ``subjects``."""
    norms = []
    for start in range(0, len(subjects), batch_size):
        sl = slice(start, start + batch_size)
        b = Batch.from_designs(designs[sl], [s.values for s in subjects[sl]])
        _, s_theta, _, _ = riemannian_grads(params, b, space, 0.0, metric)
        norms.append(gradient_norm(s_theta, metric))
    mean = float(np.mean(norms))
    return 1.0 / mean if mean > 0 else 1.0


def fit(subjects: Sequence[Subject], cfg: FitConfig, workers: int | None = None) -> FitResult:
    """Run the full streaming procedure over ``cfg.epochs`` passes of ``subjects``."""
    t0 = time.perf_counter()
    cfg.validate()
    space = make_space(cfg.domain, cfg.inner_knots, cfg.degree)
    subjects = center_subjects(subjects, cfg.center, cfg.domain)
    if not subjects:
        raise DataError("no subjects to fit")
    designs = design_matrices(subjects, space)
    metric = GramMetric(space.gram)

    init_subjects = subjects[: cfg.n_init]
    params0 = batch_init(init_subjects, space, cfg.R, cfg.ridge, cfg.delta)
    scale = 1.0
    if cfg.optimizer == "rsgd":
        scale = rsgd_norm_scale(params0, designs, init_subjects, space, metric, cfg.batch_size)
    schedule = StepSchedule(cfg.a, cfg.gamma, scale)

    plan = BatchPlan(cfg.batch_size, cfg.epochs, cfg.seed, cfg.shuffle)
    batches = make_batches(len(subjects), plan)
    per_epoch = math.ceil(len(subjects) / cfg.batch_size)
    k_A = cfg.k_a or max(1, per_epoch // 2)

    def stacked(mb) -> Batch:
        idx = mb.indices
        return Batch.from_designs([designs[i] for i in idx], [subjects[i].values for i in idx])

    tracker = {"max": feasibility_residual(params0.theta, metric), "bad": 0}
    lock = threading.Lock()

    def step(chain: Chain, batch: Batch, tau: float, k: int):
        chain, res = advance(chain, batch, space, metric, tau, schedule, k)
        r = feasibility_residual(chain.params.theta, metric)
        if chain.avg is not None and chain.avg.count > 0:
            r = max(r, feasibility_residual(chain.avg.theta_bar, metric))
        with lock:
            tracker["max"] = max(tracker["max"], r)
            tracker["bad"] += not r < FEASIBLE_TOL
        return chain, res

    chain = Chain.start(params0, cfg.optimizer, cfg.averaging, k_A, cfg.beta1, cfg.beta2, cfg.eps)
    first = [mb for mb in batches if mb.epoch == 1]
    rest = [mb for mb in batches if mb.epoch > 1]

    tuning_log, tau_path = [], []
    if cfg.tuning:
        beam = Beam.start(chain, cfg.initial_taus(), cfg.W, cfg.B, cfg.rho, cfg.omega, cfg.q)
        blocks = [first[i:i + cfg.q] for i in range(0, len(first), cfg.q)]
        for n, block in enumerate(blocks, 1):
            update_stage(beam, [(mb.k, stacked(mb)) for mb in block], step, workers)
            last = n == len(blocks)
            if last:
                for c in beam.candidates:
                    c.abv = flush(c.abv)
            select_and_expand(beam, final=last)
        winner = best_candidate(beam)
        chain, tau, history = winner.chain, winner.tau, list(winner.history)
        tuning_log, tau_path = beam.log, beam.tau_path
    else:
        tau, history = cfg.tau, []
        for mb in first:
            chain, res = step(chain, stacked(mb), tau, mb.k)
            history.append(_record(mb.k, res, tau, chain))

    for mb in rest:
        chain, res = step(chain, stacked(mb), tau, mb.k)
        history.append(_record(mb.k, res, tau, chain))

    final = chain.estimate().sorted()
    seconds = time.perf_counter() - t0
    log.info("fit finished: %d steps, tau=%.3g, %.1fs", len(batches), tau, seconds)
    return FitResult(
        space=space,
        params=final,
        init_params=params0,
        tau=tau,
        tau_path=tau_path,
        history=history,
        tuning_log=tuning_log,
        steps=len(batches),
        max_residual=tracker["max"],
        violations=tracker["bad"],
        seconds=seconds,
        schedule=schedule,
        meta={"seed": cfg.seed, "epochs": cfg.epochs, "steps": len(batches), "k_A": k_A,
              "n_subjects": len(subjects)},
    )


def _record(k, res, tau, chain) -> StepRecord:
    p = chain.params
    return StepRecord(k, res.grad_norm, res.v_score, tau, tuple(p.lam.tolist()), p.sigma2, res.smoothed_norm)
