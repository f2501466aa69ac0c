"""Online smoothing-parameter selection.

Each incoming mini-batch first scores the current estimate (before it is
used for an update).  Scores are averaged over blocks of ``q`` mini-batches
and the block averages are folded into an exponentially weighted running
score.  A beam of ``C = W * B`` candidate ``(tau, estimate)`` chains is
advanced block by block: after each block the ``W`` chains with the lowest
running score survive and each is copied into ``B`` children on a
multiplicative ``tau`` grid.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, StateError
from .evaluation import StepRecord
from .model import Batch, ModelParams, loss_batch
from .optim import Chain, StepResult

__all__ = [
    "AbvState",
    "Candidate",
    "Beam",
    "TuningRecord",
    "validation_score",
    "accumulate",
    "flush",
    "abv_closed_form",
    "initial_taus",
    "expand_tau",
    "beam_round",
    "best_candidate",
]

TAU_FLOOR = 1e-16


def validation_score(batch, params: ModelParams, space=None) -> float:
    """Unpenalized average discrepancy of ``params`` on ``batch``."""
    if isinstance(batch, (list, tuple)) and not batch:
        raise ConfigError("validation batch is empty")
    return loss_batch(batch, space, params, tau=0.0)


@dataclass(frozen=True)
class AbvState:
    omega: float = 0.5
    q: int = 20
    block_sum: float = 0.0
    block_count: int = 0
    abv: float = 0.0
    blocks_seen: int = 0

    def __post_init__(self):
        if not 0.0 < self.omega < 1.0:
            raise ConfigError(f"omega must lie in (0, 1), got {self.omega}")
        if self.q < 1:
            raise ConfigError(f"block length q must be >= 1, got {self.q}")


def accumulate(state: AbvState, v_k: float) -> AbvState:
    """Add one validation score; completes a block on every ``q``-th call."""
    total, count = state.block_sum + v_k, state.block_count + 1
    if count < state.q:
        return replace(state, block_sum=total, block_count=count)
    bv = total / count
    abv = (1.0 - state.omega) * bv + state.omega * state.abv
    return replace(state, block_sum=0.0, block_count=0, abv=abv, blocks_seen=state.blocks_seen + 1)


def flush(state: AbvState) -> AbvState:
    """Fold a partially filled block, averaging over the scores it holds."""
    if state.block_count == 0:
        return state
    bv = state.block_sum / state.block_count
    abv = (1.0 - state.omega) * bv + state.omega * state.abv
    return replace(state, block_sum=0.0, block_count=0, abv=abv, blocks_seen=state.blocks_seen + 1)


def abv_closed_form(scores: Sequence[float], q: int, omega: float) -> float:
    """Running score after all complete blocks of ``scores``, by direct summation."""
    n = len(scores) // q
    bv = [float(np.mean(scores[j * q:(j + 1) * q])) for j in range(n)]
    return (1.0 - omega) * sum(omega**j * bv[n - 1 - j] for j in range(n))


def initial_taus(tau_max: float, count: int) -> list[float]:
    """``tau_max`` followed by successive tenths."""
    return [tau_max * 10.0 ** (-j) for j in range(count)]


def expand_tau(tau: float, branching: int, rho: float) -> list[float]:
    """``branching`` values centred on ``tau`` with ratio ``rho``, e.g. ``tau/rho, tau, tau*rho``."""
    offsets = np.arange(branching) - (branching - 1) / 2.0
    return [max(tau * rho**o, TAU_FLOOR) for o in offsets]


@dataclass
class Candidate:
    id: int
    tau: float
    chain: Chain
    abv: AbvState
    lineage: list = field(default_factory=list)
    history: list = field(default_factory=list)

    @property
    def params(self) -> ModelParams:
        return self.chain.params


@dataclass(frozen=True)
class TuningRecord:
    block: int
    candidate: int
    tau: float
    abv: float
    selected: bool
    best: bool


@dataclass
class Beam:
    candidates: list
    width: int = 2
    branching: int = 3
    rho: float = math.sqrt(10.0)
    blocks_done: int = 0
    next_id: int = 0
    log: list = field(default_factory=list)
    tau_path: list = field(default_factory=list)

    @classmethod
    def start(cls, chain: Chain, taus: Sequence[float], width: int, branching: int, rho: float,
              omega: float, q: int) -> "Beam":
        if width < 1 or branching < 1:
            raise ConfigError("beam width and branching factor must be >= 1")
        if len(taus) != width * branching:
            raise ConfigError(f"need W*B = {width * branching} initial taus, got {len(taus)}")
        if any(not t > 0 for t in taus):
            raise ConfigError("initial smoothing parameters must be positive")
        cands = [Candidate(i, float(t), chain.copy(), AbvState(omega, q)) for i, t in enumerate(taus)]
        return cls(cands, width, branching, rho, 0, len(cands))

    @property
    def size(self) -> int:
        return len(self.candidates)


def _rank_key(c: Candidate, index: int):
    return (c.abv.abv, c.tau, index)


def best_candidate(beam: Beam) -> Candidate:
    """Lowest running score; ties go to the smaller ``tau``, then the lower index."""
    if not beam.candidates or any(c.abv.blocks_seen == 0 for c in beam.candidates):
        raise StateError("no block has been completed yet")
    order = sorted(range(beam.size), key=lambda i: _rank_key(beam.candidates[i], i))
    return beam.candidates[order[0]]


Stepper = Callable[[Chain, Batch, float, int], tuple[Chain, StepResult]]


def _run_candidate(cand: Candidate, block, step: Stepper) -> None:
    for k, batch in block:
        chain, res = step(cand.chain, batch, cand.tau, k)
        cand.chain = chain
        cand.abv = accumulate(cand.abv, res.v_score)
        p = chain.params
        cand.history.append(
            StepRecord(k, res.grad_norm, res.v_score, cand.tau, tuple(p.lam.tolist()), p.sigma2, res.smoothed_norm)
        )


def update_stage(beam: Beam, block, step: Stepper, workers: int | None = None) -> None:
    """Advance every chain through ``block`` (a sequence of ``(k, batch)``) with ``tau`` fixed."""
    workers = workers or int(os.environ.get("OFPCA_WORKERS", "1"))
    if workers > 1 and beam.size > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda c: _run_candidate(c, block, step), beam.candidates))
    else:
        for cand in beam.candidates:
            _run_candidate(cand, block, step)


def select_and_expand(beam: Beam, final: bool = False) -> Beam:
    """Keep the ``W`` best chains and branch each into ``B`` children.

    With ``final`` set the beam is only scored and logged, not expanded.
    """
    beam.blocks_done += 1
    order = sorted(range(beam.size), key=lambda i: _rank_key(beam.candidates[i], i))
    keep = order[: beam.width]
    for i, c in enumerate(beam.candidates):
        beam.log.append(TuningRecord(beam.blocks_done, c.id, c.tau, c.abv.abv, i in keep, i == order[0]))
    best = beam.candidates[order[0]]
    for c in beam.candidates:
        c.lineage.append((beam.blocks_done, c.tau))
    beam.tau_path.append(best.tau)
    if final:
        return beam
    children = []
    for i in keep:
        parent = beam.candidates[i]
        for tau in expand_tau(parent.tau, beam.branching, beam.rho):
            # chains are never modified in place, so children may share one
            children.append(
                Candidate(beam.next_id, tau, parent.chain, parent.abv, list(parent.lineage), list(parent.history))
            )
            beam.next_id += 1
    beam.candidates = children
    return beam


def beam_round(beam: Beam, block, step: Stepper, workers: int | None = None) -> Beam:
    """Update, selection and exploration over one block of mini-batches."""
    update_stage(beam, block, step, workers)
    return select_and_expand(beam)
