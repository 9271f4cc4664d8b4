"""Globalized Newton solver with Picard fallback and delta-continuation.

Residual systems come from the weak forms of the monotone p-Laplacian part
plus the potential perturbation. Accepted steps always decrease ||R||; after
``picard_after`` consecutive rejected Newton trials the step direction switches
to the frozen-weight (Picard) operator for that iteration.
"""
import logging
import math
import warnings
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from twoscale.src.config import (ARMIJO, BACKTRACK, DELTA_SCHEDULE, FD_STEP, LINEAR_TOL, MAX_DELTA_INSERTS,
                                 MAX_ITERATIONS, MIN_STEP, PICARD_AFTER, RESIDUAL_TOL)
from twoscale.src.errors import ContinuationExhausted, SingularJacobianError

logger = logging.getLogger(__name__)


class SolverConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    residual_tol: float = RESIDUAL_TOL
    max_iterations: int = MAX_ITERATIONS
    backtrack: float = BACKTRACK
    min_step: float = MIN_STEP
    picard_after: int = PICARD_AFTER
    delta_schedule: Tuple[float, ...] = DELTA_SCHEDULE
    max_delta_inserts: int = MAX_DELTA_INSERTS
    linear_tol: float = LINEAR_TOL

    @field_validator('residual_tol', 'linear_tol', 'min_step')
    @classmethod
    def _positive(cls, v, info):
        if not v > 0:
            raise ValueError(f"{info.field_name} must be > 0")
        return v

    @field_validator('max_iterations', 'picard_after')
    @classmethod
    def _at_least_one(cls, v, info):
        if v < 1:
            raise ValueError(f"{info.field_name} must be >= 1")
        return v

    @field_validator('backtrack')
    @classmethod
    def _fraction(cls, v):
        if not 0 < v < 1:
            raise ValueError("backtrack must lie in (0, 1)")
        return v

    @model_validator(mode='after')
    def _schedule(self):
        sched = self.delta_schedule
        if len(sched) == 0:
            raise ValueError("delta_schedule must not be empty")
        if any(d < 0 for d in sched):
            raise ValueError("delta_schedule entries must be >= 0")
        if any(b >= a for a, b in zip(sched, sched[1:])):
            raise ValueError("delta_schedule must be strictly decreasing")
        return self

    @property
    def target_delta(self) -> float:
        return self.delta_schedule[-1]

    def single_stage(self, delta: Optional[float] = None) -> "SolverConfig":
        return self.model_copy(update={'delta_schedule': (self.target_delta if delta is None else delta,)})


class StageStats(BaseModel):
    delta: float
    iterations: int
    residual: float
    converged: bool


class SolveStats(BaseModel):
    iterations: int = 0
    initial_residual: float = float('nan')
    residual: float = float('nan')
    damping_events: int = 0
    picard_steps: int = 0
    converged: bool = False
    stages: List[StageStats] = Field(default_factory=list)
    history: List[float] = Field(default_factory=list)

    def absorb(self, other: "SolveStats", delta: float):
        self.iterations += other.iterations
        self.damping_events += other.damping_events
        self.picard_steps += other.picard_steps
        if math.isnan(self.initial_residual):
            self.initial_residual = other.initial_residual
        self.residual = other.residual
        self.converged = other.converged
        self.history.extend(other.history)
        self.stages.append(StageStats(delta=delta, iterations=other.iterations,
                                      residual=other.residual, converged=other.converged))


def linear_solve(J, rhs: np.ndarray, linear_tol: float = LINEAR_TOL) -> np.ndarray:
    """Direct solve; raises SingularJacobianError on singular or inaccurate systems."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter('error', MatrixRankWarning)
            if sp.issparse(J):
                x = spsolve(sp.csc_matrix(J), rhs)
            else:
                x = np.linalg.solve(np.asarray(J), rhs)
    except (MatrixRankWarning, np.linalg.LinAlgError, RuntimeError) as exc:
        raise SingularJacobianError(f"Singular Jacobian: {exc}") from exc
    x = np.atleast_1d(x)
    if not np.all(np.isfinite(x)):
        raise SingularJacobianError("Singular Jacobian: non-finite step")
    defect = np.linalg.norm(J @ x - rhs)
    scale = np.linalg.norm(rhs) + abs(J).max() * np.linalg.norm(x)
    if defect > linear_tol * max(scale, 1e-300):
        raise SingularJacobianError(f"Singular Jacobian: linear defect {defect:.2e}")
    return x


def _line_search(residual, U, d, r0, cfg: SolverConfig, max_trials: Optional[int], stats: SolveStats):
    """Backtracking on ||R||; None means try until the step drops below min_step."""
    if max_trials is None:
        max_trials = int(math.log(cfg.min_step) / math.log(cfg.backtrack)) + 1
    alpha = 1.0
    for trial in range(max_trials):
        U_try = U + alpha * d
        R_try = residual(U_try)
        r_try = float(np.linalg.norm(R_try))
        if np.isfinite(r_try) and (r_try <= (1.0 - ARMIJO * alpha) * r0 or r_try <= cfg.residual_tol):
            return U_try, R_try, r_try
        stats.damping_events += 1
        alpha *= cfg.backtrack
        if alpha < cfg.min_step:
            break
    return None


def solve_residual(residual: Callable[[np.ndarray], np.ndarray], jacobian: Callable, init: np.ndarray,
                   config: Optional[SolverConfig] = None, picard: Optional[Callable] = None,
                   tag: str = "NEWTON") -> Tuple[np.ndarray, SolveStats]:
    """Drive ||R(U)|| below ``config.residual_tol``.

    Returns the last accepted iterate and stats; ``stats.converged`` is False
    when the iteration budget runs out or no decreasing step exists. A singular
    Jacobian raises SingularJacobianError carrying the current iterate.
    """
    cfg = config or SolverConfig()
    stats = SolveStats()
    U = np.array(init, dtype=float, copy=True)
    R = residual(U)
    r = float(np.linalg.norm(R))
    stats.initial_residual = r
    stats.history.append(r)

    for it in range(cfg.max_iterations):
        if r <= cfg.residual_tol:
            stats.converged = True
            break
        try:
            d = linear_solve(jacobian(U), -R, cfg.linear_tol)
        except SingularJacobianError as exc:
            exc.stats, exc.best = stats, U
            raise
        step = _line_search(residual, U, d, r, cfg, cfg.picard_after, stats)
        if step is None:
            K = picard(U) if picard is not None else jacobian(U)
            try:
                d = linear_solve(K, -R, cfg.linear_tol)
            except SingularJacobianError as exc:
                exc.stats, exc.best = stats, U
                raise
            step = _line_search(residual, U, d, r, cfg, None, stats)
            stats.picard_steps += 1
            if step is None:
                logger.warning("[%s] stagnated at iteration %d, ||R||=%.3e", tag, it, r)
                break
        U, R, r = step
        stats.iterations += 1
        stats.history.append(r)
        logger.debug("[%s] it=%d ||R||=%.3e", tag, stats.iterations, r)
    else:
        stats.converged = r <= cfg.residual_tol

    stats.residual = r
    return U, stats


def continuation_solve(build: Callable[[float], tuple], init: np.ndarray, config: Optional[SolverConfig] = None,
                       schedule: Optional[Sequence[float]] = None,
                       tag: str = "NEWTON") -> Tuple[np.ndarray, SolveStats]:
    """Solve along a decreasing delta schedule, warm-starting each stage.

    ``build(delta)`` returns (residual, jacobian, picard). A stage that hits a
    singular Jacobian or stalls is not accepted: it is retried from the last
    good iterate after a bridge stage at the geometric mean of the last good
    delta and the failing one (ten times the failing delta before any stage
    has converged). At most ``max_delta_inserts`` bridges are spent per
    scheduled stage.
    """
    cfg = config or SolverConfig()
    pending = [(d, False) for d in (schedule if schedule is not None else cfg.delta_schedule)]
    total = SolveStats()
    U = np.array(init, dtype=float, copy=True)
    last_good = None
    inserts = 0

    while pending:
        delta, bridged = pending[0]
        residual, jacobian, picard = build(delta)
        try:
            U_new, stats = solve_residual(residual, jacobian, U, cfg, picard, tag=tag)
            failure = None if stats.converged else f"stalled at ||R||={stats.residual:.3e}"
        except SingularJacobianError as exc:
            stats, failure = None, exc
        if failure is not None:
            if inserts >= cfg.max_delta_inserts:
                if stats is None:
                    raise ContinuationExhausted(f"[{tag}] continuation exhausted at delta={delta:.1e}: {failure}",
                                                stats=total, best=U) from failure
                logger.warning("[%s] continuation exhausted at delta=%.1e: %s", tag, delta, failure)
                total.absorb(stats, delta)
                return U_new, total
            inserts += 1
            bridge = 10.0 * delta if last_good is None else math.sqrt(last_good * delta)
            if delta == 0.0 and last_good is not None:
                bridge = 0.5 * last_good
            logger.info("[%s] delta=%.1e failed (%s), inserting delta=%.1e", tag, delta, failure, bridge)
            pending.insert(0, (bridge, True))
            continue
        total.absorb(stats, delta)
        U = U_new
        last_good = delta
        pending.pop(0)
        if not bridged:
            inserts = 0
    total.converged = bool(total.stages) and total.stages[-1].converged
    return U, total


def check_jacobian(residual: Callable, jacobian: Callable, U: np.ndarray, h: float = FD_STEP) -> float:
    """Max entrywise |FD - J| over max |J| with central differences of step h."""
    U = np.asarray(U, dtype=float)
    J = jacobian(U)
    J = J.toarray() if sp.issparse(J) else np.atleast_2d(np.asarray(J, dtype=float))
    fd = np.zeros_like(J)
    for j in range(len(U)):
        e = np.zeros_like(U)
        e[j] = h
        fd[:, j] = (np.atleast_1d(residual(U + e)) - np.atleast_1d(residual(U - e))) / (2.0 * h)
    scale = max(float(np.max(np.abs(J))), 1e-300)
    return float(np.max(np.abs(fd - J)) / scale)
