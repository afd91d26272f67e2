"""Relaxation homotopy: solve a sequence of relaxed NLPs while driving the
relaxation parameter sigma to zero, with the complementarity-residual
stopping rule.

A stage succeeds when the NLP solve ends OPTIMAL or ACCEPTABLE (or
STEP_FAILURE at a primal-feasible point, which is accepted when the
complementarity tolerance is also met) and the freshly re-evaluated
complementarity residual is at or below ``comp_tol``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import nlp as nlpmod
from .model import MpccProblem, Point, comp_residual, feasibility_residual
from .nlp import KktSolution, SolverOptions, solve_nlp
from .relaxations import (RelaxationKind, RelaxedNlp, SteeringMode, STANDARD,
                          build_relaxed_nlp)

__all__ = [
    "HomotopyOptions",
    "HomotopyResult",
    "FailureReason",
    "update_sigma",
    "run_homotopy",
    "classify_failure",
    "SUCCESS", "NLP_FAILURE", "COMP_RESIDUAL_STALL", "TIME_OUT", "MAX_ITERS",
]

SUCCESS = "SUCCESS"
NLP_FAILURE = "NLP_FAILURE"
COMP_RESIDUAL_STALL = "COMP_RESIDUAL_STALL"
TIME_OUT = "TIME_OUT"
MAX_ITERS = "MAX_ITERS"

LINEAR = "LINEAR"
MIN_POWER = "MIN_POWER"


class FailureReason:
    SOLVED = "SOLVED"
    WORSE_THAN_2X_BEST = "WORSE_THAN_2X_BEST"
    NLP_INFEASIBLE = "NLP_INFEASIBLE"
    STEP_FAILURE_INFEASIBLE = "STEP_FAILURE_INFEASIBLE"
    COMP_RESIDUAL_STALL = "COMP_RESIDUAL_STALL"
    TIME_OUT = "TIME_OUT"
    MAX_ITERS = "MAX_ITERS"


@dataclass
class HomotopyOptions:
    sigma0: float = 1.0
    kappa: float = 0.1
    eta: float = 1.5               # only used by the min-rule
    update_rule: str = LINEAR      # LINEAR or MIN_POWER
    comp_tol: float = 1e-7
    sigma_min: float = 1e-13
    max_homotopy_iters: int = 14
    total_time_budget: float = 3600.0
    feas_tol: float = 1e-6
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if not 0.0 < self.kappa < 1.0:
            raise ValueError("kappa must lie in (0, 1)")
        if self.eta <= 1.0:
            raise ValueError("eta must exceed 1")
        if not 0.0 < self.sigma_min < self.sigma0:
            raise ValueError("need 0 < sigma_min < sigma0")
        if self.update_rule not in (LINEAR, MIN_POWER):
            raise ValueError(f"unknown update rule {self.update_rule!r}")


@dataclass
class HomotopyResult:
    point: Point
    kkt: Optional[KktSolution]
    sigma_trajectory: list
    stage_wall_times: list
    nlp_wall_time: float
    comp_residual: float
    feas_residual: float
    status: str
    objective: float
    n_stages: int
    last_nlp_status: Optional[str]

    @property
    def success(self) -> bool:
        return self.status == SUCCESS


def update_sigma(sigma: float, opts: HomotopyOptions) -> float:
    """Next homotopy parameter: kappa * sigma, or the min-rule
    min(kappa * sigma, sigma ** eta)."""
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    if opts.update_rule == MIN_POWER:
        return min(opts.kappa * sigma, sigma ** opts.eta)
    return opts.kappa * sigma


def _stage_accepts(sol: KktSolution, feas: float, opts: HomotopyOptions) -> bool:
    """Did the NLP stage end in a state we may read a candidate point from?"""
    if sol.status in (nlpmod.OPTIMAL, nlpmod.ACCEPTABLE):
        return True
    return sol.status == nlpmod.STEP_FAILURE and feas <= opts.feas_tol


def run_homotopy(prob: MpccProblem, kind: RelaxationKind,
                 mode: SteeringMode = STANDARD, x0: Optional[Point] = None,
                 opts: Optional[HomotopyOptions] = None) -> HomotopyResult:
    """Drive the relaxation of ``prob`` to the complementarity set.

    Standard mode re-solves with the calibrated sigma_hat after each sigma
    update; the penalized modes re-solve with penalty weight 1/sigma.  Each
    stage is warm-started from the previous stage's primal/dual solution.
    The loop exits at the first iterate meeting the success criterion or on
    budget exhaustion, and reports the best iterate seen (lowest
    complementarity residual among accepted NLP exits).
    """
    opts = opts or HomotopyOptions()
    if x0 is None:
        x0 = Point(np.zeros(prob.n))
    if x0.w.size != prob.n:
        raise ValueError(f"x0 has length {x0.w.size}, expected {prob.n}")

    relax = build_relaxed_nlp(prob, kind, mode)
    single_stage = (kind.name == "direct") or prob.m == 0

    t_start = time.perf_counter()
    sigma = opts.sigma0
    sigmas: list = []
    stage_times: list = []
    w_prev = x0.w.copy()
    lam_prev = None
    best = None   # (comp, point, kkt, feas, obj)
    status = None
    last_nlp_status = None

    k = 0
    while True:
        if k >= opts.max_homotopy_iters or sigma < opts.sigma_min:
            status = COMP_RESIDUAL_STALL if best is not None else NLP_FAILURE
            break
        elapsed = time.perf_counter() - t_start
        remaining = opts.total_time_budget - elapsed
        if remaining <= 0.0:
            status = TIME_OUT
            break

        params = relax.params_for(sigma)
        stage_nlp = replace(relax.nlp, p=params)
        z0 = relax.initial_point(w_prev, sigma, prob)
        sopts = replace(opts.solver, max_wall_time=min(opts.solver.max_wall_time,
                                                       remaining))
        sol = solve_nlp(stage_nlp, z0, sopts, lam0=lam_prev)
        sigmas.append(sigma)
        stage_times.append(sol.wall_time)
        last_nlp_status = sol.status

        pt = Point(sol.x[: prob.n])
        comp = comp_residual(prob, pt)
        feas = feasibility_residual(prob, pt)

        if _stage_accepts(sol, feas, opts):
            if best is None or comp < best[0]:
                best = (comp, pt, sol, feas, prob.objective(pt))
            if comp <= opts.comp_tol and feas <= opts.feas_tol:
                status = SUCCESS
                break
            w_prev = sol.x[: prob.n].copy()
            # blown-up duals (canceling near-parallel rows) poison the next
            # stage's warm start; fall back to a cold dual start instead
            lam_prev = sol.lam.copy()
            if not np.all(np.isfinite(lam_prev)) or np.abs(lam_prev).max(initial=0.0) > 1e6:
                lam_prev = None
        elif sol.status == nlpmod.TIME_OUT:
            status = TIME_OUT
            break
        elif sol.status == nlpmod.MAX_ITER:
            status = MAX_ITERS
            break
        else:  # INFEASIBLE or STEP_FAILURE at an infeasible point
            status = NLP_FAILURE
            break

        if single_stage:
            status = COMP_RESIDUAL_STALL
            break
        sigma = update_sigma(sigma, opts)
        k += 1

    if best is not None:
        comp, pt, sol, feas, obj = best
    else:
        pt, sol = Point(w_prev), None
        comp = comp_residual(prob, pt)
        feas = feasibility_residual(prob, pt)
        try:
            obj = prob.objective(pt)
        except Exception:
            obj = math.nan

    return HomotopyResult(
        point=pt,
        kkt=sol,
        sigma_trajectory=sigmas,
        stage_wall_times=stage_times,
        nlp_wall_time=float(sum(stage_times)),
        comp_residual=comp,
        feas_residual=feas,
        status=status,
        objective=obj,
        n_stages=len(sigmas),
        last_nlp_status=last_nlp_status,
    )


def classify_failure(result: HomotopyResult,
                     best_known_objective: Optional[float] = None) -> str:
    """Collapse a homotopy result into one failure-accounting bucket.

    The objective-quality check (reject solutions worse than twice the
    best-known objective) applies only when ``best_known_objective`` is
    given; callers skip it for simulation-type problems.  Because a ratio
    is meaningless at zero, the rule is f <= 2 * f_best for f_best > 0 and
    f <= f_best + max(|f_best|, 1e-6) otherwise.
    """
    if result.status == SUCCESS:
        if best_known_objective is not None:
            fb = best_known_objective
            if fb > 1e-6:
                ok = result.objective <= 2.0 * fb
            else:
                ok = result.objective <= fb + max(abs(fb), 1e-6)
            if not ok:
                return FailureReason.WORSE_THAN_2X_BEST
        return FailureReason.SOLVED
    if result.status == TIME_OUT:
        return FailureReason.TIME_OUT
    if result.status == MAX_ITERS:
        return FailureReason.MAX_ITERS
    if result.status == COMP_RESIDUAL_STALL:
        return FailureReason.COMP_RESIDUAL_STALL
    if result.last_nlp_status == nlpmod.INFEASIBLE:
        return FailureReason.NLP_INFEASIBLE
    return FailureReason.STEP_FAILURE_INFEASIBLE
