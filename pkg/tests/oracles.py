"""Independent oracles used to certify expected values in the tests.

These deliberately avoid the code paths they check: derivatives come from
central finite differences, calibration is verified by bisection on the
diagonal, and global MPCC optima come from enumerating all 2^m branch NLPs
from several starts.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from mpcckit.expr import VectorFunction, evaluate, jacobian
from mpcckit.model import MpccProblem, Point, feasibility_residual
from mpcckit.nlp import SmoothNlp, SolverOptions, solve_nlp
from mpcckit.relaxations import phi
from mpcckit.stationarity import build_branch_nlp


def fd_jacobian(fun: VectorFunction, x, p=None, rel_step: float = 1e-6) -> np.ndarray:
    """Central finite differences with step 1e-6 * (1 + |x_j|)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    cols = []
    for j in range(n):
        h = rel_step * (1.0 + abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        cols.append((evaluate(fun, xp, p) - evaluate(fun, xm, p)) / (2.0 * h))
    return np.array(cols).T


def fd_hessian_of_gradient(objective: VectorFunction, constraints, x, p,
                           sigma_obj, lam, rel_step: float = 1e-6) -> np.ndarray:
    """Finite differences of the analytic gradient of the weighted sum."""
    x = np.asarray(x, dtype=float)
    n = x.size

    def grad(xx):
        g = sigma_obj * jacobian(objective, xx, p)[0]
        if constraints is not None and constraints.n_out:
            g = g + np.asarray(lam) @ jacobian(constraints, xx, p)
        return g

    cols = []
    for j in range(n):
        h = rel_step * (1.0 + abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        cols.append((grad(xp) - grad(xm)) / (2.0 * h))
    H = np.array(cols).T
    return 0.5 * (H + H.T)


def bisect_diagonal_zero(kind, sigma_hat: float, lo: float = 1e-12,
                         hi: float = 1e6, tol: float = 1e-12) -> float:
    """The positive diagonal root t of phi(t, t, sigma_hat) = 0 by plain
    bisection; phi is positive for large t and negative near zero for every
    calibrated family."""
    flo = phi(kind, lo, lo, sigma_hat)
    fhi = phi(kind, hi, hi, sigma_hat)
    if flo == 0.0:
        return lo
    if flo * fhi > 0:
        raise ValueError(f"no sign change on the diagonal for {kind.name}")
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        fm = phi(kind, mid, mid, sigma_hat)
        if fm == 0.0 or (hi - lo) < tol:
            return mid
        if fm * flo < 0:
            hi = mid
        else:
            lo, flo = mid, fm
    return 0.5 * (lo + hi)


def _branch_starts(prob: MpccProblem, base_start: np.ndarray, rng) -> list:
    lo = np.where(np.isfinite(prob.lbw), prob.lbw, -1.0)
    hi = np.where(np.isfinite(prob.ubw), prob.ubw, 2.0)
    starts = [base_start, 0.5 * (lo + hi)]
    for _ in range(2):
        starts.append(lo + (hi - lo) * rng.random(prob.n))
    return starts


def branch_enumeration_minimum(prob: MpccProblem, base_start, rng,
                               feas_tol: float = 1e-6):
    """Global minimum by brute force: solve all 2^m branch NLPs (one side of
    each pair pinned to zero) from several starts.  None when every branch
    is infeasible."""
    m = prob.m
    base_start = np.asarray(base_start, dtype=float)
    best = None
    opts = SolverOptions(max_iter=600)
    for bits in itertools.product((0, 1), repeat=m):
        eq_G = [i for i in range(m) if bits[i] == 0]
        eq_H = [i for i in range(m) if bits[i] == 1]
        spec = build_branch_nlp(prob, eq_G, eq_H)
        for x0 in _branch_starts(prob, base_start, rng):
            sol = solve_nlp(spec.nlp, x0, opts)
            if not sol.success:
                continue
            pt = Point(sol.x)
            if feasibility_residual(prob, pt) > feas_tol:
                continue
            if best is None or sol.objective < best[0]:
                best = (sol.objective, pt)
    return best


def sign_euler_minimum(x_init: float, h: float, n_steps: int = 3):
    """Dedicated oracle for the implicit-Euler sign-system instance: pick
    the per-step mode (positive drift, negative drift, or sliding at zero)
    out of 3^k closed-form candidates and keep the feasible ones."""
    best = None
    for modes in itertools.product((1, -1, 0), repeat=n_steps):
        x = x_init
        traj = []
        feasible = True
        for mode in modes:
            if mode == 1:
                x_next = x - h
                alpha = 1.0
                if x_next < 0:
                    feasible = False
                    break
            elif mode == -1:
                x_next = x + h
                alpha = 0.0
                if x_next > 0:
                    feasible = False
                    break
            else:
                x_next = 0.0
                alpha = 0.5 * (1.0 + x / h)
                if not 0.0 <= alpha <= 1.0:
                    feasible = False
                    break
            traj.append((x_next, alpha))
            x = x_next
        if not feasible:
            continue
        obj = traj[-1][0] ** 2
        if best is None or obj < best[0]:
            best = (obj, traj)
    return best


def sample_cone_directions(prob: MpccProblem, pt: Point, sets, n_samples,
                           rng, active_tol: float = 1e-6):
    """Random directions inside the MPCC linearized cone at ``pt``, drawn
    per complementarity branch through the equality nullspace with
    rejection on the inequality rows.  Returns an (k, n) array."""
    import scipy.linalg

    w = pt.w
    n = prob.n
    grad_rows_eq = []
    grad_rows_in = []
    if prob.g.n_out:
        gval = evaluate(prob.g, w, prob.p)
        Jg = jacobian(prob.g, w, prob.p)
        for i in range(prob.g.n_out):
            eq = prob.lbg[i] == prob.ubg[i]
            at_lo = np.isfinite(prob.lbg[i]) and gval[i] - prob.lbg[i] <= active_tol
            at_hi = np.isfinite(prob.ubg[i]) and prob.ubg[i] - gval[i] <= active_tol
            if eq or (at_lo and at_hi):
                grad_rows_eq.append(Jg[i])
            elif at_lo:
                grad_rows_in.append(Jg[i])
            elif at_hi:
                grad_rows_in.append(-Jg[i])
    for j in range(n):
        if np.isfinite(prob.lbw[j]) and w[j] - prob.lbw[j] <= active_tol:
            e = np.zeros(n)
            e[j] = 1.0
            grad_rows_in.append(e)
        if np.isfinite(prob.ubw[j]) and prob.ubw[j] - w[j] <= active_tol:
            e = np.zeros(n)
            e[j] = -1.0
            grad_rows_in.append(e)
    JG = jacobian(prob.G, w, prob.p) if prob.m else np.zeros((0, n))
    JH = jacobian(prob.H, w, prob.p) if prob.m else np.zeros((0, n))
    for i in sets.i_zero_plus:
        grad_rows_eq.append(JG[i])
    for i in sets.i_plus_zero:
        grad_rows_eq.append(JH[i])

    zz = list(sets.i_zero_zero)
    branches = list(itertools.product((0, 1), repeat=len(zz)))
    per_branch = max(1, n_samples // max(1, len(branches)))
    out = []
    for bits in branches:
        eq = list(grad_rows_eq)
        ineq = list(grad_rows_in)
        for b, i in zip(bits, zz):
            if b == 0:
                eq.append(JG[i])
                ineq.append(JH[i])
            else:
                eq.append(JH[i])
                ineq.append(JG[i])
        A_eq = np.array(eq) if eq else np.zeros((0, n))
        N = scipy.linalg.null_space(A_eq) if A_eq.size else np.eye(n)
        if N.size == 0:
            continue
        A_in = np.array(ineq) if ineq else np.zeros((0, n))
        Y = rng.standard_normal((per_branch, N.shape[1]))
        D = Y @ N.T
        if A_in.size:
            keep = np.all(D @ A_in.T >= -1e-12, axis=1)
            D = D[keep]
        norms = np.linalg.norm(D, axis=1)
        D = D[norms > 1e-12]
        if D.size:
            out.append(D)
    if not out:
        return np.zeros((0, n))
    return np.vstack(out)
