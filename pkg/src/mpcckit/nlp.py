"""Dense primal-dual interior-point solver for smooth NLPs and LPs.

Solves

    min  f(x)   s.t.  lbc <= c(x) <= ubc,   lbx <= x <= ubx

with a line-search primal-dual interior-point method: monotone
Fiacco-McCormick barrier reduction, fraction-to-the-boundary rule
(tau = 0.99), an l1-penalty merit line search, and inertia correction by
multiples of the identity on the (1,1) block of the dense symmetric
indefinite KKT system.  Bounds are enforced exactly (no bound relaxation).

Inequality rows get an internal slack with box bounds, so the working
problem is equality-constrained with bound constraints only.  One solver
instance is created per solve and instances share nothing, so many solves
may run concurrently.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg

from .expr import (EvalDomainError, VectorFunction, evaluate, hessian_lagrangian,
                   jacobian)

__all__ = [
    "SmoothNlp",
    "SolverOptions",
    "KktSolution",
    "solve_nlp",
    "solve_lp",
    "OPTIMAL",
    "ACCEPTABLE",
    "INFEASIBLE",
    "MAX_ITER",
    "TIME_OUT",
    "STEP_FAILURE",
]

OPTIMAL = "OPTIMAL"
ACCEPTABLE = "ACCEPTABLE"
INFEASIBLE = "INFEASIBLE"
MAX_ITER = "MAX_ITER"
TIME_OUT = "TIME_OUT"
STEP_FAILURE = "STEP_FAILURE"


@dataclass(frozen=True)
class SmoothNlp:
    """A smooth NLP with two-sided constraint and box bounds."""

    objective: VectorFunction
    constraints: VectorFunction
    lbc: np.ndarray
    ubc: np.ndarray
    lbx: np.ndarray
    ubx: np.ndarray
    p: np.ndarray = field(default_factory=lambda: np.zeros(0))
    name: str = "nlp"

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).ravel())
        object.__setattr__(self, "lbc", np.asarray(self.lbc, dtype=float).ravel())
        object.__setattr__(self, "ubc", np.asarray(self.ubc, dtype=float).ravel())
        object.__setattr__(self, "lbx", np.asarray(self.lbx, dtype=float).ravel())
        object.__setattr__(self, "ubx", np.asarray(self.ubx, dtype=float).ravel())
        if self.objective.n_out != 1:
            raise ValueError("objective must have exactly one output")
        n = self.objective.n_vars
        if self.constraints.n_vars != n:
            raise ValueError("objective and constraints disagree on variable count")
        if self.lbc.size != self.constraints.n_out or self.ubc.size != self.constraints.n_out:
            raise ValueError("constraint bound length mismatch")
        if self.lbx.size != n or self.ubx.size != n:
            raise ValueError("box bound length mismatch")
        if np.any(self.lbc > self.ubc) or np.any(self.lbx > self.ubx):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def n(self) -> int:
        return self.objective.n_vars

    @property
    def n_c(self) -> int:
        return self.constraints.n_out


@dataclass
class SolverOptions:
    tol: float = 1e-8
    acceptable_tol: float = 1e-6
    max_iter: int = 3000
    max_wall_time: float = math.inf
    mu0: float = 1e-1
    tau: float = 0.99           # fraction-to-the-boundary
    kappa_mu: float = 0.2       # linear barrier decrease factor
    theta_mu: float = 1.5       # superlinear barrier decrease exponent
    kappa_eps: float = 10.0     # inner loop: stop when E_mu <= kappa_eps * mu
    bound_push: float = 1e-2    # relative initial push off the bounds
    trace: Optional[list] = None  # if a list, primal iterates are appended


@dataclass
class KktSolution:
    """Solution record.  ``lam`` is the multiplier of each constraint row in
    the convention grad f - J^T lam - z_lower + z_upper = 0; on inequality
    rows it decomposes as lam = mu_lower - mu_upper with both sides >= 0.
    """

    x: np.ndarray
    lam: np.ndarray
    mu_lower: np.ndarray
    mu_upper: np.ndarray
    z_lower: np.ndarray
    z_upper: np.ndarray
    status: str
    kkt_residual: float
    iterations: int
    wall_time: float
    objective: float
    constraint_violation: float

    @property
    def success(self) -> bool:
        return self.status in (OPTIMAL, ACCEPTABLE)


# ---------------------------------------------------------------------------
# symmetric indefinite factorization helpers (Bunch-Kaufman via LAPACK)
# ---------------------------------------------------------------------------

def _ldl_factor(K: np.ndarray):
    lu, d, perm = scipy.linalg.ldl(K, lower=True)
    return lu, d, perm


def _ldl_inertia(d: np.ndarray, ztol: float = 0.0) -> tuple:
    """(n_pos, n_neg, n_zero) from the block-diagonal factor."""
    n = d.shape[0]
    pos = neg = zero = 0
    i = 0
    while i < n:
        if i + 1 < n and d[i + 1, i] != 0.0:
            # 2x2 pivot block: Bunch-Kaufman guarantees det < 0 in exact
            # arithmetic; count via the characteristic polynomial anyway.
            a, b, c = d[i, i], d[i + 1, i], d[i + 1, i + 1]
            det = a * c - b * b
            if det < 0.0:
                pos += 1
                neg += 1
            elif det > 0.0:
                if a + c > 0:
                    pos += 2
                else:
                    neg += 2
            else:
                zero += 2
            i += 2
        else:
            v = d[i, i]
            if v > ztol:
                pos += 1
            elif v < -ztol:
                neg += 1
            else:
                zero += 1
            i += 1
    return pos, neg, zero


def _ldl_solve(lu: np.ndarray, d: np.ndarray, perm: np.ndarray, b: np.ndarray) -> np.ndarray:
    L = lu[perm, :]
    y = scipy.linalg.solve_triangular(L, b[perm], lower=True, unit_diagonal=True)
    y = _block_diag_solve(d, y)
    u = scipy.linalg.solve_triangular(L.T, y, lower=False, unit_diagonal=True)
    out = np.empty_like(b)
    out[perm] = u
    return out


def _block_diag_solve(d: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = d.shape[0]
    x = np.empty_like(b)
    i = 0
    while i < n:
        if i + 1 < n and d[i + 1, i] != 0.0:
            a, bb, c = d[i, i], d[i + 1, i], d[i + 1, i + 1]
            det = a * c - bb * bb
            x[i] = (c * b[i] - bb * b[i + 1]) / det
            x[i + 1] = (-bb * b[i] + a * b[i + 1]) / det
            i += 2
        else:
            x[i] = b[i] / d[i, i]
            i += 1
    return x


# ---------------------------------------------------------------------------
# the solver
# ---------------------------------------------------------------------------

class _Working:
    """Internal equality-constrained form: variables z = (x, s) with box
    bounds; every original row becomes C_i(z) = 0."""

    def __init__(self, nlp: SmoothNlp):
        self.nlp = nlp
        n, n_c = nlp.n, nlp.n_c
        self.n, self.n_c = n, n_c
        eq = (nlp.lbc == nlp.ubc)
        self.eq_mask = eq
        self.in_rows = np.flatnonzero(~eq)
        self.slack_of_row = {int(r): k for k, r in enumerate(self.in_rows)}
        self.n_s = len(self.in_rows)
        self.nz = n + self.n_s

        lo = np.concatenate([nlp.lbx, nlp.lbc[self.in_rows]])
        hi = np.concatenate([nlp.ubx, nlp.ubc[self.in_rows]])
        # Fixed variables/slacks would break the log barrier; widen them and
        # pin the value with an extra equality row z_j = value.
        fixed = np.flatnonzero(lo == hi)
        self.fixed_idx = fixed
        self.fixed_val = lo[fixed].copy()
        lo = lo.copy()
        hi = hi.copy()
        lo[fixed] = -np.inf
        hi[fixed] = np.inf
        self.lo, self.hi = lo, hi
        self.has_lo = np.isfinite(lo)
        self.has_hi = np.isfinite(hi)
        self.n_C = n_c + len(fixed)

    def split(self, z):
        return z[: self.n], z[self.n:]

    def cons_x(self, x):
        if self.n_c == 0:
            return np.zeros(0)
        return evaluate(self.nlp.constraints, x, self.nlp.p)

    def C(self, z):
        x, s = self.split(z)
        cx = self.cons_x(x)
        out = np.empty(self.n_C)
        rhs = np.where(self.eq_mask, self.nlp.lbc, 0.0)
        out[: self.n_c] = cx - rhs
        for k, r in enumerate(self.in_rows):
            out[r] -= s[k]
        out[self.n_c:] = z[self.fixed_idx] - self.fixed_val
        return out

    def JC(self, x):
        J = np.zeros((self.n_C, self.nz))
        if self.n_c:
            J[: self.n_c, : self.n] = jacobian(self.nlp.constraints, x, self.nlp.p)
            for k, r in enumerate(self.in_rows):
                J[r, self.n + k] = -1.0
        for j, idx in enumerate(self.fixed_idx):
            J[self.n_c + j, idx] = 1.0
        return J

    def fval(self, x):
        return float(evaluate(self.nlp.objective, x, self.nlp.p)[0])

    def grad_f(self, z):
        x, _ = self.split(z)
        g = np.zeros(self.nz)
        g[: self.n] = jacobian(self.nlp.objective, x, self.nlp.p)[0]
        return g

    def hess(self, z, lam):
        x, _ = self.split(z)
        H = np.zeros((self.nz, self.nz))
        if self.n_c:
            Hx = hessian_lagrangian(self.nlp.objective, self.nlp.constraints,
                                    x, self.nlp.p, 1.0, -lam[: self.n_c])
        else:
            Hx = hessian_lagrangian(self.nlp.objective, None, x, self.nlp.p, 1.0, None)
        H[: self.n, : self.n] = Hx
        return H


def _push_inside(v, lo, hi, push):
    """Move points that sit on or outside a bound strictly inside it.
    Points already strictly interior (by a tiny floor) are left untouched,
    so warm starts that legitimately hug a bound are not destroyed."""
    v = v.copy()
    for j in range(v.size):
        l, h = lo[j], hi[j]
        if not np.isfinite(l) and not np.isfinite(h):
            continue
        if np.isfinite(l) and np.isfinite(h):
            pl = min(push * max(1.0, abs(l)), 0.5 * (h - l))
            ph = min(push * max(1.0, abs(h)), 0.5 * (h - l))
            fl = min(1e-10 * max(1.0, abs(l)), 0.25 * (h - l))
            fh = min(1e-10 * max(1.0, abs(h)), 0.25 * (h - l))
            if v[j] < l + fl:
                v[j] = l + pl
            elif v[j] > h - fh:
                v[j] = h - ph
        elif np.isfinite(l):
            if v[j] < l + 1e-10 * max(1.0, abs(l)):
                v[j] = l + push * max(1.0, abs(l))
        else:
            if v[j] > h - 1e-10 * max(1.0, abs(h)):
                v[j] = h - push * max(1.0, abs(h))
    return v


class _IpSolver:
    def __init__(self, w: _Working, opts: SolverOptions):
        self.w = w
        self.opts = opts
        self.t0 = time.perf_counter()
        self.delta_last = 0.0
        self.rho = 1.0  # l1 merit penalty weight
        self.n_eval_iter = 0

    # -- barrier machinery ------------------------------------------------
    def barrier_value(self, z, mu):
        w = self.w
        try:
            val = w.fval(z[: w.n])
        except EvalDomainError:
            return math.inf
        if not np.isfinite(val):
            return math.inf
        if mu > 0.0:
            dl = z[w.has_lo] - w.lo[w.has_lo]
            du = w.hi[w.has_hi] - z[w.has_hi]
            if np.any(dl <= 0.0) or np.any(du <= 0.0):
                return math.inf
            val -= mu * (np.sum(np.log(dl)) + np.sum(np.log(du)))
        return val

    def barrier_grad(self, z, grad_f, mu):
        w = self.w
        g = grad_f.copy()
        g[w.has_lo] -= mu / (z[w.has_lo] - w.lo[w.has_lo])
        g[w.has_hi] += mu / (w.hi[w.has_hi] - z[w.has_hi])
        return g

    def merit(self, z, mu):
        phi = self.barrier_value(z, mu)
        if not np.isfinite(phi):
            return math.inf
        try:
            C = self.w.C(z)
        except EvalDomainError:
            return math.inf
        return phi + self.rho * float(np.sum(np.abs(C)))

    # -- KKT residuals -----------------------------------------------------
    def residuals(self, z, lam, zl, zu, grad_f, J, C, mu):
        w = self.w
        r_d = grad_f - J.T @ lam - zl + zu
        comps = [np.abs(r_d).max() if r_d.size else 0.0,
                 np.abs(C).max() if C.size else 0.0]
        if w.has_lo.any():
            cl = (z[w.has_lo] - w.lo[w.has_lo]) * zl[w.has_lo] - mu
            comps.append(np.abs(cl).max())
        if w.has_hi.any():
            cu = (w.hi[w.has_hi] - z[w.has_hi]) * zu[w.has_hi] - mu
            comps.append(np.abs(cu).max())
        return max(comps)

    # -- one Newton step with inertia correction ---------------------------
    def kkt_step(self, z, lam, grad_f, J, C, H, Sigma, mu):
        w = self.w
        nz, nC = w.nz, w.n_C
        g_bar = self.barrier_grad(z, grad_f, mu)
        rhs = np.concatenate([-(g_bar - J.T @ lam), -C]) if nC else -(g_bar)
        delta_c = 0.0
        delta = 0.0
        trial = 0
        while True:
            K = np.zeros((nz + nC, nz + nC))
            K[:nz, :nz] = H
            K[np.arange(nz), np.arange(nz)] += Sigma + delta
            if nC:
                K[:nz, nz:] = J.T
                K[nz:, :nz] = J
                K[np.arange(nz, nz + nC), np.arange(nz, nz + nC)] = -delta_c
            try:
                lu, d, perm = _ldl_factor(K)
                pos, neg, zero = _ldl_inertia(d)
                ok = (pos == nz and neg == nC and zero == 0)
            except Exception:
                ok = False
            if ok:
                sol = _ldl_solve(lu, d, perm, rhs)
                if np.all(np.isfinite(sol)):
                    dz = sol[:nz]
                    dlam = -sol[nz:] if nC else np.zeros(0)
                    self.delta_last = delta
                    return dz, dlam, delta
            trial += 1
            if trial > 40:
                return None, None, delta
            if not ok and zero > 0 and nC:
                delta_c = 1e-8 * max(mu, 1e-12) ** 0.25 if delta_c == 0.0 else delta_c * 10.0
            if delta == 0.0:
                delta = 1e-4 if self.delta_last == 0.0 else max(1e-20, self.delta_last / 3.0)
            else:
                delta *= 8.0

    def fraction_to_boundary(self, z, dz):
        w, tau = self.w, self.opts.tau
        alpha = 1.0
        for mask, sgn, bound in ((w.has_lo, 1.0, w.lo), (w.has_hi, -1.0, w.hi)):
            idx = np.flatnonzero(mask)
            for j in idx:
                gap = sgn * (z[j] - bound[j])
                step = sgn * dz[j]
                if step < 0.0:
                    a = -tau * gap / step
                    if a < alpha:
                        alpha = a
        return alpha

    def dual_fraction(self, v, dv):
        tau = self.opts.tau
        neg = dv < 0.0
        if not np.any(neg):
            return 1.0
        return min(1.0, float(np.min(-tau * v[neg] / dv[neg])))


def _initial_duals(w: _Working, z, mu, zl0=None, zu0=None):
    zl = np.zeros(w.nz)
    zu = np.zeros(w.nz)
    zl[w.has_lo] = np.clip(mu / (z[w.has_lo] - w.lo[w.has_lo]), 1e-8, 1e8)
    zu[w.has_hi] = np.clip(mu / (w.hi[w.has_hi] - z[w.has_hi]), 1e-8, 1e8)
    if zl0 is not None and zl0.size == w.nz:
        zl = np.where(w.has_lo, np.clip(zl0, 1e-12, 1e12), 0.0)
    if zu0 is not None and zu0.size == w.nz:
        zu = np.where(w.has_hi, np.clip(zu0, 1e-12, 1e12), 0.0)
    return zl, zu


def solve_nlp(nlp: SmoothNlp, x0, opts: Optional[SolverOptions] = None,
              lam0=None, z_lower0=None, z_upper0=None) -> KktSolution:
    """Solve the NLP from ``x0`` (need not be feasible).

    Optional ``lam0`` / ``z_lower0`` / ``z_upper0`` warm-start the
    multipliers; the homotopy driver passes the previous stage's solution.
    Deterministic: identical inputs and options produce identical iterate
    sequences.
    """
    opts = opts or SolverOptions()
    w = _Working(nlp)
    t0 = time.perf_counter()

    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != nlp.n:
        raise ValueError(f"x0 has length {x0.size}, expected {nlp.n}")

    z = np.zeros(w.nz)
    z[: w.n] = x0
    try:
        c0 = w.cons_x(_push_inside(x0, w.lo[: w.n], w.hi[: w.n], opts.bound_push))
    except EvalDomainError:
        c0 = np.zeros(w.n_c)
    for k, r in enumerate(w.in_rows):
        z[w.n + k] = c0[r] if np.isfinite(c0[r]) else 0.0
    z = _push_inside(z, w.lo, w.hi, opts.bound_push)

    mu = opts.mu0
    lam = np.zeros(w.n_C)
    if lam0 is not None:
        lam0 = np.asarray(lam0, dtype=float).ravel()
        if lam0.size == w.n_c:
            lam[: w.n_c] = lam0
    zl_x = np.asarray(z_lower0, dtype=float).ravel() if z_lower0 is not None else None
    zu_x = np.asarray(z_upper0, dtype=float).ravel() if z_upper0 is not None else None
    zl0_full = zu0_full = None
    if zl_x is not None and zl_x.size == w.nz:
        zl0_full, zu0_full = zl_x, zu_x
    zl, zu = _initial_duals(w, z, mu, zl0_full, zu0_full)

    ip = _IpSolver(w, opts)
    best = None  # (E0, z, lam, zl, zu, iters)
    status = MAX_ITER
    it = 0
    restorations = 0
    stagnant = 0

    def snapshot(E0, iters):
        nonlocal best
        if best is None or E0 < best[0]:
            best = (E0, z.copy(), lam.copy(), zl.copy(), zu.copy(), iters)

    while it < opts.max_iter:
        if time.perf_counter() - t0 > opts.max_wall_time:
            status = TIME_OUT
            break
        try:
            x = z[: w.n]
            grad_f = w.grad_f(z)
            J = w.JC(x)
            C = w.C(z)
            H = w.hess(z, lam)
        except EvalDomainError:
            status = STEP_FAILURE
            break
        if opts.trace is not None:
            opts.trace.append(x.copy())

        E0 = ip.residuals(z, lam, zl, zu, grad_f, J, C, 0.0)
        snapshot(E0, it)
        if E0 <= opts.tol:
            status = OPTIMAL
            break
        E_mu = ip.residuals(z, lam, zl, zu, grad_f, J, C, mu)
        while E_mu <= opts.kappa_eps * mu and mu > opts.tol / 11.0:
            mu = max(opts.tol / 11.0, min(opts.kappa_mu * mu, mu ** opts.theta_mu))
            E_mu = ip.residuals(z, lam, zl, zu, grad_f, J, C, mu)

        Sigma = np.zeros(w.nz)
        Sigma[w.has_lo] += zl[w.has_lo] / (z[w.has_lo] - w.lo[w.has_lo])
        Sigma[w.has_hi] += zu[w.has_hi] / (w.hi[w.has_hi] - z[w.has_hi])

        dz, dlam, _ = ip.kkt_step(z, lam, grad_f, J, C, H, Sigma, mu)
        if dz is None:
            status = STEP_FAILURE
            break

        # bound dual steps from the eliminated rows
        dzl = np.zeros(w.nz)
        dzu = np.zeros(w.nz)
        dl = z[w.has_lo] - w.lo[w.has_lo]
        du = w.hi[w.has_hi] - z[w.has_hi]
        dzl[w.has_lo] = mu / dl - zl[w.has_lo] - zl[w.has_lo] / dl * dz[w.has_lo]
        dzu[w.has_hi] = mu / du - zu[w.has_hi] + zu[w.has_hi] / du * dz[w.has_hi]

        alpha_max = ip.fraction_to_boundary(z, dz)
        a_zl = ip.dual_fraction(zl[w.has_lo], dzl[w.has_lo]) if w.has_lo.any() else 1.0
        a_zu = ip.dual_fraction(zu[w.has_hi], dzu[w.has_hi]) if w.has_hi.any() else 1.0
        alpha_dual = min(a_zl, a_zu)

        # l1 merit line search; the penalty weight is recomputed from the
        # current direction (a ratcheted weight from an early infeasible
        # phase would cripple later steps with its second-order term)
        g_bar = ip.barrier_grad(z, grad_f, mu)
        dir_deriv = float(g_bar @ dz)
        c_l1 = float(np.sum(np.abs(C)))
        ip.rho = 1.0
        if c_l1 > 1e-12 and dir_deriv > 0.0:
            ip.rho = dir_deriv / (0.5 * c_l1) + 1.0
        D = dir_deriv - ip.rho * c_l1
        m0 = ip.merit(z, mu)
        alpha = alpha_max
        accepted = False
        while alpha > 1e-14:
            mt = ip.merit(z + alpha * dz, mu)
            if mt <= m0 + 1e-4 * alpha * min(D, 0.0) and np.isfinite(mt):
                accepted = True
                break
            alpha *= 0.5
        stalled = not accepted
        if accepted:
            step_size = alpha * float(np.abs(dz).max(initial=0.0))
            if step_size <= 1e-11 * (1.0 + float(np.abs(z).max(initial=0.0))):
                stagnant += 1
                # search direction has become too small to make progress
                stalled = stagnant >= 3
            else:
                stagnant = 0
        if stalled:
            # try feasibility restoration once before declaring step failure
            if restorations == 0 and C.size and np.abs(C).max() > 10.0 * opts.tol:
                restorations += 1
                z_rest, feas_ok, rest_stationary = _restore(w, z, opts)
                if rest_stationary:
                    status = INFEASIBLE
                    break
                if feas_ok:
                    z = _push_inside(z_rest, w.lo, w.hi, 1e-8)
                    zl, zu = _initial_duals(w, z, mu)
                    stagnant = 0
                    it += 1
                    continue
            mu_floor = opts.tol / 11.0
            if mu > mu_floor:
                # steps died with the barrier still high: the current barrier
                # problem is as solved as it will get, so move mu along
                mu = max(mu_floor, min(opts.kappa_mu * mu, mu ** opts.theta_mu))
                stagnant = 0
                it += 1
                continue
            status = STEP_FAILURE
            break
        z = z + alpha * dz
        lam = lam + alpha * dlam
        zl = zl + alpha_dual * dzl
        zu = zu + alpha_dual * dzu
        # keep bound duals within a multiplicative corridor of mu/slack
        dl = z[w.has_lo] - w.lo[w.has_lo]
        du = w.hi[w.has_hi] - z[w.has_hi]
        kap = 1e10
        zl[w.has_lo] = np.clip(zl[w.has_lo], mu / (kap * dl), kap * mu / dl)
        zu[w.has_hi] = np.clip(zu[w.has_hi], mu / (kap * du), kap * mu / du)
        it += 1

    else:
        status = MAX_ITER

    # final residual bookkeeping with fresh evaluations
    try:
        x = z[: w.n]
        grad_f = w.grad_f(z)
        J = w.JC(x)
        C = w.C(z)
        E0 = ip.residuals(z, lam, zl, zu, grad_f, J, C, 0.0)
        snapshot(E0, it)
    except EvalDomainError:
        pass

    E0b, zb, lamb, zlb, zub, _ = best if best is not None else (
        math.inf, z, lam, zl, zu, it)
    if status != OPTIMAL and status != INFEASIBLE and E0b <= opts.acceptable_tol:
        status = ACCEPTABLE
    if status in (OPTIMAL, ACCEPTABLE) or best is not None:
        z, lam, zl, zu = zb, lamb, zlb, zub
        E0 = E0b

    x = z[: w.n]
    try:
        fv = w.fval(x)
        Cw = w.C(z)
        viol = float(np.abs(Cw[: w.n_c]).max()) if w.n_c else 0.0
    except EvalDomainError:
        fv, viol = math.nan, math.inf
    viol = max(viol,
               float(np.max(nlp.lbx - x, initial=0.0)),
               float(np.max(x - nlp.ubx, initial=0.0)))

    lam_rows = lam[: w.n_c].copy()
    mu_lower = np.maximum(lam_rows, 0.0)
    mu_upper = np.maximum(-lam_rows, 0.0)
    for k, r in enumerate(w.in_rows):
        mu_lower[r] = zl[w.n + k]
        mu_upper[r] = zu[w.n + k]
        lam_rows[r] = zl[w.n + k] - zu[w.n + k]
    zl_x = zl[: w.n].copy()
    zu_x = zu[: w.n].copy()
    for j, idx in enumerate(w.fixed_idx):
        if idx < w.n:
            lam_fix = lam[w.n_c + j]
            zl_x[idx] = max(lam_fix, 0.0)
            zu_x[idx] = max(-lam_fix, 0.0)

    return KktSolution(
        x=x.copy(),
        lam=lam_rows,
        mu_lower=mu_lower,
        mu_upper=mu_upper,
        z_lower=zl_x,
        z_upper=zu_x,
        status=status,
        kkt_residual=float(E0) if np.isfinite(E0) else math.inf,
        iterations=it,
        wall_time=time.perf_counter() - t0,
        objective=fv,
        constraint_violation=viol,
    )


def _restore(w: _Working, z0, opts: SolverOptions):
    """Gauss-Newton feasibility restoration: minimize 0.5*||C(z)||^2 subject
    to the box bounds.  Returns (z, feasible, stationary_at_infeasible)."""
    z = _push_inside(z0.copy(), w.lo, w.hi, opts.bound_push)
    feas_tol = 1e-9
    for mu in (1e-2, 1e-4, 1e-6, 1e-8):
        for _ in range(60):
            try:
                C = w.C(z)
                J = w.JC(z[: w.n])
            except EvalDomainError:
                return z, False, False
            if np.abs(C).max() <= feas_tol:
                return z, True, False
            g = J.T @ C
            g[w.has_lo] -= mu / (z[w.has_lo] - w.lo[w.has_lo])
            g[w.has_hi] += mu / (w.hi[w.has_hi] - z[w.has_hi])
            B = J.T @ J
            Sigma = np.zeros(w.nz)
            Sigma[w.has_lo] += mu / (z[w.has_lo] - w.lo[w.has_lo]) ** 2
            Sigma[w.has_hi] += mu / (w.hi[w.has_hi] - z[w.has_hi]) ** 2
            B[np.arange(w.nz), np.arange(w.nz)] += Sigma + 1e-10
            try:
                dz = np.linalg.solve(B, -g)
            except np.linalg.LinAlgError:
                return z, False, False
            if np.abs(g).max() <= 1e-10 or np.abs(dz).max() <= 1e-14:
                break
            # fraction to boundary + backtracking on the penalized objective
            alpha = 1.0
            for mask, sgn, bound in ((w.has_lo, 1.0, w.lo), (w.has_hi, -1.0, w.hi)):
                idx = np.flatnonzero(mask)
                for j in idx:
                    step = sgn * dz[j]
                    if step < 0.0:
                        a = -0.99 * sgn * (z[j] - bound[j]) / step
                        alpha = min(alpha, a)

            def psi(zz):
                try:
                    Cv = w.C(zz)
                except EvalDomainError:
                    return math.inf
                val = 0.5 * float(Cv @ Cv)
                dl = zz[w.has_lo] - w.lo[w.has_lo]
                du = w.hi[w.has_hi] - zz[w.has_hi]
                if np.any(dl <= 0) or np.any(du <= 0):
                    return math.inf
                return val - mu * (np.sum(np.log(dl)) + np.sum(np.log(du)))

            p0 = psi(z)
            accepted = False
            while alpha > 1e-14:
                if psi(z + alpha * dz) <= p0 - 1e-12:
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                # Gauss-Newton can dead-end on nonconvex rows; fall back to
                # a steepest-descent step on the measure before giving up
                gnorm = float(np.abs(g).max())
                if gnorm > 0.0:
                    dz = -g / gnorm
                    alpha = 1.0
                    for mask, sgn, bound in ((w.has_lo, 1.0, w.lo),
                                             (w.has_hi, -1.0, w.hi)):
                        for j in np.flatnonzero(mask):
                            step = sgn * dz[j]
                            if step < 0.0:
                                alpha = min(alpha, -0.99 * sgn * (z[j] - bound[j]) / step)
                    while alpha > 1e-14:
                        if psi(z + alpha * dz) <= p0 - 1e-12:
                            accepted = True
                            break
                        alpha *= 0.5
                if not accepted:
                    break
            z = z + alpha * dz
    try:
        C = w.C(z)
    except EvalDomainError:
        return z, False, False
    if np.abs(C).max() <= 1e-7:
        return z, True, False
    # The schedule (Gauss-Newton plus the steepest-descent fallback) ran out
    # of progress with the violation still nonzero: the measure has locally
    # bottomed out, which is the working definition of an infeasible claim.
    return z, False, True


# ---------------------------------------------------------------------------
# LP path
# ---------------------------------------------------------------------------

def _affine_parts(fun: VectorFunction, p: np.ndarray):
    """Coefficients (A, b) with fun(x) = A x + b; validated by a Hessian
    probe so silently-nonlinear inputs are rejected."""
    n = fun.n_vars
    x0 = np.zeros(n)
    b = evaluate(fun, x0, p)
    A = jacobian(fun, x0, p)
    return A, b


def solve_lp(lp: SmoothNlp, opts: Optional[SolverOptions] = None) -> KktSolution:
    """Solve an LP (affine objective and constraints).  The feasible region
    is expected to be bounded by construction (trust-region rows/bounds).

    INFEASIBLE is a legal outcome and is consumed by the stationarity
    checks.  The returned vertex solution satisfies the constraints to
    simplex accuracy, which downstream witness validation relies on.
    """
    from scipy.optimize import linprog

    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    p = lp.p
    cA, cb = _affine_parts(lp.objective, p)
    c = cA[0]
    n = lp.n
    n_c = lp.n_c
    if n_c:
        A, b = _affine_parts(lp.constraints, p)
        h = hessian_lagrangian(lp.objective, lp.constraints, np.zeros(n), p,
                               1.0, np.ones(n_c))
    else:
        A = np.zeros((0, n))
        b = np.zeros(0)
        h = hessian_lagrangian(lp.objective, None, np.zeros(n), p, 1.0, None)
    if np.abs(h).max(initial=0.0) > 0.0:
        raise ValueError("solve_lp requires affine objective and constraints")

    eq = lp.lbc == lp.ubc
    A_eq = A[eq] if eq.any() else None
    b_eq = (lp.lbc[eq] - b[eq]) if eq.any() else None
    rows_ub = []
    rhs_ub = []
    tag = []  # (row, side) for dual recovery
    for i in np.flatnonzero(~eq):
        if np.isfinite(lp.ubc[i]):
            rows_ub.append(A[i])
            rhs_ub.append(lp.ubc[i] - b[i])
            tag.append((i, +1))
        if np.isfinite(lp.lbc[i]):
            rows_ub.append(-A[i])
            rhs_ub.append(b[i] - lp.lbc[i])
            tag.append((i, -1))
    A_ub = np.array(rows_ub) if rows_ub else None
    b_ub = np.array(rhs_ub) if rows_ub else None
    bounds = [(lp.lbx[j] if np.isfinite(lp.lbx[j]) else None,
               lp.ubx[j] if np.isfinite(lp.ubx[j]) else None) for j in range(n)]

    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=bounds, method="highs")
    wall = time.perf_counter() - t0

    lam = np.zeros(n_c)
    mu_lower = np.zeros(n_c)
    mu_upper = np.zeros(n_c)
    zl = np.zeros(n)
    zu = np.zeros(n)
    if res.status == 0:
        x = np.asarray(res.x, dtype=float)
        if eq.any():
            # highs marginal is d(obj)/d(rhs), which matches our lam directly
            lam[eq] = np.asarray(res.eqlin.marginals, dtype=float)
        if rows_ub:
            marg = -np.asarray(res.ineqlin.marginals, dtype=float)  # >= 0
            for (i, side), mval in zip(tag, marg):
                if side > 0:
                    mu_upper[i] += mval
                else:
                    mu_lower[i] += mval
            ineq = ~eq
            lam[ineq] = mu_lower[ineq] - mu_upper[ineq]
        zl = np.maximum(np.asarray(res.lower.marginals, dtype=float), 0.0)
        zu = np.maximum(-np.asarray(res.upper.marginals, dtype=float), 0.0)
        cx = A @ x + b if n_c else np.zeros(0)
        viol = max(
            float(np.max(lp.lbc - cx, initial=0.0)),
            float(np.max(cx - lp.ubc, initial=0.0)),
            float(np.max(lp.lbx - x, initial=0.0)),
            float(np.max(x - lp.ubx, initial=0.0)),
        )
        r_d = c - A.T @ lam - zl + zu if n_c else c - zl + zu
        kkt = max(float(np.abs(r_d).max(initial=0.0)), viol)
        status = OPTIMAL if kkt <= opts.acceptable_tol else ACCEPTABLE
        return KktSolution(x=x, lam=lam, mu_lower=mu_lower, mu_upper=mu_upper,
                           z_lower=zl, z_upper=zu, status=status,
                           kkt_residual=kkt, iterations=int(getattr(res, "nit", 0)),
                           wall_time=wall, objective=float(c @ x + cb[0]),
                           constraint_violation=viol)
    status = INFEASIBLE if res.status == 2 else STEP_FAILURE
    return KktSolution(x=np.zeros(n), lam=lam, mu_lower=mu_lower,
                       mu_upper=mu_upper, z_lower=zl, z_upper=zu,
                       status=status, kkt_residual=math.inf,
                       iterations=int(getattr(res, "nit", 0)), wall_time=wall,
                       objective=math.nan, constraint_violation=math.inf)
