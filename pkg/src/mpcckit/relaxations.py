"""Relaxation functions for complementarity pairs and assembly of the
relaxed NLPs.

A relaxation replaces each pair constraint ``0 <= G_i  perp  H_i >= 0`` by
smoother rows parameterized by sigma.  Single-function kinds contribute one
row ``Phi(G_i, H_i, sigma_hat) <= 0`` (plus nonnegativity); Lin-Fukushima
and Kadrani contribute several rows and are rejected by the scalar ``phi``
API.

All kinds are brought to a common scale: ``calibrate_sigma`` maps the
homotopy parameter sigma to the kind-specific sigma_hat so that the zero
set of Phi crosses the diagonal a = b at sqrt(sigma), i.e. at the same
distance from the origin as the bilinear relaxation ``a b <= sigma``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .expr import (ExprNode, VectorFunction, abs_, as_expr, evaluate,
                   jacobian, max2, min2, num, par, powi, sqrt, var)
from .model import MpccProblem
from .nlp import SmoothNlp

__all__ = [
    "RelaxationKind",
    "SteeringMode",
    "RelaxedNlp",
    "KindNotScalarError",
    "phi",
    "phi_grad",
    "calibrate_sigma",
    "build_relaxed_nlp",
    "SCHOLTES", "FB", "NR", "CCK", "LIN_FUKUSHIMA", "SU_POLY", "SU_SINE",
    "KADRANI", "KANZOW_SCHWARTZ", "DIRECT", "ELL1_PENALTY",
    "STANDARD", "ELL_INF", "ELL_1",
    "KIND_NAMES", "MODE_NAMES", "SINGLE_PHI_KINDS",
]

KIND_NAMES = ("scholtes", "fb", "nr", "cck", "lf", "su-poly", "su-sine",
              "kadrani", "ks", "direct", "ell1-penalty")
MODE_NAMES = ("standard", "ell-inf", "ell-1")
SINGLE_PHI_KINDS = ("scholtes", "fb", "nr", "cck", "su-poly", "su-sine", "ks")


class KindNotScalarError(ValueError):
    """The kind is not a single scalar Phi (Lin-Fukushima and Kadrani are
    multi-constraint; direct / ell1-penalty have no Phi row at all)."""


@dataclass(frozen=True)
class RelaxationKind:
    """A relaxation family plus its tuning constants.  ``name`` is the
    lowercase identifier used verbatim in CLI flags and result records."""

    name: str
    cck_lambda: float = 0.5

    def __post_init__(self):
        if self.name not in KIND_NAMES:
            raise ValueError(f"unknown relaxation kind {self.name!r}; "
                             f"choose from {KIND_NAMES}")
        if not 0.0 < self.cck_lambda < 1.0:
            raise ValueError("cck_lambda must lie in (0, 1)")

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class SteeringMode:
    """How sigma is steered: externally scheduled rows (standard), one
    penalized slack (ell-inf), or one slack per pair (ell-1)."""

    name: str

    def __post_init__(self):
        if self.name not in MODE_NAMES:
            raise ValueError(f"unknown steering mode {self.name!r}; "
                             f"choose from {MODE_NAMES}")

    def __str__(self):
        return self.name


SCHOLTES = RelaxationKind("scholtes")
FB = RelaxationKind("fb")
NR = RelaxationKind("nr")
CCK = RelaxationKind("cck")
LIN_FUKUSHIMA = RelaxationKind("lf")
SU_POLY = RelaxationKind("su-poly")
SU_SINE = RelaxationKind("su-sine")
KADRANI = RelaxationKind("kadrani")
KANZOW_SCHWARTZ = RelaxationKind("ks")
DIRECT = RelaxationKind("direct")
ELL1_PENALTY = RelaxationKind("ell1-penalty")

STANDARD = SteeringMode("standard")
ELL_INF = SteeringMode("ell-inf")
ELL_1 = SteeringMode("ell-1")


# ---------------------------------------------------------------------------
# Phi as expression graphs (single source of truth for values, gradients,
# and the rows of the relaxed NLPs)
# ---------------------------------------------------------------------------

def _su_base(z: ExprNode, s: ExprNode, poly: bool) -> ExprNode:
    """abs(z) relaxed on [-s, s]: max(|z|, s * phi_b(z/s)).  The two branches
    are tangent at |z| = s, so the max2 kink never introduces a derivative
    jump.  Requires s > 0 on the evaluation path."""
    t = z / s
    if poly:
        phib = (num(-1.0) * powi(t, 4) + 6.0 * powi(t, 2) + 3.0) / 8.0
    else:
        phib = (2.0 / math.pi) * ExprNode("sin", ((math.pi / 2.0) * t + (3.0 * math.pi / 2.0),)) + 1.0
    return max2(abs_(z), s * phib)


def phi_expr(kind: RelaxationKind, a: ExprNode, b: ExprNode, s: ExprNode) -> ExprNode:
    """Graph of Phi(a, b, s) for a single-function kind; constraint
    semantics is Phi <= 0."""
    name = kind.name
    if name == "scholtes":
        return a * b - s
    if name == "fb":
        return a + b - sqrt(a * a + b * b + s * s)
    if name == "nr":
        return a + b - sqrt((a - b) * (a - b) + s * s)
    if name == "cck":
        lam = kind.cck_lambda
        return lam * (a + b - sqrt(a * a + b * b + s * s)) + (1.0 - lam) * (a * b - s)
    if name == "su-poly":
        return a + b - _su_base(a - b, s, poly=True)
    if name == "su-sine":
        return a + b - _su_base(a - b, s, poly=False)
    if name == "ks":
        y1, y2 = a - s, b - s
        # piecewise y1*y2 / -(y1^2+y2^2)/2 written as one C^1 expression
        return y1 * y2 - 0.5 * powi(min2(num(0.0), y1 + y2), 2)
    raise KindNotScalarError(
        f"kind {name!r} is not a single scalar relaxation function")


_PHI_FUN_CACHE: dict = {}


def _phi_fun(kind: RelaxationKind) -> VectorFunction:
    key = (kind.name, kind.cck_lambda)
    fun = _PHI_FUN_CACHE.get(key)
    if fun is None:
        fun = VectorFunction([phi_expr(kind, var(0), var(1), par(0))], 2, 1)
        _PHI_FUN_CACHE[key] = fun
    return fun


def _check_sigma_hat(kind: RelaxationKind, sigma_hat: float):
    # The smoothing variants (fb/nr/cck) are meant for sigma_hat > 0, but
    # their limits at 0 are well defined (sqrt kink convention), so only
    # negative values are rejected.
    if sigma_hat < 0.0:
        raise ValueError("sigma_hat must be nonnegative")


def phi(kind: RelaxationKind, a: float, b: float, sigma_hat: float) -> float:
    """Value of Phi(a, b, sigma_hat).  Raises KindNotScalarError for the
    multi-constraint kinds (lf, kadrani) and the non-Phi methods."""
    _check_sigma_hat(kind, sigma_hat)
    if kind.name in ("su-poly", "su-sine") and sigma_hat == 0.0:
        return a + b - abs(a - b)  # the unrelaxed corner
    fun = _phi_fun(kind)
    return float(evaluate(fun, [a, b], [sigma_hat])[0])


def phi_grad(kind: RelaxationKind, a: float, b: float, sigma_hat: float):
    """Exact partials (dPhi/da, dPhi/db).  At the Steffensen-Ulbrich
    interval boundaries and the Kanzow-Schwartz seam the one-sided
    derivatives agree by construction."""
    _check_sigma_hat(kind, sigma_hat)
    if kind.name in ("su-poly", "su-sine") and sigma_hat == 0.0:
        z = a - b
        sg = 0.0 if z == 0.0 else math.copysign(1.0, z)
        return (1.0 - sg, 1.0 + sg)
    fun = _phi_fun(kind)
    row = jacobian(fun, [a, b], [sigma_hat])[0]
    return (float(row[0]), float(row[1]))


def calibrate_sigma(kind: RelaxationKind, sigma: float) -> float:
    """sigma_hat such that the zero set of Phi(., ., sigma_hat) crosses the
    diagonal a = b at t = sqrt(sigma) (distance sqrt(2 sigma) from the
    origin, the bilinear reference).  Closed forms where available; the CCK
    blend has none and is root-found on the diagonal.

    For lf / kadrani the outer product surface calibrates to sqrt(sigma);
    direct and ell1-penalty carry no embedded sigma_hat and return sigma
    unchanged.
    """
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    t = math.sqrt(sigma)
    name = kind.name
    if name == "scholtes":
        return sigma
    if name == "fb":
        return math.sqrt(2.0 * sigma)
    if name == "nr":
        return 2.0 * t
    if name == "ks":
        return t
    if name in ("lf", "kadrani"):
        return t
    if name == "su-poly":
        # diagonal: 2t = sigma_hat * phi_b(0) = sigma_hat * 3/8
        return 16.0 * t / 3.0
    if name == "su-sine":
        return 2.0 * t / (1.0 - 2.0 / math.pi)
    if name == "cck":
        lam = kind.cck_lambda
        hi = 2.0 * lam * t + (1.0 - lam) * t * t + 1.0

        def on_diag(s):
            return phi(kind, t, t, s)

        lo = 1e-300
        if on_diag(hi) > 0.0:
            raise RuntimeError("cck calibration bracket not found")
        return float(brentq(on_diag, lo, hi, xtol=1e-15, rtol=8.9e-16))
    if name in ("direct", "ell1-penalty"):
        return sigma
    raise ValueError(f"unknown kind {name!r}")


# ---------------------------------------------------------------------------
# relaxed NLP assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RelaxedNlp:
    """A relaxed NLP plus the bookkeeping to drive it through a homotopy.

    The NLP's parameter vector is the MPCC parameters plus one trailing
    slot: sigma_hat for the standard mode, the penalty weight 1/sigma for
    the penalized modes (``direct`` has no slot).  ``row_pair_map`` maps
    every appended constraint row (indices relative to the end of the
    original g rows) to its (pair index, role).
    """

    nlp: SmoothNlp
    kind: RelaxationKind
    mode: SteeringMode
    n_orig: int
    m: int
    n_slack: int
    row_pair_map: tuple
    has_sigma_slot: bool
    sigma_is_weight: bool

    def params_for(self, sigma: float) -> np.ndarray:
        base = self.nlp.p[:-1] if self.has_sigma_slot else self.nlp.p
        if not self.has_sigma_slot:
            return base.copy()
        if self.sigma_is_weight:
            return np.append(base, 1.0 / sigma)
        return np.append(base, calibrate_sigma(self.kind, sigma))

    def initial_point(self, w0: np.ndarray, sigma: float, prob: MpccProblem) -> np.ndarray:
        """Primal start: the MPCC point plus slack values set to
        max(componentwise complementarity violation, sigma)."""
        w0 = np.asarray(w0, dtype=float).ravel()
        if self.n_slack == 0:
            return w0.copy()
        gv = evaluate(prob.G, w0, prob.p)
        hv = evaluate(prob.H, w0, prob.p)
        prods = gv * hv
        if self.mode.name == "ell-inf":
            s = np.array([max(float(np.max(prods, initial=0.0)), sigma)])
        else:
            s = np.maximum(prods, sigma)
        return np.concatenate([w0, s])


def _widen(fun: VectorFunction, n_vars: int, n_params: int) -> VectorFunction:
    return VectorFunction(fun.outputs, n_vars, n_params)


def build_relaxed_nlp(prob: MpccProblem, kind: RelaxationKind,
                      mode: SteeringMode = STANDARD) -> RelaxedNlp:
    """Assemble the relaxed NLP for (kind, mode).

    standard:  rows G >= 0, H >= 0, Phi(G_i, H_i, sigma_hat) <= 0
               (lf: the row pair G_i H_i <= sigma_hat^2 and
               (G_i + sigma_hat)(H_i + sigma_hat) >= sigma_hat^2;
               kadrani: G_i >= -sigma_hat, H_i >= -sigma_hat and
               (G_i - sigma_hat)(H_i - sigma_hat) <= 0, with no plain
               nonnegativity rows).
    ell-inf:   one slack s >= 0, objective + s / sigma, Phi rows with the
               slack substituted wherever sigma_hat appears.
    ell-1:     one slack per pair, objective + (sum s_i) / sigma.
    direct:    rows G >= 0, H >= 0, G_i H_i <= 0 verbatim (single solve).
    ell1-penalty: objective + G^T H / sigma with only the nonnegativity
               rows appended.
    """
    name = kind.name
    if name in ("lf", "kadrani") and mode.name != "standard":
        raise ValueError(f"kind {name!r} supports only the standard mode")
    if name in ("direct", "ell1-penalty") and mode.name != "standard":
        raise ValueError(f"kind {name!r} is mode-independent; use standard")

    m = prob.m
    n_p = prob.p.size
    inf = np.inf

    has_slot = name != "direct"
    is_weight = name == "ell1-penalty" or mode.name in ("ell-inf", "ell-1")
    n_params = n_p + (1 if has_slot else 0)
    slot = par(n_p) if has_slot else None

    n_slack = 0
    if mode.name == "ell-inf" and m > 0:
        n_slack = 1
    elif mode.name == "ell-1" and m > 0:
        n_slack = m
    n_vars = prob.n + n_slack

    Gi = list(prob.G.outputs)
    Hi = list(prob.H.outputs)
    obj = prob.f.outputs[0]
    rows: list = []
    lb: list = []
    ub: list = []
    pair_map: list = []

    def add_row(expr, lo, hi, pair, role):
        rows.append(expr)
        lb.append(lo)
        ub.append(hi)
        pair_map.append((pair, role))

    if m > 0:
        if mode.name in ("ell-inf", "ell-1"):
            slacks = [var(prob.n + (0 if mode.name == "ell-inf" else i))
                      for i in range(m)]
            weight = slot
            total = slacks[0] if mode.name == "ell-inf" else _sum_exprs(slacks)
            obj = obj + weight * total
            for i in range(m):
                add_row(Gi[i], 0.0, inf, i, "g_nonneg")
            for i in range(m):
                add_row(Hi[i], 0.0, inf, i, "h_nonneg")
            for i in range(m):
                add_row(phi_expr(kind, Gi[i], Hi[i], slacks[i]), -inf, 0.0, i, "phi")
        elif name == "lf":
            for i in range(m):
                add_row(Gi[i] * Hi[i] - slot * slot, -inf, 0.0, i, "lf_outer")
            for i in range(m):
                add_row((Gi[i] + slot) * (Hi[i] + slot) - slot * slot,
                        0.0, inf, i, "lf_inner")
        elif name == "kadrani":
            for i in range(m):
                add_row(Gi[i] + slot, 0.0, inf, i, "kad_g")
            for i in range(m):
                add_row(Hi[i] + slot, 0.0, inf, i, "kad_h")
            for i in range(m):
                add_row((Gi[i] - slot) * (Hi[i] - slot), -inf, 0.0, i, "kad_prod")
        elif name == "direct":
            for i in range(m):
                add_row(Gi[i], 0.0, inf, i, "g_nonneg")
            for i in range(m):
                add_row(Hi[i], 0.0, inf, i, "h_nonneg")
            for i in range(m):
                add_row(Gi[i] * Hi[i], -inf, 0.0, i, "direct_prod")
        elif name == "ell1-penalty":
            obj = obj + slot * _sum_exprs([Gi[i] * Hi[i] for i in range(m)])
            for i in range(m):
                add_row(Gi[i], 0.0, inf, i, "g_nonneg")
            for i in range(m):
                add_row(Hi[i], 0.0, inf, i, "h_nonneg")
        else:  # single-Phi kinds, standard steering
            for i in range(m):
                add_row(Gi[i], 0.0, inf, i, "g_nonneg")
            for i in range(m):
                add_row(Hi[i], 0.0, inf, i, "h_nonneg")
            for i in range(m):
                add_row(phi_expr(kind, Gi[i], Hi[i], slot), -inf, 0.0, i, "phi")

    all_rows = list(prob.g.outputs) + rows
    lbc = np.concatenate([prob.lbg, np.array(lb, dtype=float)]) if rows else prob.lbg.copy()
    ubc = np.concatenate([prob.ubg, np.array(ub, dtype=float)]) if rows else prob.ubg.copy()
    lbx = np.concatenate([prob.lbw, np.zeros(n_slack)])
    ubx = np.concatenate([prob.ubw, np.full(n_slack, inf)])

    p_full = np.append(prob.p, 0.0) if has_slot else prob.p.copy()
    nlp = SmoothNlp(
        objective=VectorFunction([obj], n_vars, n_params),
        constraints=VectorFunction(all_rows, n_vars, n_params),
        lbc=lbc, ubc=ubc, lbx=lbx, ubx=ubx, p=p_full,
        name=f"{prob.name}[{name}/{mode.name}]",
    )
    return RelaxedNlp(nlp=nlp, kind=kind, mode=mode, n_orig=prob.n, m=m,
                      n_slack=n_slack, row_pair_map=tuple(pair_map),
                      has_sigma_slot=has_slot, sigma_is_weight=is_weight)


def _sum_exprs(terms):
    acc = terms[0]
    for t in terms[1:]:
        acc = acc + t
    return acc
