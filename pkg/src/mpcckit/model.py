"""Parametric MPCC representation and point diagnostics.

The problem format is the bounded parametric form

    min  f(w, p)
    s.t. lbw <= w <= ubw
         lbg <= g(w, p) <= ubg
         0 <= G(w, p)  complementary to  H(w, p) >= 0

Plain inequalities ``h(w) >= 0`` are expressed through ``g`` rows with
bounds ``[0, +inf)``; there is no separate container for them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .expr import VectorFunction, evaluate, var

__all__ = [
    "MpccProblem",
    "IndexSets",
    "Point",
    "comp_residual",
    "feasibility_residual",
    "index_sets",
    "lift_vertical",
    "DEFAULT_COMP_TOL",
]

DEFAULT_COMP_TOL = 1e-7


def _as_bound(v, n, name) -> np.ndarray:
    arr = np.asarray(v, dtype=float).ravel()
    if arr.size != n:
        raise ValueError(f"{name} has length {arr.size}, expected {n}")
    return arr


@dataclass(frozen=True)
class Point:
    """A candidate primal point; length must match the owning problem."""

    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float).ravel())


@dataclass(frozen=True)
class IndexSets:
    """Partition of the complementarity pairs {0..m-1} at a point.

    ``i_plus_zero``: G_i > 0, H_i = 0;  ``i_zero_plus``: G_i = 0, H_i > 0;
    ``i_zero_zero``: both vanish (the biactive / degenerate pairs).
    Indices are 0-based.
    """

    i_plus_zero: tuple
    i_zero_plus: tuple
    i_zero_zero: tuple

    def __post_init__(self):
        object.__setattr__(self, "i_plus_zero", tuple(int(i) for i in self.i_plus_zero))
        object.__setattr__(self, "i_zero_plus", tuple(int(i) for i in self.i_zero_plus))
        object.__setattr__(self, "i_zero_zero", tuple(int(i) for i in self.i_zero_zero))

    def check_partition(self, m: int):
        union = sorted(self.i_plus_zero + self.i_zero_plus + self.i_zero_zero)
        if union != list(range(m)):
            raise ValueError(f"index sets do not partition 0..{m - 1}: {union}")


@dataclass(frozen=True)
class MpccProblem:
    """Immutable MPCC instance in the bounded parametric form."""

    n: int
    f: VectorFunction
    g: VectorFunction
    lbg: np.ndarray
    ubg: np.ndarray
    lbw: np.ndarray
    ubw: np.ndarray
    G: VectorFunction
    H: VectorFunction
    p: np.ndarray = field(default_factory=lambda: np.zeros(0))
    name: str = "mpcc"

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).ravel())
        object.__setattr__(self, "lbg", _as_bound(self.lbg, self.g.n_out, "lbg"))
        object.__setattr__(self, "ubg", _as_bound(self.ubg, self.g.n_out, "ubg"))
        object.__setattr__(self, "lbw", _as_bound(self.lbw, self.n, "lbw"))
        object.__setattr__(self, "ubw", _as_bound(self.ubw, self.n, "ubw"))
        if self.f.n_out != 1:
            raise ValueError("objective must have exactly one output")
        if self.G.n_out != self.H.n_out:
            raise ValueError(
                f"G and H must have the same output count, got {self.G.n_out} vs {self.H.n_out}")
        n_p = self.p.size
        for label, fun in (("f", self.f), ("g", self.g), ("G", self.G), ("H", self.H)):
            if fun.n_vars != self.n:
                raise ValueError(f"{label} declares {fun.n_vars} variables, expected {self.n}")
            if fun.n_params != n_p:
                raise ValueError(f"{label} declares {fun.n_params} parameters, expected {n_p}")
        if np.any(self.lbg > self.ubg):
            raise ValueError("lbg > ubg on some row")
        if np.any(self.lbw > self.ubw):
            raise ValueError("lbw > ubw on some variable")

    @property
    def m(self) -> int:
        return self.G.n_out

    def objective(self, pt: Point) -> float:
        return float(evaluate(self.f, pt.w, self.p)[0])


def comp_residual(prob: MpccProblem, pt: Point) -> float:
    """Complementarity residual: max_i G_i(w) H_i(w); 0 when there are no
    pairs.  This is the homotopy success metric."""
    if prob.m == 0:
        return 0.0
    gv = evaluate(prob.G, pt.w, prob.p)
    hv = evaluate(prob.H, pt.w, prob.p)
    return float(np.max(gv * hv))


def feasibility_residual(prob: MpccProblem, pt: Point) -> float:
    """Inf-norm violation of all non-complementarity constraints: the box
    bounds, the g bounds, and the nonnegativity of G and H.  Zero iff the
    point satisfies them exactly."""
    w = pt.w
    viol = [0.0]
    viol.append(float(np.max(prob.lbw - w, initial=0.0)))
    viol.append(float(np.max(w - prob.ubw, initial=0.0)))
    if prob.g.n_out:
        gv = evaluate(prob.g, w, prob.p)
        viol.append(float(np.max(prob.lbg - gv, initial=0.0)))
        viol.append(float(np.max(gv - prob.ubg, initial=0.0)))
    if prob.m:
        viol.append(float(np.max(-evaluate(prob.G, w, prob.p), initial=0.0)))
        viol.append(float(np.max(-evaluate(prob.H, w, prob.p), initial=0.0)))
    return max(viol)


def index_sets(prob: MpccProblem, pt: Point,
               tol_active: Optional[float] = None) -> IndexSets:
    """Classify every pair at ``pt``: biactive when both values fall below
    ``tol_active`` (default sqrt(comp_tol)), otherwise the smaller component
    is taken to be the vanishing one (ties go to H, i.e. to ``i_plus_zero``).
    """
    if tol_active is None:
        tol_active = float(np.sqrt(DEFAULT_COMP_TOL))
    if tol_active <= 0:
        raise ValueError("tol_active must be positive")
    gv = evaluate(prob.G, pt.w, prob.p) if prob.m else np.zeros(0)
    hv = evaluate(prob.H, pt.w, prob.p) if prob.m else np.zeros(0)
    pz, zp, zz = [], [], []
    for i in range(prob.m):
        if gv[i] < tol_active and hv[i] < tol_active:
            zz.append(i)
        elif gv[i] < hv[i]:
            zp.append(i)
        else:
            pz.append(i)
    return IndexSets(tuple(pz), tuple(zp), tuple(zz))


def lift_vertical(prob: MpccProblem) -> MpccProblem:
    """Equivalent problem with slack variables s_G = G(w), s_H = H(w): the
    complementarity acts on the slacks (coordinate projections) and the
    defining equations are appended to g.  Slacks are bounded [0, +inf)."""
    m = prob.m
    if m == 0:
        return replace(prob, name=prob.name)
    n_new = prob.n + 2 * m
    n_p = prob.p.size

    def widen(fun: VectorFunction) -> VectorFunction:
        return VectorFunction(fun.outputs, n_new, n_p)

    sg = [var(prob.n + i) for i in range(m)]
    sh = [var(prob.n + m + i) for i in range(m)]
    g_rows = list(widen(prob.g).outputs)
    g_rows += [sg[i] - prob.G.outputs[i] for i in range(m)]
    g_rows += [sh[i] - prob.H.outputs[i] for i in range(m)]
    zeros = np.zeros(2 * m)
    return MpccProblem(
        n=n_new,
        f=widen(prob.f),
        g=VectorFunction(g_rows, n_new, n_p),
        lbg=np.concatenate([prob.lbg, zeros]),
        ubg=np.concatenate([prob.ubg, zeros]),
        lbw=np.concatenate([prob.lbw, np.zeros(2 * m)]),
        ubw=np.concatenate([prob.ubw, np.full(2 * m, np.inf)]),
        G=VectorFunction(sg, n_new, n_p),
        H=VectorFunction(sh, n_new, n_p),
        p=prob.p,
        name=prob.name + "_lifted",
    )
