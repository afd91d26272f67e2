"""Built-in desk-scale MPCC instances with known or oracle-derivable
solutions.

Every ``known_solutions`` entry is feasible under direct evaluation, and
the tests certify each ``best_known_objective`` against a brute-force
branch-enumeration oracle before trusting it.  ``is_ocp`` controls whether
the factor-of-two objective-quality rule applies in failure accounting
(simulation-type instances skip it).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .expr import VectorFunction, cos, exp, num, par, powi, sin, var
from .model import MpccProblem, Point, lift_vertical

__all__ = ["CorpusEntry", "corpus", "corpus_entry"]

INF = np.inf


@dataclass(frozen=True)
class CorpusEntry:
    problem: MpccProblem
    start: Point
    best_known_objective: Optional[float]
    known_solutions: tuple  # of (Point, strongest stationarity label)
    is_ocp: bool
    tags: tuple = ()


def _vf(exprs, n, n_p=0):
    return VectorFunction(exprs, n, n_p)


def _sq(e):
    return powi(e, 2)


def _mpcc(name, n, f, G, H, g=(), lbg=(), ubg=(), lbw=None, ubw=None, p=()):
    n_p = len(p)
    lbw = np.full(n, -INF) if lbw is None else np.asarray(lbw, dtype=float)
    ubw = np.full(n, INF) if ubw is None else np.asarray(ubw, dtype=float)
    return MpccProblem(
        n=n,
        f=_vf([f], n, n_p),
        g=_vf(list(g), n, n_p),
        lbg=np.asarray(lbg, dtype=float),
        ubg=np.asarray(ubg, dtype=float),
        lbw=lbw,
        ubw=ubw,
        G=_vf(list(G), n, n_p),
        H=_vf(list(H), n, n_p),
        p=np.asarray(p, dtype=float),
        name=name,
    )


def _quad2d():
    # min (w0-1)^2 + (w1-1)^2 with one pair (w0, w1): two S-stationary
    # minimizers on the axes plus a C-stationary corner with descent
    # directions.
    w0, w1 = var(0), var(1)
    prob = _mpcc("quad2d", 2, _sq(w0 - 1.0) + _sq(w1 - 1.0), [w0], [w1])
    sols = ((Point([1.0, 0.0]), "S"), (Point([0.0, 1.0]), "S"),
            (Point([0.0, 0.0]), "C"))
    return CorpusEntry(prob, Point([1.0, 1.0]), 1.0, sols, is_ocp=True,
                       tags=("classifier", "bcheck"))


def _quad2d_shifted():
    w0, w1 = var(0), var(1)
    prob = _mpcc("quad2d-shifted", 2, _sq(w0 - 2.0) + _sq(w1 - 0.5), [w0], [w1])
    sols = ((Point([2.0, 0.0]), "S"), (Point([0.0, 0.5]), "S"),
            (Point([0.0, 0.0]), "C"))
    return CorpusEntry(prob, Point([2.0, 1.0]), 0.25, sols, is_ocp=False)


def _origin_quad():
    # degenerate optimum: both pair functions vanish, multipliers are zero,
    # so the origin is S-stationary despite being biactive.
    w0, w1 = var(0), var(1)
    prob = _mpcc("origin-quad", 2, _sq(w0) + _sq(w1), [w0], [w1])
    return CorpusEntry(prob, Point([1.0, 1.0]), 0.0,
                       ((Point([0.0, 0.0]), "S"),), is_ocp=True,
                       tags=("degenerate",))


def _ralph_saddle():
    # indefinite objective; the relaxed problems track the diagonal down to
    # the biactive origin.
    w0, w1 = var(0), var(1)
    f = _sq(w0 - w1) - 2.0 * (w0 * w1)
    prob = _mpcc("ralph-saddle", 2, f, [w0], [w1])
    return CorpusEntry(prob, Point([1.0, 0.5]), 0.0,
                       ((Point([0.0, 0.0]), "S"),), is_ocp=True,
                       tags=("degenerate", "indefinite"))


def _mstat_corner():
    # the origin is M-stationary (nu=-1, xi=0) but admits a descent
    # direction; the actual minimizer sits on the w0 axis at the box bound.
    w0, w1 = var(0), var(1)
    prob = _mpcc("mstat-corner", 2, num(0.0) - w0 + _sq(w1), [w0], [w1],
                 ubw=[5.0, 5.0])
    sols = ((Point([5.0, 0.0]), "S"), (Point([0.0, 0.0]), "M"))
    return CorpusEntry(prob, Point([1.0, 1.0]), -5.0, sols, is_ocp=False,
                       tags=("degenerate", "bcheck"))


def _astat_corner():
    # the origin has nu=1, xi=-1: A-stationary only.
    w0, w1 = var(0), var(1)
    prob = _mpcc("astat-corner", 2, w0 - w1 + _sq(w0), [w0], [w1],
                 ubw=[2.0, 2.0])
    sols = ((Point([0.0, 2.0]), "S"), (Point([0.0, 0.0]), "A"))
    return CorpusEntry(prob, Point([0.5, 0.5]), -2.0, sols, is_ocp=False,
                       tags=("degenerate",))


def _sign_euler3():
    # implicit Euler for xdot = -sign(x), three steps, Heaviside-step DCS:
    #   x_{k+1} = x_k + h (1 - 2 a_k),  x_{k+1} = pos_k - neg_k,
    #   pairs (a_k, neg_k) and (1 - a_k, pos_k),  a_k in [0, 1].
    # With x(0) = 1 and h = 0.4 the trajectory hits the sliding mode at the
    # third step: x = (0.6, 0.2, 0) with a_3 = 0.75.
    n = 12
    p0, h = par(0), par(1)
    x = [var(k) for k in range(3)]
    a = [var(3 + k) for k in range(3)]
    pos = [var(6 + k) for k in range(3)]
    neg = [var(9 + k) for k in range(3)]
    g = []
    for k in range(3):
        prev = p0 if k == 0 else x[k - 1]
        g.append(x[k] - prev - h * (1.0 - 2.0 * a[k]))
        g.append(x[k] - pos[k] + neg[k])
    G = a + [1.0 - a[k] for k in range(3)]
    H = neg + pos
    lbw = np.array([-INF] * 3 + [0.0] * 3 + [0.0] * 6)
    ubw = np.array([INF] * 3 + [1.0] * 3 + [INF] * 6)
    prob = _mpcc("sign-euler3", n, _sq(x[2]), G, H, g=g,
                 lbg=np.zeros(6), ubg=np.zeros(6), lbw=lbw, ubw=ubw,
                 p=(1.0, 0.4))
    sol = Point([0.6, 0.2, 0.0, 1.0, 1.0, 0.75, 0.6, 0.2, 0.0, 0.0, 0.0, 0.0])
    start = Point([0.5] * 12)
    return CorpusEntry(prob, start, 0.0, ((sol, "S"),), is_ocp=False,
                       tags=("dcs", "simulation"))


def _bilinear2():
    # bilinear objective over two pairs; the global solution is biactive in
    # the first pair and certified by branch enumeration.
    w = [var(j) for j in range(4)]
    f = w[0] * w[3] - 2.0 * w[0] - 3.0 * w[3] + _sq(w[1]) + _sq(w[2] - 1.0) + 5.0
    prob = _mpcc("bilinear2", 4, f, [w[0], w[2]], [w[1], w[3]],
                 lbw=np.zeros(4), ubw=np.full(4, 3.0))
    sols = ((Point([0.0, 0.0, 0.0, 3.0]), "S"),)
    return CorpusEntry(prob, Point([0.0, 0.0, 0.0, 2.5]), -3.0, sols,
                       is_ocp=True, tags=("bilinear", "degenerate"))


def _rangeg():
    # a genuine range row 1 <= w0 + w1 <= 1.5 forces the mass off the
    # origin; both axis solutions are symmetric global minimizers.
    w0, w1 = var(0), var(1)
    prob = _mpcc("rangeg", 2, _sq(w0 - 2.0) + _sq(w1 - 2.0), [w0], [w1],
                 g=[w0 + w1], lbg=[1.0], ubg=[1.5])
    sols = ((Point([1.5, 0.0]), "S"), (Point([0.0, 1.5]), "S"))
    return CorpusEntry(prob, Point([1.2, 0.3]), 4.25, sols, is_ocp=True,
                       tags=("range",))


def _rosenbrock():
    w0, w1 = var(0), var(1)
    f = _sq(1.0 - w0) + 100.0 * _sq(w1 - _sq(w0))
    prob = _mpcc("rosenbrock", 2, f, [], [])
    return CorpusEntry(prob, Point([-1.2, 1.0]), 0.0,
                       ((Point([1.0, 1.0]), "S"),), is_ocp=True,
                       tags=("smooth", "m0"))


def _boxqp():
    w0, w1 = var(0), var(1)
    prob = _mpcc("boxqp", 2, _sq(w0 - 2.0) + _sq(w1 + 1.0), [], [],
                 lbw=[0.0, 0.0], ubw=[1.0, 1.0])
    return CorpusEntry(prob, Point([0.5, 0.5]), 2.0,
                       ((Point([1.0, 0.0]), "S"),), is_ocp=True,
                       tags=("smooth", "m0"))


def _infeasible1():
    # w0 must sit in [2, 3] through g but is capped at 1 by its bound.
    w0, w1 = var(0), var(1)
    prob = _mpcc("infeasible1", 2, _sq(w0) + _sq(w1), [w0], [w1],
                 g=[w0], lbg=[2.0], ubg=[3.0], ubw=[1.0, INF])
    return CorpusEntry(prob, Point([0.0, 0.0]), None, (), is_ocp=False,
                       tags=("infeasible",))


def _trig1():
    w0, w1, w2 = var(0), var(1), var(2)
    f = _sq(sin(w0) - 0.5) + _sq(w1 - 1.0) + 0.1 * _sq(exp(w2) - 1.0)
    prob = _mpcc("trig1", 3, f, [w0], [w2],
                 lbw=[0.0, -2.0, 0.0], ubw=[2.0, 3.0, 2.0])
    sols = ((Point([math.pi / 6.0, 1.0, 0.0]), "S"),)
    return CorpusEntry(prob, Point([0.6, 0.8, 0.1]), 0.0, sols, is_ocp=True,
                       tags=("trig",))


def _param_shift():
    w0, w1 = var(0), var(1)
    f = _sq(w0 - par(0)) + _sq(w1 - par(1))
    prob = _mpcc("param-shift", 2, f, [w0], [w1], p=(1.5, 0.5))
    sols = ((Point([1.5, 0.0]), "S"), (Point([0.0, 0.5]), "S"),
            (Point([0.0, 0.0]), "C"))
    return CorpusEntry(prob, Point([1.5, 0.2]), 0.25, sols, is_ocp=False)


def _liftquad():
    base = _quad2d()
    prob = lift_vertical(base.problem)
    sols = ((Point([1.0, 0.0, 1.0, 0.0]), "S"),
            (Point([0.0, 1.0, 0.0, 1.0]), "S"),
            (Point([0.0, 0.0, 0.0, 0.0]), "C"))
    return CorpusEntry(prob, Point([1.0, 1.0, 1.0, 1.0]), 1.0, sols,
                       is_ocp=True, tags=("lifted",))


def _lcp1():
    # affine pair function instead of a coordinate: G = 2 w0 - w1 + 0.5.
    w0, w1 = var(0), var(1)
    prob = _mpcc("lcp1", 2, _sq(w0 - 1.0) + _sq(w1 - 2.0),
                 [2.0 * w0 - w1 + 0.5], [w1])
    sols = ((Point([0.8, 2.1]), "S"), (Point([1.0, 0.0]), "S"))
    return CorpusEntry(prob, Point([0.5, 1.5]), 0.05, sols, is_ocp=False,
                       tags=("affine-pair",))


_BUILDERS = (
    _quad2d, _quad2d_shifted, _origin_quad, _ralph_saddle, _mstat_corner,
    _astat_corner, _sign_euler3, _bilinear2, _rangeg, _rosenbrock, _boxqp,
    _infeasible1, _trig1, _param_shift, _liftquad, _lcp1,
)


def corpus() -> list:
    """All built-in instances, in a fixed order."""
    return [b() for b in _BUILDERS]


def corpus_entry(name: str) -> CorpusEntry:
    for entry in corpus():
        if entry.problem.name == name:
            return entry
    raise KeyError(f"no corpus entry named {name!r}")
