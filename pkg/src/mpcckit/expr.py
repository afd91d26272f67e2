"""Expression graphs over decision variables and parameters, with exact
first and second derivatives.

Every problem function (objective, constraints, complementarity pairs) is a
:class:`VectorFunction`: a list of scalar expression DAGs plus the declared
variable/parameter dimensions.  Nodes are immutable after construction, so
graphs can be shared freely between threads; each evaluation allocates its
own workspace.

Derivative conventions at nondifferentiable points (fixed so that results
are deterministic):

* ``abs`` has derivative 0 at 0,
* ``min2``/``max2`` break ties toward their first argument,
* ``sqrt`` has derivative 0 at 0.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence, Union

import numpy as np

__all__ = [
    "ExprNode",
    "VectorFunction",
    "ExprError",
    "ExprParseError",
    "EvalDomainError",
    "var",
    "par",
    "num",
    "as_expr",
    "powi",
    "sqrt",
    "sin",
    "cos",
    "exp",
    "log",
    "abs_",
    "min2",
    "max2",
    "evaluate",
    "jacobian",
    "hessian_lagrangian",
    "to_nested",
    "from_nested",
]

_LEAF_KINDS = frozenset({"var", "par", "num"})
_UNARY_KINDS = frozenset({"neg", "sqrt", "sin", "cos", "exp", "log", "abs"})
_BINARY_KINDS = frozenset({"add", "sub", "mul", "div", "min2", "max2"})
KINDS = _LEAF_KINDS | _UNARY_KINDS | _BINARY_KINDS | {"powi"}


class ExprError(ValueError):
    """Malformed expression graph: bad kind, arity, payload, or index."""


class ExprParseError(ExprError):
    """Nested-array form could not be parsed; ``path`` locates the node."""

    def __init__(self, message: str, path: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class EvalDomainError(ArithmeticError):
    """Evaluation hit a domain fault (division by zero, log of a
    non-positive value, sqrt of a negative value) at ``node``."""

    def __init__(self, message: str, node: "ExprNode"):
        super().__init__(message)
        self.node = node


class ExprNode:
    """One node of an expression DAG.

    ``payload`` is the variable/parameter index for ``var``/``par``, the
    value for ``num``, the integer exponent (>= 0) for ``powi`` and None
    otherwise.  Nodes are immutable; building from existing children keeps
    the graph acyclic by construction.
    """

    __slots__ = ("kind", "children", "payload")

    def __init__(self, kind: str, children: Sequence["ExprNode"] = (), payload=None):
        if kind not in KINDS:
            raise ExprError(f"unknown expression kind {kind!r}")
        children = tuple(children)
        if kind in _LEAF_KINDS:
            arity = 0
        elif kind in _UNARY_KINDS or kind == "powi":
            arity = 1
        else:
            arity = 2
        if len(children) != arity:
            raise ExprError(f"kind {kind!r} expects {arity} children, got {len(children)}")
        for c in children:
            if not isinstance(c, ExprNode):
                raise ExprError(f"child of {kind!r} is not an ExprNode: {c!r}")
        if kind in ("var", "par"):
            if not isinstance(payload, int) or isinstance(payload, bool) or payload < 0:
                raise ExprError(f"{kind!r} index must be a nonnegative int, got {payload!r}")
        elif kind == "num":
            payload = float(payload)
        elif kind == "powi":
            if not isinstance(payload, int) or isinstance(payload, bool) or payload < 0:
                raise ExprError(f"powi exponent must be a nonnegative int, got {payload!r}")
        elif payload is not None:
            raise ExprError(f"kind {kind!r} takes no payload")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "children", children)
        object.__setattr__(self, "payload", payload)

    def __setattr__(self, name, value):
        raise AttributeError("ExprNode is immutable")

    def __reduce__(self):
        return (ExprNode, (self.kind, self.children, self.payload))

    def __repr__(self):
        if self.kind in _LEAF_KINDS:
            return f"ExprNode({self.kind!r}, payload={self.payload!r})"
        if self.kind == "powi":
            return f"powi({self.children[0]!r}, {self.payload})"
        return f"ExprNode({self.kind!r}, {list(self.children)!r})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return _make("add", self, as_expr(other))

    def __radd__(self, other):
        return _make("add", as_expr(other), self)

    def __sub__(self, other):
        return _make("sub", self, as_expr(other))

    def __rsub__(self, other):
        return _make("sub", as_expr(other), self)

    def __mul__(self, other):
        return _make("mul", self, as_expr(other))

    def __rmul__(self, other):
        return _make("mul", as_expr(other), self)

    def __truediv__(self, other):
        return _make("div", self, as_expr(other))

    def __rtruediv__(self, other):
        return _make("div", as_expr(other), self)

    def __neg__(self):
        return _make("neg", self)

    def __pow__(self, k):
        return powi(self, k)


Exprish = Union[ExprNode, int, float]


def as_expr(x: Exprish) -> ExprNode:
    if isinstance(x, ExprNode):
        return x
    if isinstance(x, (int, float, np.integer, np.floating)):
        return ExprNode("num", payload=float(x))
    raise ExprError(f"cannot interpret {x!r} as an expression")


def var(i: int) -> ExprNode:
    return ExprNode("var", payload=i)


def par(i: int) -> ExprNode:
    return ExprNode("par", payload=i)


def num(v: float) -> ExprNode:
    return ExprNode("num", payload=v)


def _make(kind: str, *children: ExprNode, payload=None) -> ExprNode:
    # Fold constants; anything fancier (CSE, algebraic identities) is out
    # of scope on purpose.
    node = ExprNode(kind, children, payload)
    if children and all(c.kind == "num" for c in children):
        vals = [c.payload for c in children]
        return ExprNode("num", payload=_eval_kind(kind, vals, payload, node))
    return node


def powi(x: Exprish, k: int) -> ExprNode:
    return _make("powi", as_expr(x), payload=k)


def sqrt(x: Exprish) -> ExprNode:
    return _make("sqrt", as_expr(x))


def sin(x: Exprish) -> ExprNode:
    return _make("sin", as_expr(x))


def cos(x: Exprish) -> ExprNode:
    return _make("cos", as_expr(x))


def exp(x: Exprish) -> ExprNode:
    return _make("exp", as_expr(x))


def log(x: Exprish) -> ExprNode:
    return _make("log", as_expr(x))


def abs_(x: Exprish) -> ExprNode:
    return _make("abs", as_expr(x))


def min2(a: Exprish, b: Exprish) -> ExprNode:
    return _make("min2", as_expr(a), as_expr(b))


def max2(a: Exprish, b: Exprish) -> ExprNode:
    return _make("max2", as_expr(a), as_expr(b))


# ---------------------------------------------------------------------------
# value / derivative kernels
# ---------------------------------------------------------------------------

def _eval_kind(kind: str, v: Sequence[float], payload, node: ExprNode) -> float:
    if kind == "add":
        return v[0] + v[1]
    if kind == "sub":
        return v[0] - v[1]
    if kind == "mul":
        return v[0] * v[1]
    if kind == "div":
        if v[1] == 0.0:
            raise EvalDomainError("division by zero", node)
        return v[0] / v[1]
    if kind == "neg":
        return -v[0]
    if kind == "powi":
        try:
            return v[0] ** payload
        except OverflowError:
            return math.inf if (v[0] > 0 or payload % 2 == 0) else -math.inf
    if kind == "sqrt":
        if v[0] < 0.0:
            raise EvalDomainError(f"sqrt of negative value {v[0]!r}", node)
        return math.sqrt(v[0])
    if kind == "sin":
        return math.sin(v[0])
    if kind == "cos":
        return math.cos(v[0])
    if kind == "exp":
        try:
            return math.exp(v[0])
        except OverflowError:
            return math.inf
    if kind == "log":
        if v[0] <= 0.0:
            raise EvalDomainError(f"log of non-positive value {v[0]!r}", node)
        return math.log(v[0])
    if kind == "abs":
        return abs(v[0])
    if kind == "min2":
        return v[0] if v[0] <= v[1] else v[1]
    if kind == "max2":
        return v[0] if v[0] >= v[1] else v[1]
    raise ExprError(f"kind {kind!r} is not an operation")


def _partials(kind: str, v: Sequence[float], val: float, payload) -> tuple:
    """First partial derivatives of the node value w.r.t. its children."""
    if kind == "add":
        return (1.0, 1.0)
    if kind == "sub":
        return (1.0, -1.0)
    if kind == "mul":
        return (v[1], v[0])
    if kind == "div":
        return (1.0 / v[1], -v[0] / (v[1] * v[1]))
    if kind == "neg":
        return (-1.0,)
    if kind == "powi":
        k = payload
        if k == 0:
            return (0.0,)
        return (k * v[0] ** (k - 1),)
    if kind == "sqrt":
        return (0.0 if val == 0.0 else 0.5 / val,)
    if kind == "sin":
        return (math.cos(v[0]),)
    if kind == "cos":
        return (-math.sin(v[0]),)
    if kind == "exp":
        return (val,)
    if kind == "log":
        return (1.0 / v[0],)
    if kind == "abs":
        return ((0.0 if v[0] == 0.0 else math.copysign(1.0, v[0])),)
    if kind == "min2":
        return (1.0, 0.0) if v[0] <= v[1] else (0.0, 1.0)
    if kind == "max2":
        return (1.0, 0.0) if v[0] >= v[1] else (0.0, 1.0)
    raise ExprError(f"kind {kind!r} has no partials")


def _second_partials(kind: str, v: Sequence[float], val: float, payload):
    """Second partials as a tuple matching the children layout.

    Unary kinds return ``(h11,)``; binary kinds return ``(h11, h12, h22)``.
    Returns None when all second partials are structurally zero.
    """
    if kind in ("add", "sub", "neg", "abs", "min2", "max2"):
        return None
    if kind == "mul":
        return (0.0, 1.0, 0.0)
    if kind == "div":
        b2 = v[1] * v[1]
        return (0.0, -1.0 / b2, 2.0 * v[0] / (b2 * v[1]))
    if kind == "powi":
        k = payload
        if k <= 1:
            return None
        return (k * (k - 1) * v[0] ** (k - 2),)
    if kind == "sqrt":
        return None if val == 0.0 else (-0.25 / (val * val * val),)
    if kind == "sin":
        return (-math.sin(v[0]),)
    if kind == "cos":
        return (-math.cos(v[0]),)
    if kind == "exp":
        return (val,)
    if kind == "log":
        return (-1.0 / (v[0] * v[0]),)
    raise ExprError(f"kind {kind!r} has no second partials")


# ---------------------------------------------------------------------------
# tape (topologically sorted DAG, shared-subexpression aware)
# ---------------------------------------------------------------------------

class _Tape:
    __slots__ = ("kinds", "args", "payloads", "nodes", "var_slots", "par_slots", "out_slots")

    def __init__(self, outputs: Sequence[ExprNode]):
        slot_of: dict[int, int] = {}
        kinds: list[str] = []
        args: list[tuple] = []
        payloads: list = []
        nodes: list[ExprNode] = []

        # Iterative post-order so deep chains cannot hit the recursion limit.
        for out in outputs:
            stack = [(out, False)]
            while stack:
                node, expanded = stack.pop()
                if id(node) in slot_of:
                    continue
                if expanded:
                    slot_of[id(node)] = len(kinds)
                    kinds.append(node.kind)
                    args.append(tuple(slot_of[id(c)] for c in node.children))
                    payloads.append(node.payload)
                    nodes.append(node)
                else:
                    stack.append((node, True))
                    for c in node.children:
                        if id(c) not in slot_of:
                            stack.append((c, False))

        self.kinds = kinds
        self.args = args
        self.payloads = payloads
        self.nodes = nodes
        self.var_slots = [(s, payloads[s]) for s, k in enumerate(kinds) if k == "var"]
        self.par_slots = [(s, payloads[s]) for s, k in enumerate(kinds) if k == "par"]
        self.out_slots = [slot_of[id(out)] for out in outputs]

    def forward(self, x: np.ndarray, p: np.ndarray) -> list:
        vals = [0.0] * len(self.kinds)
        kinds, args, payloads, nodes = self.kinds, self.args, self.payloads, self.nodes
        for s, kind in enumerate(kinds):
            if kind == "var":
                vals[s] = float(x[payloads[s]])
            elif kind == "par":
                vals[s] = float(p[payloads[s]])
            elif kind == "num":
                vals[s] = payloads[s]
            else:
                a = args[s]
                vals[s] = _eval_kind(kind, [vals[j] for j in a], payloads[s], nodes[s])
        return vals


class VectorFunction:
    """A fixed-size vector of scalar expressions over ``n_vars`` variables
    and ``n_params`` parameters."""

    __slots__ = ("outputs", "n_vars", "n_params", "_tape")

    def __init__(self, outputs: Iterable[Exprish], n_vars: int, n_params: int = 0):
        outputs = tuple(as_expr(o) for o in outputs)
        object.__setattr__(self, "outputs", outputs)
        object.__setattr__(self, "n_vars", int(n_vars))
        object.__setattr__(self, "n_params", int(n_params))
        object.__setattr__(self, "_tape", None)
        for k, out in enumerate(outputs):
            self._check_refs(out, k)

    def __setattr__(self, name, value):
        raise AttributeError("VectorFunction is immutable")

    def __reduce__(self):
        return (VectorFunction, (self.outputs, self.n_vars, self.n_params))

    def _check_refs(self, root: ExprNode, out_index: int):
        stack = [root]
        seen = set()
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            if node.kind == "var" and node.payload >= self.n_vars:
                raise ExprError(
                    f"output {out_index} references variable {node.payload}, "
                    f"but only {self.n_vars} are declared"
                )
            if node.kind == "par" and node.payload >= self.n_params:
                raise ExprError(
                    f"output {out_index} references parameter {node.payload}, "
                    f"but only {self.n_params} are declared"
                )
            stack.extend(node.children)

    @property
    def n_out(self) -> int:
        return len(self.outputs)

    def tape(self) -> _Tape:
        if self._tape is None:
            object.__setattr__(self, "_tape", _Tape(self.outputs))
        return self._tape

    def active_vars(self) -> list:
        """Indices of variables that structurally appear in the graph."""
        return sorted({i for _, i in self.tape().var_slots})


def _check_dims(fun: VectorFunction, x, p):
    x = np.asarray(x, dtype=float).ravel()
    p = np.asarray(p, dtype=float).ravel() if p is not None else np.zeros(0)
    if x.size != fun.n_vars:
        raise ExprError(f"expected {fun.n_vars} variables, got {x.size}")
    if p.size != fun.n_params:
        raise ExprError(f"expected {fun.n_params} parameters, got {p.size}")
    return x, p


def evaluate(fun: VectorFunction, x, p=None) -> np.ndarray:
    """Evaluate all outputs at ``(x, p)``.  Deterministic: identical inputs
    give bit-identical results."""
    x, p = _check_dims(fun, x, p)
    tape = fun.tape()
    vals = tape.forward(x, p)
    return np.array([vals[s] for s in tape.out_slots], dtype=float)


def jacobian(fun: VectorFunction, x, p=None) -> np.ndarray:
    """Exact Jacobian of the outputs w.r.t. the variables (not parameters),
    shape ``(n_out, n_vars)``.  One reverse sweep, vectorized over outputs."""
    x, p = _check_dims(fun, x, p)
    tape = fun.tape()
    vals = tape.forward(x, p)
    n_out = len(tape.out_slots)
    adj = np.zeros((len(tape.kinds), n_out))
    for k, s in enumerate(tape.out_slots):
        adj[s, k] += 1.0
    kinds, args, payloads = tape.kinds, tape.args, tape.payloads
    for s in range(len(kinds) - 1, -1, -1):
        a = args[s]
        if not a:
            continue
        row = adj[s]
        child_vals = [vals[j] for j in a]
        parts = _partials(kinds[s], child_vals, vals[s], payloads[s])
        for j, pj in zip(a, parts):
            if pj != 0.0:
                adj[j] += pj * row
    jac = np.zeros((n_out, fun.n_vars))
    for s, i in tape.var_slots:
        jac[:, i] += adj[s]
    return jac


def _weighted_hessian(fun: VectorFunction, x: np.ndarray, p: np.ndarray,
                      weights: np.ndarray) -> np.ndarray:
    """Hessian of ``sum_k weights[k] * fun_k`` by forward-over-reverse,
    vectorized over one tangent direction per structurally present variable
    (structurally absent columns are skipped and stay zero)."""
    n = fun.n_vars
    hess = np.zeros((n, n))
    cols = fun.active_vars()
    if not cols or not len(weights):
        return hess
    col_of = {i: j for j, i in enumerate(cols)}
    nd = len(cols)

    tape = fun.tape()
    vals = tape.forward(x, p)
    n_slots = len(tape.kinds)
    kinds, args, payloads = tape.kinds, tape.args, tape.payloads

    dot = np.zeros((n_slots, nd))
    for s, i in tape.var_slots:
        dot[s, col_of[i]] += 1.0
    part_cache: list = [None] * n_slots
    for s, kind in enumerate(kinds):
        a = args[s]
        if not a:
            continue
        child_vals = [vals[j] for j in a]
        parts = _partials(kind, child_vals, vals[s], payloads[s])
        part_cache[s] = parts
        acc = None
        for j, pj in zip(a, parts):
            if pj != 0.0:
                term = pj * dot[j]
                acc = term if acc is None else acc + term
        if acc is not None:
            dot[s] = acc

    bar = np.zeros(n_slots)
    bar_dot = np.zeros((n_slots, nd))
    for k, s in enumerate(tape.out_slots):
        bar[s] += weights[k]

    for s in range(n_slots - 1, -1, -1):
        a = args[s]
        if not a:
            continue
        b, bd = bar[s], bar_dot[s]
        if b == 0.0 and not bd.any():
            continue
        child_vals = [vals[j] for j in a]
        parts = part_cache[s]
        second = _second_partials(kinds[s], child_vals, vals[s], payloads[s]) if b != 0.0 else None
        for idx, (j, pj) in enumerate(zip(a, parts)):
            contrib = pj * bd if pj != 0.0 else None
            if second is not None:
                if len(a) == 1:
                    pdot = second[0] * dot[j] if second[0] != 0.0 else None
                else:
                    h11, h12, h22 = second
                    if idx == 0:
                        pdot = (h11 * dot[a[0]] if h11 != 0.0 else 0.0) + \
                               (h12 * dot[a[1]] if h12 != 0.0 else 0.0)
                    else:
                        pdot = (h12 * dot[a[0]] if h12 != 0.0 else 0.0) + \
                               (h22 * dot[a[1]] if h22 != 0.0 else 0.0)
                    if np.isscalar(pdot) and pdot == 0.0:
                        pdot = None
                if pdot is not None:
                    contrib = b * pdot if contrib is None else contrib + b * pdot
            if pj != 0.0:
                bar[j] += pj * b
            if contrib is not None:
                bar_dot[j] += contrib

    for s, i in tape.var_slots:
        hess[i, cols] += bar_dot[s]
    return hess


def hessian_lagrangian(objective: VectorFunction, constraints: VectorFunction | None,
                       x, p=None, sigma_obj: float = 1.0,
                       lam=None) -> np.ndarray:
    """Exact Hessian of ``sigma_obj * f + lam^T c`` w.r.t. the variables.

    ``objective`` must have one output; ``lam`` must match the number of
    constraint outputs.  The result is symmetrized, so (i, j) and (j, i)
    entries compare equal exactly.
    """
    x, p = _check_dims(objective, x, p)
    if objective.n_out != 1:
        raise ExprError("objective must have exactly one output")
    hess = _weighted_hessian(objective, x, p, np.array([float(sigma_obj)]))
    if constraints is not None and constraints.n_out > 0:
        lam = np.asarray(lam, dtype=float).ravel() if lam is not None else np.zeros(0)
        if lam.size != constraints.n_out:
            raise ExprError(
                f"lambda has size {lam.size}, expected {constraints.n_out}")
        if constraints.n_vars != objective.n_vars:
            raise ExprError("objective and constraints disagree on n_vars")
        hess = hess + _weighted_hessian(constraints, x, p, lam)
    return 0.5 * (hess + hess.T)


# ---------------------------------------------------------------------------
# nested-array serialization:  ["mul", ["var", 0], ["var", 1]]
# ---------------------------------------------------------------------------

def to_nested(node: ExprNode):
    """Expression as nested arrays with ``var``/``par``/``num`` leaves."""
    if node.kind in ("var", "par"):
        return [node.kind, node.payload]
    if node.kind == "num":
        return ["num", node.payload]
    if node.kind == "powi":
        return ["powi", to_nested(node.children[0]), node.payload]
    return [node.kind] + [to_nested(c) for c in node.children]


def from_nested(obj, path: str = "expr") -> ExprNode:
    """Parse the nested-array form; errors carry the node path."""
    if not isinstance(obj, (list, tuple)) or not obj:
        raise ExprParseError(f"expected a non-empty array, got {obj!r}", path)
    head = obj[0]
    if not isinstance(head, str):
        raise ExprParseError(f"operator name must be a string, got {head!r}", path)
    if head in ("var", "par"):
        if len(obj) != 2 or not isinstance(obj[1], int) or isinstance(obj[1], bool):
            raise ExprParseError(f"{head} expects one integer index", path)
        return ExprNode(head, payload=obj[1])
    if head == "num":
        if len(obj) != 2 or not isinstance(obj[1], (int, float)) or isinstance(obj[1], bool):
            raise ExprParseError("num expects one numeric value", path)
        return ExprNode("num", payload=float(obj[1]))
    if head == "powi":
        if len(obj) != 3 or not isinstance(obj[2], int) or isinstance(obj[2], bool) or obj[2] < 0:
            raise ExprParseError("powi expects [powi, expr, k] with integer k >= 0", path)
        return ExprNode("powi", (from_nested(obj[1], f"{path}.powi[0]"),), payload=obj[2])
    if head in _UNARY_KINDS:
        if len(obj) != 2:
            raise ExprParseError(f"{head} expects exactly one child", path)
        return ExprNode(head, (from_nested(obj[1], f"{path}.{head}[0]"),))
    if head in _BINARY_KINDS:
        if len(obj) != 3:
            raise ExprParseError(f"{head} expects exactly two children", path)
        return ExprNode(head, (from_nested(obj[1], f"{path}.{head}[0]"),
                               from_nested(obj[2], f"{path}.{head}[1]")))
    raise ExprParseError(f"unknown operator {head!r}", path)
