"""Problem file I/O, batch execution, failure accounting, and Dolan-More
performance profiles.

Problem files are UTF-8 JSON with a strict schema (unknown keys are
rejected); expressions are nested arrays ``["op", child, child]`` with
``var``/``par``/``num`` leaves.  Batch results are written as one
JSON-lines file of run records; profiles as CSV ``method,tau,rho``.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .corpus import CorpusEntry, corpus
from .expr import ExprParseError, VectorFunction, from_nested, to_nested
from .homotopy import (FailureReason, HomotopyOptions, classify_failure,
                       run_homotopy)
from .model import MpccProblem, Point
from .relaxations import (KIND_NAMES, MODE_NAMES, RelaxationKind,
                          SteeringMode)
from .stationarity import StationarityOptions, classify_point

__all__ = [
    "SchemaError",
    "ProblemMeta",
    "load_problem",
    "save_problem",
    "entry_to_file",
    "file_to_entry",
    "export_corpus",
    "ProblemName",
    "parse_problem_name",
    "format_problem_name",
    "MethodSpec",
    "parse_method",
    "RunRecord",
    "run_batch",
    "write_records",
    "read_records",
    "ProfileTable",
    "performance_profile",
    "seeded_rng",
]

SEED_ENV = "MPCCKIT_SEED"


def seeded_rng(offset: int = 0) -> np.random.Generator:
    """Deterministic generator; MPCCKIT_SEED overrides the base seed for
    any randomized test-data generation."""
    base = int(os.environ.get(SEED_ENV, "0"))
    return np.random.default_rng(base + offset)


# ---------------------------------------------------------------------------
# problem files
# ---------------------------------------------------------------------------

class SchemaError(ValueError):
    """Problem file violates the schema; ``key`` names the offending field."""

    def __init__(self, key: str, message: str):
        super().__init__(f"problem file key {key!r}: {message}")
        self.key = key


_REQUIRED_KEYS = ("name", "n", "lbw", "ubw", "f", "g", "lbg", "ubg",
                  "G", "H", "p_names", "p_val", "is_ocp")
_OPTIONAL_KEYS = ("x0", "best_known_objective")


@dataclass(frozen=True)
class ProblemMeta:
    x0: Optional[np.ndarray]
    best_known_objective: Optional[float]
    is_ocp: bool
    p_names: tuple


def _num_list(doc, key, length) -> np.ndarray:
    v = doc[key]
    if not isinstance(v, list) or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise SchemaError(key, "expected an array of numbers")
    if length is not None and len(v) != length:
        raise SchemaError(key, f"expected length {length}, got {len(v)}")
    return np.asarray(v, dtype=float)


def _expr_list(doc, key, n, n_p) -> VectorFunction:
    v = doc[key]
    if not isinstance(v, list):
        raise SchemaError(key, "expected an array of expressions")
    outs = []
    for i, e in enumerate(v):
        try:
            outs.append(from_nested(e, path=f"{key}[{i}]"))
        except ExprParseError:
            raise
    try:
        return VectorFunction(outs, n, n_p)
    except Exception as exc:
        raise SchemaError(key, str(exc))


def load_problem(path) -> tuple:
    """Load a problem file; returns ``(MpccProblem, ProblemMeta)``.

    The schema is strict: every required key must be present, unknown keys
    are rejected, and array lengths must be consistent with ``n`` and the
    pair count.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError("<document>", f"not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise SchemaError("<document>", "top level must be an object")
    for key in _REQUIRED_KEYS:
        if key not in doc:
            raise SchemaError(key, "missing required key")
    for key in doc:
        if key not in _REQUIRED_KEYS and key not in _OPTIONAL_KEYS:
            raise SchemaError(key, "unknown key (strict schema)")

    if not isinstance(doc["name"], str):
        raise SchemaError("name", "expected a string")
    n = doc["n"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 0:
        raise SchemaError("n", "expected a nonnegative integer")
    if not isinstance(doc["is_ocp"], bool):
        raise SchemaError("is_ocp", "expected a boolean")
    p_names = doc["p_names"]
    if not isinstance(p_names, list) or not all(isinstance(s, str) for s in p_names):
        raise SchemaError("p_names", "expected an array of strings")
    p_val = _num_list(doc, "p_val", len(p_names))
    n_p = len(p_names)

    lbw = _num_list(doc, "lbw", n)
    ubw = _num_list(doc, "ubw", n)
    try:
        fexpr = from_nested(doc["f"], path="f")
    except ExprParseError:
        raise
    f = VectorFunction([fexpr], n, n_p)
    g = _expr_list(doc, "g", n, n_p)
    lbg = _num_list(doc, "lbg", g.n_out)
    ubg = _num_list(doc, "ubg", g.n_out)
    G = _expr_list(doc, "G", n, n_p)
    H = _expr_list(doc, "H", n, n_p)
    if G.n_out != H.n_out:
        raise SchemaError("H", f"expected {G.n_out} expressions to match G, got {H.n_out}")

    x0 = None
    if "x0" in doc and doc["x0"] is not None:
        x0 = _num_list(doc, "x0", n)
    best = None
    if "best_known_objective" in doc and doc["best_known_objective"] is not None:
        b = doc["best_known_objective"]
        if not isinstance(b, (int, float)) or isinstance(b, bool):
            raise SchemaError("best_known_objective", "expected a number")
        best = float(b)

    try:
        prob = MpccProblem(n=n, f=f, g=g, lbg=lbg, ubg=ubg, lbw=lbw, ubw=ubw,
                           G=G, H=H, p=p_val, name=doc["name"])
    except ValueError as exc:
        raise SchemaError("<document>", str(exc))
    meta = ProblemMeta(x0=x0, best_known_objective=best,
                       is_ocp=doc["is_ocp"], p_names=tuple(p_names))
    return prob, meta


def save_problem(prob: MpccProblem, path, x0=None, best_known_objective=None,
                 is_ocp: bool = False, p_names=None):
    doc = {
        "name": prob.name,
        "n": prob.n,
        "lbw": list(prob.lbw),
        "ubw": list(prob.ubw),
        "f": to_nested(prob.f.outputs[0]),
        "g": [to_nested(e) for e in prob.g.outputs],
        "lbg": list(prob.lbg),
        "ubg": list(prob.ubg),
        "G": [to_nested(e) for e in prob.G.outputs],
        "H": [to_nested(e) for e in prob.H.outputs],
        "p_names": list(p_names) if p_names is not None
                   else [f"p{i}" for i in range(prob.p.size)],
        "p_val": list(prob.p),
        "is_ocp": bool(is_ocp),
    }
    if x0 is not None:
        doc["x0"] = [float(v) for v in np.asarray(x0).ravel()]
    if best_known_objective is not None:
        doc["best_known_objective"] = float(best_known_objective)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def entry_to_file(entry: CorpusEntry, path):
    save_problem(entry.problem, path, x0=entry.start.w,
                 best_known_objective=entry.best_known_objective,
                 is_ocp=entry.is_ocp)


def file_to_entry(path) -> CorpusEntry:
    prob, meta = load_problem(path)
    start = Point(meta.x0) if meta.x0 is not None else Point(np.zeros(prob.n))
    return CorpusEntry(problem=prob, start=start,
                       best_known_objective=meta.best_known_objective,
                       known_solutions=(), is_ocp=meta.is_ocp)


def export_corpus(directory) -> list:
    """Serialize every built-in corpus entry into ``directory``; returns the
    written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for entry in corpus():
        path = directory / f"{entry.problem.name}.json"
        entry_to_file(entry, path)
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# benchmark problem naming convention
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProblemName:
    """Decoded underscore-delimited benchmark file name.  Fields in order:
    base name, parameter index, number of control intervals, finite
    elements per interval, RK stage count, RK scheme, DCS type,
    cross-complementarity mode, source class, and the vertical-form flag.
    """

    base: str
    param_index: int
    n_control: int
    n_fe: int
    n_s: int
    rk_scheme: str
    dcs_type: str
    cross_comp_mode: int
    source_class: str
    lifted: bool


def parse_problem_name(s: str) -> ProblemName:
    parts = s.split("_")
    if len(parts) != 10:
        raise ValueError(
            f"expected 10 underscore-delimited fields, got {len(parts)} in {s!r}")

    def to_int(txt, what):
        try:
            return int(txt)
        except ValueError:
            raise ValueError(f"field {what} must be an integer, got {txt!r}")

    lifted_txt = parts[9]
    if lifted_txt not in ("0", "1"):
        raise ValueError(f"lifted flag must be 0 or 1, got {lifted_txt!r}")
    return ProblemName(
        base=parts[0],
        param_index=to_int(parts[1], "param_index"),
        n_control=to_int(parts[2], "N"),
        n_fe=to_int(parts[3], "N_FE"),
        n_s=to_int(parts[4], "n_s"),
        rk_scheme=parts[5],
        dcs_type=parts[6],
        cross_comp_mode=to_int(parts[7], "cross_comp_mode"),
        source_class=parts[8],
        lifted=lifted_txt == "1",
    )


def format_problem_name(pn: ProblemName) -> str:
    return "_".join([
        pn.base,
        f"{pn.param_index:03d}",
        f"{pn.n_control:03d}",
        f"{pn.n_fe:03d}",
        str(pn.n_s),
        pn.rk_scheme,
        pn.dcs_type,
        str(pn.cross_comp_mode),
        pn.source_class,
        "1" if pn.lifted else "0",
    ])


# ---------------------------------------------------------------------------
# batch execution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MethodSpec:
    kind: RelaxationKind
    mode: SteeringMode
    opts: HomotopyOptions = field(default_factory=HomotopyOptions)

    @property
    def method_id(self) -> str:
        base = f"{self.kind.name}/{self.mode.name}"
        default = HomotopyOptions()
        keys = ("sigma0", "kappa", "eta", "update_rule", "comp_tol",
                "sigma_min", "max_homotopy_iters")
        vals = tuple(getattr(self.opts, k) for k in keys)
        if vals != tuple(getattr(default, k) for k in keys):
            tagsrc = repr(vals).encode()
            base += "#" + hashlib.md5(tagsrc).hexdigest()[:8]
        return base


def parse_method(text: str, opts: Optional[HomotopyOptions] = None) -> MethodSpec:
    """Parse ``kind`` or ``kind/mode`` using the canonical lowercase names."""
    parts = text.strip().split("/")
    if len(parts) == 1:
        kind_name, mode_name = parts[0], "standard"
    elif len(parts) == 2:
        kind_name, mode_name = parts
    else:
        raise ValueError(f"method must be KIND or KIND/MODE, got {text!r}")
    if kind_name not in KIND_NAMES:
        raise ValueError(f"unknown kind {kind_name!r}; choose from {KIND_NAMES}")
    if mode_name not in MODE_NAMES:
        raise ValueError(f"unknown mode {mode_name!r}; choose from {MODE_NAMES}")
    return MethodSpec(RelaxationKind(kind_name), SteeringMode(mode_name),
                      opts or HomotopyOptions())


@dataclass
class RunRecord:
    problem: str
    method: str
    status: str
    failure_reason: str
    objective: float
    comp_residual: float
    feas_residual: float
    wall_time: float
    n_stages: int
    point: list
    strongest: Optional[str] = None
    b_stationary: Optional[str] = None

    @property
    def solved(self) -> bool:
        return self.failure_reason == FailureReason.SOLVED

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self))

    @staticmethod
    def from_json(line: str) -> "RunRecord":
        return RunRecord(**json.loads(line))

    def content_key(self) -> tuple:
        """Everything except wall-time; used by determinism checks."""
        return (self.problem, self.method, self.status, self.failure_reason,
                round(self.objective, 12) if math.isfinite(self.objective) else None,
                self.n_stages, tuple(round(v, 12) for v in self.point),
                self.strongest, self.b_stationary)


def _run_cell(payload) -> RunRecord:
    entry, spec, classify = payload
    result = run_homotopy(entry.problem, spec.kind, spec.mode, entry.start,
                          spec.opts)
    best = entry.best_known_objective if entry.is_ocp else None
    reason = classify_failure(result, best)
    strongest = None
    b_stat = None
    if classify and reason == FailureReason.SOLVED:
        sopts = StationarityOptions(comp_tol=spec.opts.comp_tol)
        report = classify_point(entry.problem, result.point, sopts)
        strongest = report.strongest
        b_stat = report.b_stationary
    return RunRecord(
        problem=entry.problem.name,
        method=spec.method_id,
        status=result.status,
        failure_reason=reason,
        objective=result.objective,
        comp_residual=result.comp_residual,
        feas_residual=result.feas_residual,
        wall_time=result.nlp_wall_time,
        n_stages=result.n_stages,
        point=[float(v) for v in result.point.w],
        strongest=strongest,
        b_stationary=b_stat,
    )


def run_batch(entries, methods, parallelism: int = 1,
              classify: bool = True) -> list:
    """Execute every (entry, method) cell; records come back in
    deterministic (entry, method) order regardless of completion order.
    On solved cells the stationarity classification and the B-check run as
    well and their results are embedded.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    cells = [(entry, spec, classify) for entry in entries for spec in methods]
    if parallelism == 1 or len(cells) <= 1:
        return [_run_cell(c) for c in cells]
    with concurrent.futures.ProcessPoolExecutor(max_workers=parallelism) as ex:
        return list(ex.map(_run_cell, cells))


def write_records(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json())
            fh.write("\n")


def read_records(path) -> list:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(RunRecord.from_json(line))
    return out


# ---------------------------------------------------------------------------
# Dolan-More performance profiles
# ---------------------------------------------------------------------------

@dataclass
class ProfileTable:
    methods: list
    taus: np.ndarray
    rho: dict  # method -> array aligned with taus
    breakpoints: dict  # method -> sorted finite ratios

    def rows(self):
        for method in self.methods:
            for tau, r in zip(self.taus, self.rho[method]):
                yield method, float(tau), float(r)

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("method,tau,rho\n")
            for method, tau, r in self.rows():
                fh.write(f"{method},{tau:.12g},{r:.12g}\n")


def performance_profile(records, metric: str = "wall_time",
                        n_grid: int = 64) -> ProfileTable:
    """rho_s(tau) = share of problems solved by method s within tau times
    the best method's metric; unsolved cells count as +inf, so a problem no
    method solves counts against everyone at every tau."""
    if metric != "wall_time":
        raise ValueError("only the wall_time metric is defined")
    if not records:
        raise ValueError("empty record set")
    problems = list(dict.fromkeys(r.problem for r in records))
    methods = list(dict.fromkeys(r.method for r in records))
    t = {(r.problem, r.method): (max(r.wall_time, 1e-12) if r.solved else math.inf)
         for r in records}
    ratios = {}
    for p in problems:
        tmin = min(t.get((p, s), math.inf) for s in methods)
        for s in methods:
            ts = t.get((p, s), math.inf)
            ratios[(p, s)] = ts / tmin if math.isfinite(ts) and math.isfinite(tmin) else math.inf

    finite = sorted({r for r in ratios.values() if math.isfinite(r)})
    tau_max = max(finite[-1] if finite else 1.0, 2.0)
    grid = np.geomspace(1.0, tau_max, n_grid)
    taus = np.unique(np.concatenate([grid, np.asarray(finite, dtype=float),
                                     [1.0]]))
    n_prob = len(problems)
    rho = {}
    breakpoints = {}
    for s in methods:
        rs = np.array([ratios[(p, s)] for p in problems])
        rho[s] = np.array([(rs <= tau).sum() / n_prob for tau in taus])
        breakpoints[s] = sorted(r for r in rs if math.isfinite(r))
    return ProfileTable(methods=methods, taus=taus, rho=rho,
                        breakpoints=breakpoints)
