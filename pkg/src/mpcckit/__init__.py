"""mpcckit: relaxation-homotopy solvers, stationarity classification, and
benchmarking for mathematical programs with complementarity constraints."""

from .expr import (ExprNode, VectorFunction, evaluate, jacobian,
                   hessian_lagrangian, var, par, num, to_nested, from_nested)
from .model import (MpccProblem, IndexSets, Point, comp_residual,
                    feasibility_residual, index_sets, lift_vertical)
from .nlp import SmoothNlp, SolverOptions, KktSolution, solve_nlp, solve_lp
from .relaxations import (RelaxationKind, SteeringMode, RelaxedNlp, phi,
                          phi_grad, calibrate_sigma, build_relaxed_nlp,
                          SCHOLTES, FB, NR, CCK, LIN_FUKUSHIMA, SU_POLY,
                          SU_SINE, KADRANI, KANZOW_SCHWARTZ, DIRECT,
                          ELL1_PENALTY, STANDARD, ELL_INF, ELL_1)
from .homotopy import (HomotopyOptions, HomotopyResult, update_sigma,
                       run_homotopy, classify_failure, FailureReason)
from .stationarity import (StationarityReport, StationarityOptions, TnlpSpec,
                           build_tnlp, build_branch_nlp, classify_point,
                           check_b_stationarity)
from .corpus import CorpusEntry, corpus
from . import harness

__version__ = "0.1.0"
