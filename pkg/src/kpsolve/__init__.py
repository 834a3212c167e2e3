"""Distributed-style dual solvers for knapsack problems with hierarchical local constraints."""

from .candidates import CandidateEmission, intersection_candidates, quick_select, scd_map_general, scd_map_sparse
from .engine import ShardPlan, checkpoint, map_reduce, resume
from .genbench import GenSpec, Metrics, brute_force_optimum, evaluate, generate
from .model import (
    Assignment,
    GroupBlock,
    Instance,
    LocalConstraintSet,
    Multipliers,
    load_instance,
    save_instance,
    validate_instance,
)
from .solver import DDConfig, SCDConfig, SolveReport, dd_solve, dual_value, postprocess, presolve, scd_solve
from .subproblem import adjusted_profits, group_dual_value, solve_group_exhaustive, solve_group_greedy

__version__ = "0.1.0"
