"""Allocation problems and their integer solvers."""

from .bnb import SolveReport, cost_lattice, solve
from .oracle import enumerate_oracle
from .problem import (FEASIBILITY_TOL, ConstraintReport, Formulation, ProblemError, ProblemSpec,
                      allocation_cost, check_allocation, constraint_det_chance, constraint_per_variable,
                      constraint_prekopa_chance, constraint_trace_chance, constraint_trace_deterministic,
                      det_chance_matrix, evaluate_constraints)

__all__ = [
    "ConstraintReport", "FEASIBILITY_TOL", "Formulation", "ProblemError", "ProblemSpec", "SolveReport",
    "allocation_cost", "check_allocation", "constraint_det_chance", "constraint_per_variable",
    "constraint_prekopa_chance", "constraint_trace_chance", "constraint_trace_deterministic",
    "cost_lattice", "det_chance_matrix", "enumerate_oracle", "evaluate_constraints", "solve",
]
