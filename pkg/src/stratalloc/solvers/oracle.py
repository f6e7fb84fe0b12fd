"""Exhaustive scan of the integer box, for checking the solver on tiny instances."""

from __future__ import annotations

import itertools
import math
import time

import numpy as np

from ..estimators import Allocation, variance_hats
from ..strata import SurveyFrame
from .bnb import SolveReport
from .problem import FEASIBILITY_TOL, ProblemError, ProblemSpec, allocation_cost, evaluate_constraints

MAX_POINTS = 10 ** 6


def enumerate_oracle(spec: ProblemSpec, frame: SurveyFrame, *, max_points: int = MAX_POINTS) -> SolveReport:
    """Exact optimum by visiting every integer point of the box.

    Points are visited in lexicographic order and only a strictly cheaper point
    replaces the incumbent, so ties resolve to the lexicographically smallest
    allocation.
    """
    spec.validate(frame)
    lo, hi = spec.box(frame)
    size = math.prod(int(b - a + 1) for a, b in zip(lo, hi))
    if size > max_points:
        raise ProblemError(f"box has {size} points, above the oracle limit of {max_points}")
    start = time.perf_counter()
    best, best_cost = None, math.inf
    ranges = [range(int(a), int(b) + 1) for a, b in zip(lo, hi)]
    for point in itertools.product(*ranges):
        n = np.array(point, dtype=float)
        if spec.total_n is not None and int(n.sum()) != spec.total_n:
            continue
        cost = allocation_cost(n, frame)
        if cost >= best_cost:
            continue
        if all(v <= FEASIBILITY_TOL for v in evaluate_constraints(n, spec, frame).values()):
            best, best_cost = n, cost
    wall = time.perf_counter() - start
    name = spec.formulation.value
    if best is None:
        return SolveReport(None, None, {}, False, "infeasible", size, math.inf, math.inf, wall, name,
                           certificate="no point of the box satisfies the constraints")
    return SolveReport(
        allocation=Allocation(tuple(int(v) for v in best)),
        objective_cost=best_cost,
        constraint_values=evaluate_constraints(best, spec, frame),
        feasible=True,
        status="optimal",
        nodes_explored=size,
        relaxation_bound=best_cost,
        lower_bound=best_cost,
        wall_time=wall,
        formulation=name,
        variance_hats=tuple(float(v) for v in variance_hats(best, frame)),
    )
