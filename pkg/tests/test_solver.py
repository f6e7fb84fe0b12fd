import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stratalloc.estimators import trace_moments, variance_hats
from stratalloc.solvers import (ProblemError, ProblemSpec, SolveReport, check_allocation, cost_lattice,
                                enumerate_oracle, evaluate_constraints, solve)
from stratalloc.strata import StratumSummary, SurveyFrame, frame_from_strata, humboldt

from .conftest import random_frame


def random_instance(rng: np.random.Generator):
    """Random tiny problem whose thresholds sit between the census and the n_h = 2 corner."""
    kind = rng.choice(["per_variable", "prekopa", "trace-det", "trace", "det"], p=[0.25, 0.2, 0.2, 0.25, 0.1])
    frame = random_frame(rng, full_rank_vec=kind == "det")
    corner = [2] * frame.h
    u = float(rng.uniform(0.02, 1.2))
    p0 = float(rng.choice([0.5, 0.6, 0.8, 0.95]))
    if kind in ("per_variable", "prekopa"):
        v0 = tuple(u * v if v > 0 else 1.0 for v in variance_hats(corner, frame))
        spec = ProblemSpec(str(kind), v0=v0, p0=p0 if kind == "prekopa" else None)
    elif kind == "det":
        spec = ProblemSpec("det", tau=float(rng.uniform(0.5, 50.0)), p0=p0)
    else:
        mean, _ = trace_moments(corner, frame, mean_only=True)
        spec = ProblemSpec(str(kind), tau=u * mean if mean > 0 else 1.0, p0=p0 if kind == "trace" else None)
    if rng.random() < 0.2:
        lo = 2 * frame.h
        hi = int(frame.population_sizes.sum())
        spec = ProblemSpec(spec.formulation, v0=spec.v0, tau=spec.tau, p0=spec.p0,
                           total_n=int(rng.integers(lo, hi + 1)))
    return spec, frame


def test_humboldt_per_variable():
    frame = humboldt()
    rep = solve(ProblemSpec("per_variable", v0=(6, math.inf)), frame)
    assert rep.status == "optimal" and rep.feasible
    assert rep.objective_cost <= 2225.5
    assert check_allocation(rep.allocation, ProblemSpec("per_variable", v0=(6, math.inf)), frame).feasible
    assert rep.relaxation_bound <= rep.objective_cost


def test_humboldt_trace_deterministic():
    frame = humboldt()
    spec = ProblemSpec("trace-det", tau=6000)
    rep = solve(spec, frame)
    assert rep.feasible and rep.objective_cost <= 2014.0 + 1e-6
    assert check_allocation(rep.allocation, spec, frame).feasible


def test_two_strata_of_five_against_oracle():
    frame = frame_from_strata([
        StratumSummary(5, 1.0, [[4.0, 1.0], [1.0, 2.0]]),
        StratumSummary(5, 2.0, [[1.0, 0.0], [0.0, 3.0]]),
    ])
    for v0 in [(0.05, 0.05), (0.1, 0.2), (0.2, 0.3), (1.0, 1.0), (1e-9, 1e-9)]:
        spec = ProblemSpec("per_variable", v0=v0)
        got, want = solve(spec, frame), enumerate_oracle(spec, frame)
        assert want.nodes_explored == 16
        assert got.feasible == want.feasible
        assert got.objective_cost == want.objective_cost


@pytest.mark.parametrize("big,s2,v", [(50, 4.0, 0.1), (1000, 9.0, 0.05), (7, 1.0, 0.01), (300, 2.5, 1e-4)])
def test_single_stratum_closed_form(big, s2, v):
    # with W = 1: s2/n - s2/N <= v  <=>  n >= s2 / (v + s2/N)
    frame = frame_from_strata([StratumSummary(big, 1.0, [[s2]])])
    n_star = max(2, math.ceil(s2 / (v + s2 / big) - 1e-9))
    while s2 / n_star - s2 / big > v + 1e-7:
        n_star += 1
    rep = solve(ProblemSpec("per_variable", v0=(v,)), frame)
    assert rep.allocation.n == (min(n_star, big),)
    if big <= 1000:
        assert enumerate_oracle(ProblemSpec("per_variable", v0=(v,)), frame).allocation.n == rep.allocation.n


def test_cost_scaling():
    frame = humboldt()
    spec = ProblemSpec("per_variable", v0=(6, 6000))
    base = solve(spec, frame)
    for alpha in (0.5, 3.0):
        strata = [StratumSummary(s.population_size, alpha * s.unit_cost, s.covariance) for s in frame.strata]
        scaled = solve(spec, SurveyFrame(tuple(strata), labels=frame.labels))
        assert scaled.objective_cost == pytest.approx(alpha * base.objective_cost, rel=1e-12)


@given(st.integers(0, 10 ** 6), st.sampled_from([0.5, 2.0, 7.0]))
def test_cost_scaling_small(seed, alpha):
    spec, frame = random_instance(np.random.default_rng(seed))
    strata = [StratumSummary(s.population_size, alpha * s.unit_cost, s.covariance, s.fourth_moment_vech,
                             s.fourth_moment_vec) for s in frame.strata]
    scaled = SurveyFrame(tuple(strata))
    a, b = enumerate_oracle(spec, frame), enumerate_oracle(spec, scaled)
    assert a.feasible == b.feasible
    if a.feasible:
        assert b.objective_cost == pytest.approx(alpha * a.objective_cost, rel=1e-12)
        assert solve(spec, scaled).objective_cost == pytest.approx(b.objective_cost, rel=1e-12)


class TestInfeasible:
    def test_tiny_tau_forces_census(self, rng):
        frame = random_frame(rng, h=2)
        census = tuple(int(b) for b in frame.population_sizes)
        for spec in (ProblemSpec("trace-det", tau=1e-12), ProblemSpec("trace", tau=1e-12, p0=0.9)):
            assert solve(spec, frame).allocation.n == census == enumerate_oracle(spec, frame).allocation.n

    def test_tiny_tau_with_total_n(self, rng):
        frame = random_frame(rng, h=2)
        total = int(frame.population_sizes.sum()) - 1
        spec = ProblemSpec("trace-det", tau=1e-12, total_n=total)
        assert solve(spec, frame).status == "infeasible"
        assert enumerate_oracle(spec, frame).status == "infeasible"

    def test_total_n_too_small(self):
        rep = solve(ProblemSpec("per_variable", v0=(6, 6000), total_n=500), humboldt())
        assert rep.status == "infeasible" and not rep.feasible and rep.certificate
        assert rep.allocation is None

    def test_total_n_out_of_box(self):
        rep = solve(ProblemSpec("per_variable", v0=(6, 6000), total_n=10), humboldt())
        assert rep.status == "infeasible"

    def test_nonpositive_threshold_rejected(self):
        with pytest.raises(ProblemError):
            ProblemSpec("per_variable", v0=(-1.0, 1.0))
        with pytest.raises(ProblemError):
            ProblemSpec("trace-det", tau=0.0)

    def test_det_with_gaussian_moments(self, rng):
        # N is singular for gaussian (or any data-derived) fourth moments
        frame = random_frame(rng, h=2)
        rep = solve(ProblemSpec("det", tau=10.0, p0=0.5), frame)
        assert rep.status == "infeasible"


def test_total_n_respected():
    spec = ProblemSpec("per_variable", v0=(6, 6000), total_n=1000)
    rep = solve(spec, humboldt())
    assert rep.feasible and sum(rep.allocation.n) == 1000


def test_determinism_and_json_round_trip():
    spec = ProblemSpec("trace-det", tau=6000)
    a, b = solve(spec, humboldt()), solve(spec, humboldt())
    assert a.allocation == b.allocation and a.nodes_explored == b.nodes_explored
    doc = json.loads(json.dumps(a.to_dict()))
    back = SolveReport.from_dict(doc)
    assert back.allocation == a.allocation and back.objective_cost == a.objective_cost
    assert back.constraint_values == a.constraint_values and back.lower_bound == a.lower_bound


def test_infinite_bound_serializes():
    rep = solve(ProblemSpec("per_variable", v0=(6, 6000), total_n=500), humboldt())
    doc = json.loads(json.dumps(rep.to_dict()))
    assert doc["relaxation_bound"] == "inf"
    assert SolveReport.from_dict(doc).relaxation_bound == math.inf


def test_node_limit():
    rep = solve(ProblemSpec("per_variable", v0=(6, 6000)), humboldt(), node_limit=1)
    assert rep.status in ("limit", "no_solution", "optimal")
    if rep.status == "limit":
        assert rep.feasible and rep.lower_bound <= rep.objective_cost


def test_oracle_box_limit():
    with pytest.raises(ProblemError, match="oracle limit"):
        enumerate_oracle(ProblemSpec("per_variable", v0=(6, 6000)), humboldt())


def test_cost_lattice():
    assert cost_lattice([2.5, 3.0, 1.5]) == 0.5
    assert cost_lattice([1.0, 2.0], fixed=7.0) == 1.0
    assert cost_lattice([math.pi, 1.0]) is None


def test_random_oracle_sweep():
    rng = np.random.default_rng(777)
    for _ in range(60):
        spec, frame = random_instance(rng)
        got, want = solve(spec, frame), enumerate_oracle(spec, frame)
        assert got.feasible == want.feasible, (spec, frame)
        if want.feasible:
            assert got.objective_cost == want.objective_cost
            assert got.relaxation_bound <= got.objective_cost + 1e-9
            assert all(v <= 1e-7 for v in evaluate_constraints(got.allocation.n, spec, frame).values())
