"""Allocation problems and their deterministic constraint functions.

Every constraint is written as ``g(n) <= 0``:

* ``per_variable_deterministic``: ``Var_j(n) - v0_j`` for each characteristic.
* ``prekopa_chance``: ``E_j(n) + e_p * sqrt(V_j(n)) - v0_j`` for each characteristic,
  with ``E_j``/``V_j`` the diagonal entries of the asymptotic mean/covariance of
  ``vech`` of the estimated covariance matrix and ``e_p`` the normal ``p0``-quantile.
* ``trace_deterministic``: ``tr Cov(n) - tau``.
* ``trace_chance``: ``E_tr(n) + e_p * sqrt(V_tr(n)) - tau``.
* ``det_chance`` (G = 2): ``r_p - tau * |det N(n)|^(1/4)`` with ``r_p`` the
  determinant-law percentile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .. import estimators, matcalc
from ..distributions import det_law_quantile, normal_quantile
from ..estimators import AllocationError, as_allocation
from ..strata import SurveyDataError, SurveyFrame

FEASIBILITY_TOL = 1e-7


class Formulation(str, Enum):
    PER_VARIABLE = "per_variable_deterministic"
    PREKOPA = "prekopa_chance"
    TRACE = "trace_chance"
    TRACE_DETERMINISTIC = "trace_deterministic"
    DET = "det_chance"

    @classmethod
    def parse(cls, text: "str | Formulation") -> "Formulation":
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower().replace("-", "_")
        aliases = {
            "per_variable": cls.PER_VARIABLE, "per_variable_deterministic": cls.PER_VARIABLE,
            "deterministic": cls.PER_VARIABLE,
            "prekopa": cls.PREKOPA, "prekopa_chance": cls.PREKOPA,
            "trace": cls.TRACE, "trace_chance": cls.TRACE,
            "trace_det": cls.TRACE_DETERMINISTIC, "trace_deterministic": cls.TRACE_DETERMINISTIC,
            "det": cls.DET, "det_chance": cls.DET,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown formulation {text!r}") from None


_NEEDS = {
    Formulation.PER_VARIABLE: {"v0"},
    Formulation.PREKOPA: {"v0", "p0"},
    Formulation.TRACE: {"tau", "p0"},
    Formulation.TRACE_DETERMINISTIC: {"tau"},
    Formulation.DET: {"tau", "p0"},
}


class ProblemError(ValueError):
    """A problem specification that does not fit its formulation or frame."""


@dataclass(frozen=True)
class ProblemSpec:
    """What to minimize ``c'n + c0`` subject to.

    ``v0`` entries may be ``inf`` to drop a characteristic's constraint.
    ``bounds`` defaults to ``(2, N_h)`` per stratum.
    """

    formulation: Formulation
    v0: tuple[float, ...] | None = None
    tau: float | None = None
    p0: float | None = None
    total_n: int | None = None
    bounds: tuple[tuple[int, int], ...] | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "formulation", Formulation.parse(self.formulation))
        if self.v0 is not None:
            object.__setattr__(self, "v0", tuple(float(x) for x in self.v0))
        needs = _NEEDS[self.formulation]
        given = {name for name in ("v0", "tau", "p0") if getattr(self, name) is not None}
        if needs - given:
            raise ProblemError(f"{self.formulation.value} needs {sorted(needs - given)}")
        if given - needs:
            raise ProblemError(f"{self.formulation.value} does not use {sorted(given - needs)}")
        if self.v0 is not None and any(not (x > 0) for x in self.v0):
            raise ProblemError(f"v0 entries must be positive (or inf), got {self.v0}")
        if self.tau is not None and not (self.tau > 0):
            raise ProblemError(f"tau must be positive, got {self.tau}")
        if self.p0 is not None and not (0.0 < self.p0 < 1.0):
            raise ProblemError(f"p0 must lie strictly between 0 and 1, got {self.p0}")
        if self.total_n is not None and int(self.total_n) != self.total_n:
            raise ProblemError(f"total_n must be an integer, got {self.total_n}")

    def validate(self, frame: SurveyFrame) -> None:
        f = self.formulation
        if self.v0 is not None and len(self.v0) != frame.g:
            raise ProblemError(f"v0 has {len(self.v0)} entries but the frame has G={frame.g}")
        needs_m4 = (f in (Formulation.PREKOPA, Formulation.TRACE)) and self.p0 != 0.5
        if needs_m4:
            frame.require_fourth_moments()
        if f is Formulation.DET:
            if frame.g != 2:
                raise ProblemError(f"det_chance is only defined for G=2, frame has G={frame.g}")
            frame.require_vec_fourth_moments()
        lo, hi = self.box(frame)
        if np.any(lo > hi):
            raise ProblemError("empty bounds: some lower bound exceeds its upper bound")

    def box(self, frame: SurveyFrame) -> tuple[np.ndarray, np.ndarray]:
        sizes = frame.population_sizes
        if self.bounds is None:
            return np.full(frame.h, 2.0), sizes.copy()
        if len(self.bounds) != frame.h:
            raise ProblemError(f"bounds has {len(self.bounds)} entries but the frame has {frame.h} strata")
        lo = np.array([b[0] for b in self.bounds], dtype=float)
        hi = np.array([b[1] for b in self.bounds], dtype=float)
        if np.any(lo < 2) or np.any(hi > sizes):
            raise ProblemError("bounds must stay within 2 <= n_h <= N_h")
        return lo, hi

    def to_dict(self) -> dict:
        return {
            "formulation": self.formulation.value,
            "v0": None if self.v0 is None else [_json_float(x) for x in self.v0],
            "tau": self.tau,
            "p0": self.p0,
            "total_n": self.total_n,
            "bounds": None if self.bounds is None else [list(b) for b in self.bounds],
        }


def _json_float(x: float):
    return "inf" if math.isinf(x) else x


def _quantile(p0: float) -> float:
    return 0.0 if p0 == 0.5 else normal_quantile(p0)


def constraint_per_variable(n, frame: SurveyFrame, v0: Sequence[float]) -> np.ndarray:
    """``Var_j(n) - v0_j`` for each characteristic (``-inf`` where ``v0_j`` is ``inf``)."""
    v0 = np.asarray(v0, dtype=float)
    return estimators.variance_hats(n, frame) - v0


def constraint_prekopa_chance(n, frame: SurveyFrame, v0: Sequence[float], p0: float) -> np.ndarray:
    """Per-characteristic deterministic equivalent of ``P(Var_j <= v0_j) >= p0``."""
    v0 = np.asarray(v0, dtype=float)
    pos = matcalc.diagonal_positions(frame.g)
    mean = estimators.vech_mean(n, frame)[pos]
    e = _quantile(p0)
    if e == 0.0:
        return mean - v0
    var = np.diag(estimators.vech_cov(n, frame))[pos]
    if np.any(var < 0):
        raise SurveyDataError("negative variance of an estimated variance: fourth moments are inconsistent")
    return mean + e * np.sqrt(var) - v0


def constraint_trace_deterministic(n, frame: SurveyFrame, tau: float) -> float:
    return float(np.sum(estimators.variance_hats(n, frame))) - tau


def constraint_trace_chance(n, frame: SurveyFrame, tau: float, p0: float) -> float:
    """``E_tr + e_p * sqrt(V_tr) - tau``; at ``p0 = 0.5`` the variance term is skipped."""
    e = _quantile(p0)
    mean, var = estimators.trace_moments(n, frame, mean_only=(e == 0.0))
    if e == 0.0:
        return mean - tau
    if var < 0:
        raise SurveyDataError("negative trace variance: fourth moments are inconsistent")
    return mean + e * math.sqrt(var) - tau


def det_chance_matrix(n, frame: SurveyFrame) -> np.ndarray:
    """``N = sum_h w_h^2 n_h/(n_h-1)^2 (m4vec_h - vec s_h vec' s_h)`` (``G^2 x G^2``)."""
    frame.require_vec_fourth_moments()
    arr = as_allocation(n, frame)
    coef = estimators.weights(arr, frame) ** 2 * arr / (arr - 1.0) ** 2
    g2 = frame.g ** 2
    out = np.zeros((g2, g2))
    for c, s in zip(coef, frame.strata):
        v = matcalc.vec(s.covariance)
        out += c * (s.fourth_moment_vec - np.outer(v, v))
    return out


def constraint_det_chance(n, frame: SurveyFrame, tau: float, p0: float) -> float:
    """``r_p - tau * |det N|^(1/4)``; ``<= 0`` means satisfied."""
    if frame.g != 2:
        raise ProblemError(f"det_chance is only defined for G=2, frame has G={frame.g}")
    big = det_chance_matrix(n, frame)
    return det_law_quantile(p0) - tau * abs(matcalc.det(big)) ** 0.25


def evaluate_constraints(n, spec: ProblemSpec, frame: SurveyFrame) -> dict[str, float]:
    """Every constraint value of ``spec`` at ``n``, keyed by a readable name."""
    labels = frame.characteristic_labels
    f = spec.formulation
    if f is Formulation.PER_VARIABLE:
        vals = constraint_per_variable(n, frame, spec.v0)
        return {f"var[{lab}]": float(v) for lab, v, b in zip(labels, vals, spec.v0) if math.isfinite(b)}
    if f is Formulation.PREKOPA:
        v0 = np.array(spec.v0)
        vals = constraint_prekopa_chance(n, frame, np.where(np.isfinite(v0), v0, 0.0), spec.p0)
        return {f"prekopa[{lab}]": float(v) for lab, v, b in zip(labels, vals, spec.v0) if math.isfinite(b)}
    if f is Formulation.TRACE_DETERMINISTIC:
        return {"trace": constraint_trace_deterministic(n, frame, spec.tau)}
    if f is Formulation.TRACE:
        return {"trace_chance": constraint_trace_chance(n, frame, spec.tau, spec.p0)}
    return {"det_chance": constraint_det_chance(n, frame, spec.tau, spec.p0)}


def allocation_cost(n, frame: SurveyFrame) -> float:
    arr = np.asarray(n, dtype=float)
    return math.fsum(list(frame.costs * arr) + [frame.fixed_cost])


@dataclass(frozen=True)
class ConstraintReport:
    allocation: tuple[int, ...]
    cost: float
    constraint_values: dict[str, float]
    feasible: bool
    variance_hats: tuple[float, ...]
    total_n: int

    @property
    def slacks(self) -> dict[str, float]:
        return {k: -v for k, v in self.constraint_values.items()}

    def to_dict(self) -> dict:
        return {
            "allocation": list(self.allocation),
            "cost": self.cost,
            "constraint_values": dict(self.constraint_values),
            "slacks": self.slacks,
            "feasible": self.feasible,
            "variance_hats": list(self.variance_hats),
            "total_n": self.total_n,
        }


def check_allocation(n, spec: ProblemSpec, frame: SurveyFrame,
                     tol: float = FEASIBILITY_TOL) -> ConstraintReport:
    """Evaluate every constraint of ``spec`` at ``n`` without solving anything.

    Raises :class:`~stratalloc.estimators.AllocationError` when ``n`` breaks
    ``2 <= n_h <= N_h``.
    """
    spec.validate(frame)
    arr = as_allocation(n, frame)
    values = evaluate_constraints(arr, spec, frame)
    lo, hi = spec.box(frame)
    feasible = all(v <= tol for v in values.values()) and bool(np.all(arr >= lo) and np.all(arr <= hi))
    if spec.total_n is not None:
        feasible = feasible and int(arr.sum()) == spec.total_n
    return ConstraintReport(
        allocation=tuple(int(x) for x in arr),
        cost=allocation_cost(arr, frame),
        constraint_values=values,
        feasible=feasible,
        variance_hats=tuple(float(x) for x in estimators.variance_hats(arr, frame)),
        total_n=int(arr.sum()),
    )


__all__ = [
    "AllocationError", "ConstraintReport", "FEASIBILITY_TOL", "Formulation", "ProblemError",
    "ProblemSpec", "allocation_cost", "check_allocation", "constraint_det_chance",
    "constraint_per_variable", "constraint_prekopa_chance", "constraint_trace_chance",
    "constraint_trace_deterministic", "det_chance_matrix", "evaluate_constraints",
]
