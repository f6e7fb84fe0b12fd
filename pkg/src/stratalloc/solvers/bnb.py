"""Branch and bound over integer allocations.

Node relaxation
    Each constraint is replaced on the node's box by one or more separable
    convex under-estimators (see :mod:`._terms`). The relaxed problem
    ``min c'x  s.t.  cuts(x) <= tol, sum(x) = T, lo <= x <= hi`` is solved through
    its Lagrangian dual. Any multiplier vector gives a valid lower bound (weak
    duality), so the bound never depends on how well the dual was maximized.
    The dual's inner minimization separates by stratum; each piece is a
    one-dimensional convex function minimized by safeguarded Newton, and its
    integer minimizer is the better neighbour of the continuous one.

Search
    Best-bound node order, most-fractional branching (ties broken by the
    stratum's ``W_h^2 max_j s_hj / x_h^2`` sensitivity), rounding plus greedy
    trimming for incumbents, pruning on the cost lattice when unit costs share a
    common step.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.optimize import brentq, minimize

from ..estimators import Allocation
from ..strata import SurveyFrame
from ._terms import Cut, N_BASIS, basis, build_terms, weighted_derivatives
from .problem import (FEASIBILITY_TOL, ProblemSpec, allocation_cost, evaluate_constraints)

INTEGER_TOL = 1e-6
MAX_CUT_ROUNDS = 6


@dataclass
class SolveReport:
    allocation: Allocation | None
    objective_cost: float | None
    constraint_values: dict[str, float]
    feasible: bool
    status: str
    nodes_explored: int
    relaxation_bound: float
    lower_bound: float
    wall_time: float
    formulation: str
    variance_hats: tuple[float, ...] | None = None
    certificate: str | None = None

    @property
    def slacks(self) -> dict[str, float]:
        return {k: -v for k, v in self.constraint_values.items()}

    @property
    def gap(self) -> float:
        if self.objective_cost is None:
            return math.inf
        return self.objective_cost - self.lower_bound

    def to_dict(self) -> dict:
        def num(x):
            if x is None:
                return None
            return "inf" if x == math.inf else ("-inf" if x == -math.inf else x)

        return {
            "formulation": self.formulation,
            "status": self.status,
            "feasible": self.feasible,
            "allocation": None if self.allocation is None else list(self.allocation.n),
            "objective_cost": self.objective_cost,
            "constraint_values": dict(self.constraint_values),
            "slacks": self.slacks,
            "variance_hats": None if self.variance_hats is None else list(self.variance_hats),
            "nodes_explored": self.nodes_explored,
            "relaxation_bound": num(self.relaxation_bound),
            "lower_bound": num(self.lower_bound),
            "wall_time": self.wall_time,
            "certificate": self.certificate,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SolveReport":
        """Inverse of :meth:`to_dict` (derived ``slacks`` are ignored)."""
        def num(x):
            return float(x) if isinstance(x, str) else x

        alloc = doc.get("allocation")
        hats = doc.get("variance_hats")
        return cls(
            allocation=None if alloc is None else Allocation(tuple(alloc)),
            objective_cost=doc.get("objective_cost"),
            constraint_values=dict(doc.get("constraint_values", {})),
            feasible=bool(doc["feasible"]),
            status=doc["status"],
            nodes_explored=int(doc["nodes_explored"]),
            relaxation_bound=num(doc["relaxation_bound"]),
            lower_bound=num(doc["lower_bound"]),
            wall_time=float(doc["wall_time"]),
            formulation=doc["formulation"],
            variance_hats=None if hats is None else tuple(hats),
            certificate=doc.get("certificate"),
        )


def cost_lattice(costs, fixed: float = 0.0) -> float | None:
    """Common step of all attainable objective values, or ``None`` if there is none."""
    nums, dens = [], []
    for c in costs:
        fr = Fraction(float(c)).limit_denominator(10 ** 4)
        if abs(float(fr) - c) > 1e-12 * max(1.0, abs(c)):
            return None
        if fr != 0:
            nums.append(fr.numerator)
            dens.append(fr.denominator)
    if not nums:
        return None
    den = math.lcm(*dens)
    num = math.gcd(*(n * (den // d) for n, d in zip(nums, dens)))
    return num / den


# ---------------------------------------------------------------- relaxation


class _Relaxation:
    """Lagrangian dual of one node's separable convex relaxation."""

    def __init__(self, costs, lo, hi, big, cuts: list[Cut], total, tol):
        self.c_scale = float(np.max(costs)) if np.max(costs) > 0 else 1.0
        self.c = costs / self.c_scale
        self.lo, self.hi, self.big = lo, hi, big
        self.total = total
        lo_vals = basis(lo, big)
        self.scales = np.array([max(abs(ct.const), float(np.sum(ct.coef * lo_vals)), 1e-300) for ct in cuts])
        self.coef = np.stack([ct.coef for ct in cuts]) / self.scales[:, None, None] if cuts else \
            np.zeros((0, N_BASIS, lo.size))
        self.rhs = np.array([ct.const - tol for ct in cuts]) / self.scales if cuts else np.zeros(0)
        self.m = len(cuts)
        self._warm = None

    def _split(self, z):
        lam = z[: self.m]
        mu = z[self.m] if self.total is not None else 0.0
        return lam, mu

    def inner(self, z) -> np.ndarray:
        """Continuous minimizer of the Lagrangian, stratum by stratum."""
        lam, mu = self._split(z)
        a0 = self.c + mu
        amat = np.einsum("k,kbh->bh", lam, self.coef)
        lo, hi, big = self.lo, self.hi, self.big
        d_lo = a0 + weighted_derivatives(lo, big, amat)[0]
        d_hi = a0 + weighted_derivatives(hi, big, amat)[0]
        x = np.where(d_lo >= 0, lo, hi)
        free = (d_lo < 0) & (d_hi > 0)
        if not np.any(free):
            return x
        if self._warm is not None:
            guess = self._warm
        else:
            # root of a0 = (a1 + a2 + ...)/x^2, a rough start
            with np.errstate(divide="ignore", invalid="ignore"):
                guess = 1.0 + np.sqrt(np.sum(amat, axis=0) / np.where(a0 > 0, a0, np.inf))
        a, b = lo.copy(), hi.copy()
        x = np.where(free, np.clip(guess, lo, hi), x)
        x = np.where(free & ((x <= lo) | (x >= hi)), 0.5 * (lo + hi), x)
        for _ in range(100):
            d1, d2 = weighted_derivatives(x, big, amat)
            d = a0 + d1
            a = np.where(free & (d < 0), x, a)
            b = np.where(free & (d > 0), x, b)
            with np.errstate(divide="ignore", invalid="ignore"):
                step = np.where(d2 > 0, x - d / d2, 0.5 * (a + b))
            step = np.where((step <= a) | (step >= b) | ~np.isfinite(step), 0.5 * (a + b), step)
            new = np.where(free & (d != 0), step, x)
            done = (np.abs(new - x) <= 1e-11 * (1.0 + np.abs(x))) | (b - a <= 1e-11 * (1.0 + b))
            x = new
            if np.all(done | ~free):
                break
        self._warm = x
        return x

    def _lagrangian(self, z, x) -> float:
        lam, mu = self._split(z)
        f = basis(x, self.big)
        val = float(np.sum(self.c * x)) + float(np.sum(np.einsum("k,kbh->bh", lam, self.coef) * f))
        val += float(lam @ self.rhs)
        if self.total is not None:
            val += mu * (float(np.sum(x)) - self.total)
        return val

    def dual(self, z):
        x = self.inner(z)
        lam, mu = self._split(z)
        f = basis(x, self.big)
        g = np.einsum("kbh,bh->k", self.coef, f) + self.rhs
        grad = list(g)
        if self.total is not None:
            grad.append(float(np.sum(x)) - self.total)
        return self._lagrangian(z, x), np.array(grad), x

    def integer_dual(self, z, x) -> float:
        """Lagrangian value with the inner problem restricted to integers."""
        lam, mu = self._split(z)
        amat = np.einsum("k,kbh->bh", lam, self.coef)
        a0 = self.c + mu
        fl = np.clip(np.floor(x + 1e-9), self.lo, self.hi)
        ce = np.clip(np.ceil(x - 1e-9), self.lo, self.hi)
        vf = a0 * fl + np.sum(amat * basis(fl, self.big), axis=0)
        vc = a0 * ce + np.sum(amat * basis(ce, self.big), axis=0)
        val = float(np.sum(np.minimum(vf, vc))) + float(lam @ self.rhs)
        if self.total is not None:
            val -= mu * self.total
        return val

    def _finish(self, z, x):
        val = self._lagrangian(z, x)
        best = max(val, self.integer_dual(z, x))
        if not np.isfinite(best):
            best = -math.inf
        return best * self.c_scale, x, z

    def _solve_scalar(self, z0):
        """One multiplier: the dual gradient is nonincreasing, so find its root by bracketing."""
        free = self.m == 0  # the only multiplier belongs to the equality

        best = (-math.inf, None)

        def track(v):
            val, g, x = self.dual(np.array([v]))
            nonlocal best
            if val > best[0]:
                best = (val, v)
            return float(g[0])

        if not free and track(0.0) <= 0.0:
            a, b = 0.0, 0.0
        else:
            start = float(abs(z0[0])) if z0 is not None and z0[0] != 0 else 1.0
            a = b = start if not free else float(z0[0]) if z0 is not None else 0.0
            step = max(1.0, abs(a))
            ga = track(a)
            if ga > 0:
                b = a + step if free else a * 4.0
                while track(b) > 0:
                    a, b = b, (b + 2 * step if free else b * 4.0)
                    step *= 2
                    if abs(b) > 1e30:
                        break
            elif ga < 0:
                b = a
                a = a - step if free else a / 4.0
                while track(a) < 0 and (free or a > 1e-300):
                    b, a = a, (a - 2 * step if free else a / 4.0)
                    step *= 2
                    if abs(a) > 1e30:
                        break
                if not free and a <= 1e-300:
                    a = 0.0
            else:
                b = a
            if b != a and abs(b) <= 1e30 and abs(a) <= 1e30:
                ga, gb = track(a), track(b)
                if ga > 0 > gb:
                    try:
                        brentq(track, a, b, xtol=1e-14 * max(1.0, abs(b)), rtol=1e-12, maxiter=100)
                    except (RuntimeError, ValueError):
                        pass
        v = best[1] if best[1] is not None else 0.0
        z = np.array([v])
        return self._finish(z, self.inner(z))

    def solve(self, z0=None):
        nz = self.m + (1 if self.total is not None else 0)
        if nz == 0:
            x = self.inner(np.zeros(0))
            return self._lagrangian(np.zeros(0), x) * self.c_scale, x, np.zeros(0)
        if nz == 1:
            return self._solve_scalar(z0)
        z0 = np.ones(nz) if z0 is None else np.asarray(z0, dtype=float)
        bounds = [(0.0, None)] * self.m + ([(None, None)] if self.total is not None else [])

        def neg(z):
            val, grad, _ = self.dual(z)
            return -val, -grad

        res = minimize(neg, z0, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": 100, "ftol": 1e-11, "gtol": 1e-9})
        z = np.asarray(res.x, dtype=float)
        z[: self.m] = np.maximum(z[: self.m], 0.0)
        return self._finish(z, self.inner(z))


# ---------------------------------------------------------------- search


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    lo: np.ndarray = field(compare=False)
    hi: np.ndarray = field(compare=False)
    x: np.ndarray = field(compare=False)
    z: np.ndarray | None = field(compare=False, default=None)


class _Search:
    def __init__(self, spec: ProblemSpec, frame: SurveyFrame, node_limit, time_limit):
        spec.validate(frame)
        self.spec, self.frame = spec, frame
        self.terms = build_terms(spec, frame)
        self.costs = frame.costs
        self.c0 = frame.fixed_cost
        self.big = frame.population_sizes
        self.lo0, self.hi0 = spec.box(frame)
        self.total = spec.total_n
        self.tol = FEASIBILITY_TOL
        self.node_limit, self.time_limit = node_limit, time_limit
        self.lattice = cost_lattice(self.costs, self.c0)
        self.sensitivity = frame.relative_sizes ** 2 * np.max(frame.variances, axis=1)
        self.incumbent: np.ndarray | None = None
        self.incumbent_cost = math.inf
        self.nodes = 0
        self.seq = 0
        self.monotone_down = all(t.monotone == -1 for t in self.terms)
        self.start = time.perf_counter()

    # -- helpers
    def cost(self, n) -> float:
        return math.fsum(list(self.costs * n) + [self.c0])

    def feasible(self, n) -> bool:
        if self.total is not None and int(round(np.sum(n))) != self.total:
            return False
        return all(t.value(n) <= self.tol for t in self.terms)

    def offer(self, n) -> None:
        n = np.asarray(n, dtype=float)
        if np.any(n < self.lo0) or np.any(n > self.hi0):
            return
        c = self.cost(n)
        if c < self.incumbent_cost and self.feasible(n):
            self.incumbent, self.incumbent_cost = n.copy(), c

    def prunable(self, bound: float) -> bool:
        if self.incumbent is None:
            return False
        eps = 1e-9 * max(1.0, abs(self.incumbent_cost))
        if self.lattice is not None:
            steps = math.ceil((bound - self.c0) / self.lattice - 1e-7)
            bound = self.c0 + steps * self.lattice
        return bound >= self.incumbent_cost - eps

    # -- relaxation
    def relax(self, lo, hi, z0=None, ref=None):
        """Return ``(bound, x, z)`` or ``None`` when the box is provably infeasible."""
        if self.total is not None and not (lo.sum() <= self.total <= hi.sum()):
            return None
        for t in self.terms:
            corner = hi if t.monotone == -1 else lo if t.monotone == 1 else None
            if corner is not None and t.value(corner) > self.tol:
                return None
        refs = [None if ref is None else np.clip(ref, lo, hi)] * len(self.terms)
        bound, x, z = -math.inf, None, None
        for _ in range(MAX_CUT_ROUNDS):
            cuts = [t.cut(lo, hi, r) for t, r in zip(self.terms, refs)]
            cuts = [c for c in cuts if c is not None]
            rel = _Relaxation(self.costs, lo, hi, self.big, cuts, self.total, self.tol)
            nz = rel.m + (self.total is not None)
            b, x_new, z_new = rel.solve(z0 if z0 is not None and len(z0) == nz else None)
            if b + self.c0 > bound or x is None:
                bound, x, z = max(bound, b + self.c0), x_new, z_new
            z0 = z_new
            # refine only the sqrt terms the relaxed point still violates
            again = False
            for i, t in enumerate(self.terms):
                if t.refinable and t.value(x_new) > self.tol:
                    refs[i] = x_new
                    again = True
            if not again:
                break
        if bound > self.cost(hi) + 1e-9 * max(1.0, abs(bound)):
            return None  # dual value above every attainable cost
        return bound, x, z

    # -- incumbents
    def round_and_trim(self, x, lo, hi) -> None:
        if self.total is not None:
            self.offer(self._round_to_total(x, lo, hi))
            return
        if not self.monotone_down:
            self.offer(np.clip(np.round(x), lo, hi))
            self.offer(np.clip(np.ceil(x - INTEGER_TOL), lo, hi))
            return
        n = np.clip(np.ceil(x - INTEGER_TOL), lo, hi)
        if not self.feasible(n):
            if not self.feasible(hi):
                return
            a, b = 0.0, 1.0
            for _ in range(40):
                t = 0.5 * (a + b)
                cand = np.clip(np.ceil(n + t * (hi - n) - 1e-12), lo, hi)
                if self.feasible(cand):
                    b = t
                else:
                    a = t
            n = np.clip(np.ceil(n + b * (hi - n) - 1e-12), lo, hi)
            if not self.feasible(n):
                n = hi.copy()
        if self.cost(n) >= self.incumbent_cost and self.incumbent is not None:
            return
        for h in sorted(range(n.size), key=lambda i: (-self.costs[i], i)):
            a, b = lo[h], n[h]  # b feasible
            while b - a > 0:
                mid = math.floor(0.5 * (a + b))
                trial = n.copy()
                trial[h] = mid
                if self.feasible(trial):
                    b = mid
                else:
                    a = mid + 1
            n[h] = b
        self.offer(n)

    def _round_to_total(self, x, lo, hi):
        n = np.clip(np.floor(x + INTEGER_TOL), lo, hi)
        short = int(self.total - n.sum())
        frac = x - n
        order = sorted(range(n.size), key=lambda i: (-frac[i], i))
        step = 1 if short > 0 else -1
        while short != 0:
            moved = False
            for h in (order if step > 0 else order[::-1]):
                if short == 0:
                    break
                if lo[h] <= n[h] + step <= hi[h]:
                    n[h] += step
                    short -= step
                    moved = True
            if not moved:
                break
        return n

    # -- branching
    def branch_variable(self, node: _Node) -> int | None:
        x, lo, hi = node.x, node.lo, node.hi
        frac = np.abs(x - np.round(x))
        cands = [h for h in range(x.size) if frac[h] > INTEGER_TOL and lo[h] < hi[h]]
        if cands:
            sens = self.sensitivity / np.maximum(x, 1.0) ** 2
            return max(cands, key=lambda h: (round(float(frac[h]), 9), float(sens[h]), -h))
        open_ = [h for h in range(x.size) if lo[h] < hi[h]]
        if not open_:
            return None
        return max(open_, key=lambda h: (hi[h] - lo[h], -h))

    def children(self, node: _Node, h: int):
        x = node.x[h]
        split = math.floor(x + INTEGER_TOL) if abs(x - round(x)) > INTEGER_TOL else round(x)
        if abs(x - round(x)) <= INTEGER_TOL:
            # integral coordinate: peel it off as its own branch
            split = min(max(split, node.lo[h]), node.hi[h] - 1)
        left_hi = node.hi.copy()
        left_hi[h] = split
        right_lo = node.lo.copy()
        right_lo[h] = split + 1
        return (node.lo, left_hi), (right_lo, node.hi)

    def make_node(self, lo, hi, z0=None, ref=None) -> _Node | None:
        out = self.relax(lo, hi, z0, ref)
        if out is None:
            return None
        bound, x, z = out
        self.seq += 1
        node = _Node(bound, self.seq, lo, hi, x, z)
        if np.all(lo == hi):
            self.offer(lo)
            return None
        xi = np.round(x)
        if np.all(np.abs(x - xi) <= INTEGER_TOL):
            self.offer(np.clip(xi, lo, hi))
        self.round_and_trim(x, lo, hi)
        if self.prunable(bound):
            return None
        return node

    def out_of_budget(self) -> bool:
        if self.nodes >= self.node_limit:
            return True
        return self.time_limit is not None and time.perf_counter() - self.start > self.time_limit

    def run(self) -> SolveReport:
        root = self.make_node(self.lo0.copy(), self.hi0.copy())
        root_bound = root.bound if root is not None else (
            self.incumbent_cost if self.incumbent is not None else math.inf)
        heap = [] if root is None else [root]
        status = "optimal"
        while heap:
            if self.out_of_budget():
                status = "limit"
                break
            node = heapq.heappop(heap)
            if self.prunable(node.bound):
                continue
            self.nodes += 1
            h = self.branch_variable(node)
            if h is None:
                continue
            for lo, hi in self.children(node, h):
                child = self.make_node(lo.copy(), hi.copy(), node.z, node.x)
                if child is not None:
                    heapq.heappush(heap, child)
        open_bound = min((n.bound for n in heap if not self.prunable(n.bound)), default=math.inf)
        return self.report(status, root_bound, open_bound)

    def report(self, status, root_bound, open_bound) -> SolveReport:
        wall = time.perf_counter() - self.start
        name = self.spec.formulation.value
        if self.incumbent is None:
            final = "infeasible" if status == "optimal" else "no_solution"
            cert = None
            if final == "infeasible":
                cert = ("relaxation infeasible on the whole box: constraint(s) violated at the best corner "
                        "or Lagrangian bound exceeds every attainable cost")
            return SolveReport(None, None, {}, False, final, self.nodes, root_bound, math.inf, wall, name,
                               certificate=cert)
        n = self.incumbent
        lower = min(self.incumbent_cost, open_bound)
        if status == "optimal":
            lower = self.incumbent_cost
        values = evaluate_constraints(n, self.spec, self.frame)
        from ..estimators import variance_hats

        return SolveReport(
            allocation=Allocation(tuple(int(v) for v in n)),
            objective_cost=allocation_cost(n, self.frame),
            constraint_values=values,
            feasible=True,
            status=status,
            nodes_explored=self.nodes,
            relaxation_bound=min(root_bound, self.incumbent_cost),
            lower_bound=lower,
            wall_time=wall,
            formulation=name,
            variance_hats=tuple(float(v) for v in variance_hats(n, self.frame)),
        )


def solve(spec: ProblemSpec, frame: SurveyFrame, *, node_limit: int = 200_000,
          time_limit: float | None = None) -> SolveReport:
    """Minimize ``c'n + c0`` over integer allocations satisfying ``spec``.

    Returns the best allocation found with a proven lower bound. ``status`` is
    ``'optimal'``, ``'infeasible'`` (no allocation satisfies the constraints),
    ``'limit'`` (budget exhausted with an incumbent) or ``'no_solution'``.
    """
    return _Search(spec, frame, node_limit, time_limit).run()
