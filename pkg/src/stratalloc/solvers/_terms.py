"""Fast constraint evaluators and separable convex under-estimators for branch and bound.

Each stratum contributes through four convex, nonincreasing functions of
``x = n_h`` on ``[2, N_h]``:

    f1 = 1/x,  f2 = 1/(x-1),  f3 = (N_h - x)/((x-1) sqrt(x)),  f4 = (N_h - x)^2/(x (x-1)^2)

``f4`` is ``(N/W_h)^2 w_h^2 n_h/(n_h-1)^2`` (the variance multiplier) and
``f3 = sqrt(f4)``. A :class:`Cut` is ``const + sum_{b,h} coef[b,h] f_b(x_h)``
with nonnegative coefficients, hence convex and separable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import matcalc
from ..distributions import det_law_quantile, normal_quantile
from ..strata import SurveyDataError, SurveyFrame
from .problem import Formulation, ProblemSpec

N_BASIS = 4


def basis(x: np.ndarray, big: np.ndarray, order: int = 0):
    """Basis values (``order=0``) or derivatives of the given order, shape ``(4, H)``."""
    x = np.asarray(x, dtype=float)
    rest = big - x
    xm1 = x - 1.0
    p = 1.0 / (xm1 * np.sqrt(x))
    r = 1.0 / (x * xm1 * xm1)
    if order == 0:
        return np.stack([1.0 / x, 1.0 / xm1, rest * p, rest * rest * r])
    a = -1.0 / xm1 - 0.5 / x
    b = -1.0 / x - 2.0 / xm1
    dp, dr = p * a, r * b
    if order == 1:
        return np.stack([-1.0 / x ** 2, -1.0 / xm1 ** 2, -p + rest * dp, -2.0 * rest * r + rest * rest * dr])
    ddp = p * (a * a + 1.0 / xm1 ** 2 + 0.5 / x ** 2)
    ddr = r * (b * b + 1.0 / x ** 2 + 2.0 / xm1 ** 2)
    return np.stack([2.0 / x ** 3, 2.0 / xm1 ** 3, -2.0 * dp + rest * ddp,
                     2.0 * r - 4.0 * rest * dr + rest * rest * ddr])


def weighted_derivatives(x: np.ndarray, big: np.ndarray, amat: np.ndarray):
    """First and second derivatives of ``sum_b amat[b] f_b`` at ``x``, skipping zero rows."""
    xm1 = x - 1.0
    d1 = np.zeros_like(x)
    d2 = np.zeros_like(x)
    if amat[0].any():
        inv = 1.0 / x
        d1 -= amat[0] * inv * inv
        d2 += 2.0 * amat[0] * inv ** 3
    if amat[1].any():
        inv = 1.0 / xm1
        d1 -= amat[1] * inv * inv
        d2 += 2.0 * amat[1] * inv ** 3
    if amat[2].any() or amat[3].any():
        rest = big - x
        if amat[2].any():
            p = 1.0 / (xm1 * np.sqrt(x))
            a = -1.0 / xm1 - 0.5 / x
            dp = p * a
            ddp = p * (a * a + 1.0 / xm1 ** 2 + 0.5 / x ** 2)
            d1 += amat[2] * (-p + rest * dp)
            d2 += amat[2] * (-2.0 * dp + rest * ddp)
        if amat[3].any():
            r = 1.0 / (x * xm1 * xm1)
            b = -1.0 / x - 2.0 / xm1
            dr = r * b
            ddr = r * (b * b + 1.0 / x ** 2 + 2.0 / xm1 ** 2)
            d1 += amat[3] * (-2.0 * rest * r + rest * rest * dr)
            d2 += amat[3] * (2.0 * r - 4.0 * rest * dr + rest * rest * ddr)
    return d1, d2


@dataclass
class Cut:
    const: float
    coef: np.ndarray  # (N_BASIS, H), all >= 0

    def value(self, x, big) -> float:
        return self.const + float(np.sum(self.coef * basis(x, big)))


class NodeInfeasible(Exception):
    """The node's box contains no point satisfying some constraint."""


class MeanSqrtTerm:
    """``const + sum_h (a1_h f1 + a2_h f2) + e * sqrt(sum_h k_h f4)``."""

    def __init__(self, name, big, const, a1, a2, k=None, e=0.0):
        self.name = name
        self.big = big
        self.const = float(const)
        self.a1 = np.asarray(a1, dtype=float)
        self.a2 = np.asarray(a2, dtype=float)
        self.k = None if k is None or e == 0.0 else np.asarray(k, dtype=float)
        self.e = float(e) if self.k is not None else 0.0
        if self.k is not None and np.any(self.k < 0):
            bad = int(np.argmin(self.k)) + 1
            raise SurveyDataError(
                f"stratum {bad}: fourth moment below squared variance; the {name} variance would be negative")
        self.monotone = -1 if self.e >= 0 else 0

    def _mean(self, x) -> float:
        return self.const + float(np.sum(self.a1 / x + self.a2 / (x - 1.0)))

    def variance(self, x) -> float:
        if self.k is None:
            return 0.0
        return float(np.sum(self.k * basis(x, self.big)[3]))

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        out = self._mean(x)
        if self.k is not None:
            out += self.e * math.sqrt(max(self.variance(x), 0.0))
        return out

    def _base(self, extra_const=0.0) -> Cut:
        coef = np.zeros((N_BASIS, self.big.size))
        coef[0] = self.a1
        coef[1] = self.a2
        return Cut(self.const + extra_const, coef)

    @property
    def refinable(self) -> bool:
        return self.k is not None and self.e > 0

    def cut(self, lo, hi, ref=None) -> Cut:
        """One separable convex under-estimator valid on the box ``[lo, hi]``.

        With a reference point the sqrt term is bounded by Cauchy-Schwarz at
        that point, otherwise by the chord of ``sqrt`` over the box's variance
        range.
        """
        if self.k is None:
            return self._base()
        if self.e < 0:
            # the variance is largest at the lower corner
            return self._base(self.e * math.sqrt(self.variance(lo)))
        if ref is not None:
            cut = self.tangent_cut(ref)
            if cut is not None:
                return cut
        v_lo, v_hi = self.variance(hi), self.variance(lo)
        r_lo, r_hi = math.sqrt(v_lo), math.sqrt(v_hi)
        if r_hi - r_lo <= 1e-15 * max(1.0, r_hi):
            return self._base(self.e * r_lo)
        # chord of the concave sqrt over [v_lo, v_hi] lies below it
        slope = 1.0 / (r_lo + r_hi)
        cut = self._base(self.e * (r_lo - v_lo * slope))
        cut.coef[3] += self.e * slope * self.k
        return cut

    def tangent_cut(self, ref) -> Cut | None:
        """Cauchy-Schwarz cut ``sqrt(sum q_h) >= sum u_h sqrt(q_h)``, tight at ``ref``."""
        if self.k is None or self.e <= 0:
            return None
        q = self.k * basis(ref, self.big)[3]
        total = float(np.sum(q))
        if total <= 0.0:
            return None
        u = np.sqrt(q) / math.sqrt(total)
        cut = self._base()
        cut.coef[2] += self.e * u * np.sqrt(self.k)
        return cut


class DetTerm:
    """``r_p - tau |det(sum_h c_h f4_h A_h)|^(1/4)`` with ``A_h = m4vec_h - vec s_h vec' s_h``."""

    def __init__(self, name, big, scale, mats, r_p, tau):
        self.name = name
        self.big = big
        self.scale = np.asarray(scale, dtype=float)
        self.mats = np.stack(mats)
        self.r_p = float(r_p)
        self.tau = float(tau)
        psd = all(matcalc.is_positive_semidefinite(m, atol=1e-10) for m in mats)
        # N shrinks in the Loewner order as any n_h grows, so det N cannot increase
        self.monotone = 1 if psd else 0

    def value(self, x) -> float:
        coef = self.scale * basis(np.asarray(x, dtype=float), self.big)[3]
        big_n = np.einsum("h,hij->ij", coef, self.mats)
        return self.r_p - self.tau * abs(matcalc.det(big_n)) ** 0.25

    refinable = False

    def cut(self, lo, hi, ref=None) -> None:
        return None


def build_terms(spec: ProblemSpec, frame: SurveyFrame):
    """Translate ``spec`` into evaluators sharing the estimator formulas' coefficients."""
    w = frame.relative_sizes
    big = frame.population_sizes
    n_tot = frame.n_total
    s2 = frame.variances  # H x G
    labels = frame.characteristic_labels
    c1 = (w ** 2)[:, None] * s2               # coefficient of 1/n in Var_j
    c2 = (w * (big - 1.0) / n_tot)[:, None] * s2  # coefficient of 1/(n-1) in E_j
    c0 = (w / n_tot)[:, None] * s2             # constant part (subtracted)
    f = spec.formulation
    e = 0.0
    if spec.p0 is not None and spec.p0 != 0.5 and f in (Formulation.PREKOPA, Formulation.TRACE):
        e = normal_quantile(spec.p0)
    kq = None
    if e != 0.0:
        m4 = np.stack([s.fourth_moment_diagonal() for s in frame.strata])
        kq = (w / n_tot)[:, None] ** 2 * (m4 - s2 ** 2)  # H x G
    zeros = np.zeros(frame.h)
    terms = []
    if f is Formulation.PER_VARIABLE:
        for j, v0 in enumerate(spec.v0):
            if math.isfinite(v0):
                terms.append(MeanSqrtTerm(f"var[{labels[j]}]", big, -c0[:, j].sum() - v0, c1[:, j], zeros))
    elif f is Formulation.PREKOPA:
        for j, v0 in enumerate(spec.v0):
            if math.isfinite(v0):
                terms.append(MeanSqrtTerm(f"prekopa[{labels[j]}]", big, -c0[:, j].sum() - v0, zeros, c2[:, j],
                                          None if kq is None else kq[:, j], e))
    elif f is Formulation.TRACE_DETERMINISTIC:
        terms.append(MeanSqrtTerm("trace", big, -c0.sum() - spec.tau, c1.sum(axis=1), zeros))
    elif f is Formulation.TRACE:
        terms.append(MeanSqrtTerm("trace_chance", big, -c0.sum() - spec.tau, zeros, c2.sum(axis=1),
                                  None if kq is None else kq.sum(axis=1), e))
    else:
        mats = []
        for s in frame.strata:
            v = matcalc.vec(s.covariance)
            mats.append(s.fourth_moment_vec - np.outer(v, v))
        terms.append(DetTerm("det_chance", big, (w / n_tot) ** 2, mats, det_law_quantile(spec.p0), spec.tau))
    return terms
