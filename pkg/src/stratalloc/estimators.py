"""Stratified-mean covariance estimator and the moments of its half-vectorization.

All functions take an allocation ``n`` (one sample size per stratum) and a
:class:`~stratalloc.strata.SurveyFrame`. The per-stratum coefficient

    w_h(n_h) = W_h^2 / n_h - W_h / N = W_h (N_h - n_h) / (n_h N)

is evaluated in the second form so that a census (``n_h = N_h``) gives an exact
zero and the coefficient can never turn negative under ``n_h <= N_h``.

The statistics carried by the frame are used as given. Whether they came from a
pilot sample or from the full population is the caller's business; the pilot
size stored on each stratum never enters these formulas.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import matcalc
from .strata import SurveyFrame


class AllocationError(ValueError):
    """An allocation that violates ``2 <= n_h <= N_h`` or has the wrong length."""


@dataclass(frozen=True)
class Allocation:
    n: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "n", tuple(int(x) for x in self.n))

    def __len__(self):
        return len(self.n)

    def as_array(self) -> np.ndarray:
        return np.array(self.n, dtype=float)

    def validate(self, frame: SurveyFrame) -> "Allocation":
        as_allocation(self.n, frame)
        return self


def as_allocation(n, frame: SurveyFrame) -> np.ndarray:
    """Validate ``n`` against ``frame`` and return it as a float array."""
    if isinstance(n, Allocation):
        n = n.n
    arr = np.asarray(n, dtype=float).ravel()
    if arr.size != frame.h:
        raise AllocationError(f"allocation has {arr.size} entries but the frame has {frame.h} strata")
    if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
        raise AllocationError(f"allocation entries must be integers, got {list(n)}")
    sizes = frame.population_sizes
    for h, (nh, big) in enumerate(zip(arr, sizes)):
        if nh < 2:
            raise AllocationError(f"stratum {h + 1}: n_h={int(nh)} is below the minimum of 2")
        if nh > big:
            raise AllocationError(f"stratum {h + 1}: n_h={int(nh)} exceeds N_h={int(big)}")
    return arr


def weights(n, frame: SurveyFrame) -> np.ndarray:
    """``W_h^2/n_h - W_h/N`` for every stratum."""
    arr = as_allocation(n, frame)
    w = frame.relative_sizes
    out = w * (frame.population_sizes - arr) / (arr * frame.n_total)
    assert np.all(out >= 0.0), "stratum coefficient went negative"
    return out


def weight(h: int, n, frame: SurveyFrame) -> float:
    if not 0 <= h < frame.h:
        raise IndexError(f"stratum index {h} out of range for H={frame.h}")
    return float(weights(n, frame)[h])


def cov_hat_stratified(n, frame: SurveyFrame) -> np.ndarray:
    """Estimated ``G x G`` covariance matrix of the stratified mean vector."""
    w = weights(n, frame)
    out = np.einsum("h,hij->ij", w, frame.covariances)
    return 0.5 * (out + out.T)


def variance_hats(n, frame: SurveyFrame) -> np.ndarray:
    """Diagonal of :func:`cov_hat_stratified`: one estimated variance per characteristic."""
    return np.einsum("h,hj->j", weights(n, frame), frame.variances)


def vech_mean(n, frame: SurveyFrame) -> np.ndarray:
    """Asymptotic mean of ``vech`` of the estimated covariance matrix."""
    arr = as_allocation(n, frame)
    coef = weights(arr, frame) * arr / (arr - 1.0)
    return sum(c * matcalc.vech(s.covariance) for c, s in zip(coef, frame.strata))


def vech_cov(n, frame: SurveyFrame) -> np.ndarray:
    """Asymptotic ``k x k`` covariance of ``vech`` of the estimated covariance matrix.

    Raises :class:`~stratalloc.strata.SurveyDataError` naming the first stratum
    without fourth moments.
    """
    frame.require_fourth_moments()
    arr = as_allocation(n, frame)
    coef = weights(arr, frame) ** 2 * arr / (arr - 1.0) ** 2
    out = np.zeros((frame.k, frame.k))
    for c, s in zip(coef, frame.strata):
        v = matcalc.vech(s.covariance)
        out += c * (s.fourth_moment_vech - np.outer(v, v))
    return 0.5 * (out + out.T)


def trace_moments(n, frame: SurveyFrame, *, mean_only: bool = False) -> tuple[float, float | None]:
    """Estimated mean and variance of the trace of the estimated covariance matrix.

    The variance sums only the per-characteristic terms ``m4_hj - s_hj^4``;
    covariances between different diagonal elements are not included. With
    ``mean_only=True`` the variance is skipped (returned as ``None``) and
    fourth moments are not needed.
    """
    arr = as_allocation(n, frame)
    w = weights(arr, frame)
    s2 = frame.variances
    mean = float(np.sum((w * arr / (arr - 1.0))[:, None] * s2))
    if mean_only:
        return mean, None
    frame.require_fourth_moments()
    m4 = np.stack([s.fourth_moment_diagonal() for s in frame.strata])
    var = float(np.sum((w ** 2 * arr / (arr - 1.0) ** 2)[:, None] * (m4 - s2 ** 2)))
    return mean, var


@dataclass(frozen=True)
class MomentReport:
    allocation: tuple[int, ...]
    cov_hat: np.ndarray
    mean_vech: np.ndarray
    cov_vech: np.ndarray | None
    trace_mean: float
    trace_var: float | None
    pilot_sample_sizes: tuple[int | None, ...]

    def to_dict(self) -> dict:
        return {
            "allocation": list(self.allocation),
            "cov_hat": self.cov_hat.tolist(),
            "mean_vech": self.mean_vech.tolist(),
            "cov_vech": None if self.cov_vech is None else self.cov_vech.tolist(),
            "trace_mean": self.trace_mean,
            "trace_var": self.trace_var,
            "pilot_sample_sizes": list(self.pilot_sample_sizes),
        }


def moment_report(n, frame: SurveyFrame) -> MomentReport:
    arr = as_allocation(n, frame)
    full = frame.has_fourth_moments()
    mean, var = trace_moments(arr, frame, mean_only=not full)
    return MomentReport(
        allocation=tuple(int(x) for x in arr),
        cov_hat=cov_hat_stratified(arr, frame),
        mean_vech=vech_mean(arr, frame),
        cov_vech=vech_cov(arr, frame) if full else None,
        trace_mean=mean,
        trace_var=var,
        pilot_sample_sizes=tuple(s.pilot_sample_size for s in frame.strata),
    )


def _hajek_terms(column: np.ndarray) -> tuple[np.ndarray, float]:
    y = np.asarray(column, dtype=float)
    dev2 = (y - y.mean()) ** 2
    s2 = dev2.mean()
    m4 = np.mean(dev2 ** 2)
    return (dev2 - s2) ** 2, y.size * (m4 - s2 ** 2)


def hajek_ratio(column, n: int) -> float:
    """Finite-population value of the Hajek-type ratio for one characteristic.

    The maximum over ``n``-subsets of a sum of fixed nonnegative terms is the sum
    of the ``n`` largest terms, so no enumeration is needed. A degenerate
    denominator (fourth moment equal to squared variance) gives ``inf``.
    """
    terms, denom = _hajek_terms(column)
    if not 1 <= n <= terms.size:
        raise ValueError(f"subset size {n} outside 1..{terms.size}")
    numer = float(np.sum(np.sort(terms)[-n:]))
    scale = max(1.0, float(np.max(terms)) * terms.size)
    if denom <= 1e-14 * scale:
        return math.inf
    return numer / denom


def hajek_ratio_enumerated(column, n: int) -> float:
    """Same ratio by brute force over every ``n``-subset; only for small populations."""
    terms, denom = _hajek_terms(column)
    if math.comb(terms.size, n) > 10 ** 6:
        raise ValueError("too many subsets to enumerate")
    numer = max(sum(terms[list(c)]) for c in itertools.combinations(range(terms.size), n))
    scale = max(1.0, float(np.max(terms)) * terms.size)
    if denom <= 1e-14 * scale:
        return math.inf
    return float(numer) / denom


def hajek_diagnostic(populations: Sequence, sample_sizes: Sequence[int]) -> np.ndarray:
    """Worst (largest) Hajek ratio across strata, one value per characteristic.

    Each entry of ``populations`` is a full ``N_h x G`` stratum. Small values
    support the normal approximation of the sample covariance; ``inf`` flags a
    degenerate characteristic.
    """
    if len(populations) != len(sample_sizes):
        raise ValueError("need one sample size per stratum")
    out = None
    for pop, n in zip(populations, sample_sizes):
        y = np.asarray(pop, dtype=float)
        if y.ndim == 1:
            y = y.reshape(-1, 1)
        r = np.array([hajek_ratio(y[:, j], int(n)) for j in range(y.shape[1])])
        out = r if out is None else np.maximum(out, r)
    return out
