"""Scalar distributions: the standard normal and the determinant law.

The determinant law has density proportional to ``exp(z) * erfc(sqrt(2 z))`` on
``z >= 0``. With the ``1/sqrt(2)`` prefactor usually quoted for it, the density
integrates to ``1 - 1/sqrt(2)`` rather than one, so :func:`det_law_pdf`
normalizes by that mass by default (pass ``normalized=False`` for the raw
formula). The CDF has a closed form (integration by parts):

    int_0^z exp(t) erfc(sqrt(2t)) dt = exp(z) erfc(sqrt(2z)) - 1 + sqrt(2) erf(sqrt(z))
"""

from __future__ import annotations

import math

from scipy.optimize import brentq
from scipy.special import erfcx

SQRT2 = math.sqrt(2.0)
# total mass of (1/sqrt(2)) exp(z) erfc(sqrt(2z)) over z >= 0
DET_LAW_RAW_MASS = 1.0 - 1.0 / SQRT2

# Acklam's rational approximation for the normal quantile (|rel err| < 1.2e-9)
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def erf(x: float) -> float:
    return math.erf(x)


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / SQRT2)


def normal_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def _acklam(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    if p > 1.0 - _P_LOW:
        return -_acklam(1.0 - p)
    q = p - 0.5
    r = q * q
    return (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
        (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)


def normal_quantile(p: float) -> float:
    """Standard normal quantile: rational approximation plus one Newton step."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"normal quantile needs 0 < p < 1, got {p}")
    if p == 0.5:
        return 0.0
    # work in the lower tail and reflect, which keeps the quantile exactly odd
    if p > 0.5:
        return -normal_quantile(1.0 - p)
    x = _acklam(p)
    return x - (normal_cdf(x) - p) / normal_pdf(x)


def _exp_erfc(z: float) -> float:
    """``exp(z) * erfc(sqrt(2 z))`` without overflow for large ``z``."""
    return math.exp(-z) * float(erfcx(math.sqrt(2.0 * z)))


def det_law_pdf(z: float, *, normalized: bool = True) -> float:
    if z < 0:
        return 0.0
    raw = _exp_erfc(z) / SQRT2
    return raw / DET_LAW_RAW_MASS if normalized else raw


def det_law_cdf(z: float, *, normalized: bool = True) -> float:
    if z <= 0:
        return 0.0
    raw = (_exp_erfc(z) - 1.0 + SQRT2 * math.erf(math.sqrt(z))) / SQRT2
    if not normalized:
        return raw
    return min(1.0, max(0.0, raw / DET_LAW_RAW_MASS))


def det_law_quantile(p: float) -> float:
    """Percentile ``r_p`` of the (normalized) determinant law."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"determinant-law quantile needs 0 < p < 1, got {p}")
    hi = 1.0
    while det_law_cdf(hi) < p:
        hi *= 2.0
        if hi > 1e4:
            raise ValueError(f"cannot bracket the {p} quantile")
    return brentq(lambda z: det_law_cdf(z) - p, 0.0, hi, xtol=1e-13, maxiter=200)
