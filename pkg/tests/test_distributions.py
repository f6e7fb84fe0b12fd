import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stratalloc.distributions import (DET_LAW_RAW_MASS, det_law_cdf, det_law_pdf, det_law_quantile, erf,
                                      normal_cdf, normal_pdf, normal_quantile)

mpmath.mp.dps = 40


def mp_normal_cdf(x):
    return mpmath.ncdf(x)


def mp_det_raw(z):
    return mpmath.exp(z) * mpmath.erfc(mpmath.sqrt(2 * z)) / mpmath.sqrt(2)


class TestNormal:
    def test_centre(self):
        assert normal_quantile(0.5) == 0.0
        assert normal_cdf(0.0) == 0.5

    def test_known_quantile(self):
        # bisection on mpmath's high-precision CDF
        target = mpmath.findroot(lambda x: mpmath.ncdf(x) - mpmath.mpf("0.975"), (1.5, 2.5), solver="bisect")
        assert normal_quantile(0.975) == pytest.approx(float(target), abs=1e-12)
        assert normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-5)

    @pytest.mark.parametrize("p", [1e-12, 1e-6, 0.001, 0.02425, 0.1, 0.3, 0.6, 0.9, 0.99, 1 - 1e-9])
    def test_quantile_against_mpmath(self, p):
        x = normal_quantile(p)
        assert abs(float(mp_normal_cdf(x)) - p) < 1e-10 * max(1.0, p)

    @given(st.floats(1e-10, 1 - 1e-10))
    def test_round_trip_and_symmetry(self, p):
        x = normal_quantile(p)
        assert abs(normal_cdf(x) - p) < 1e-10
        q = 1.0 - p
        assert normal_quantile(q) == -normal_quantile(1.0 - q)

    @pytest.mark.parametrize("x", [-8.0, -3.0, -1.0, 0.3, 2.0, 7.5])
    def test_cdf_pdf_against_mpmath(self, x):
        assert normal_cdf(x) == pytest.approx(float(mp_normal_cdf(x)), rel=1e-13)
        assert normal_pdf(x) == pytest.approx(float(mpmath.npdf(x)), rel=1e-13)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
    def test_quantile_domain(self, p):
        with pytest.raises(ValueError):
            normal_quantile(p)


class TestErf:
    def test_values(self):
        assert erf(0.0) == 0.0
        assert erf(1.0) == pytest.approx(float(mpmath.erf(1)), abs=1e-15)
        assert erf(1.0) == pytest.approx(0.8427008, abs=1e-6)
        assert erf(30.0) == 1.0

    @given(st.floats(-6, 6))
    def test_odd_and_accurate(self, x):
        assert erf(-x) == -erf(x)
        assert abs(erf(x) - float(mpmath.erf(x))) < 1e-10


class TestDetLaw:
    def test_raw_density_at_zero(self):
        assert det_law_pdf(0.0, normalized=False) == pytest.approx(1 / math.sqrt(2), rel=1e-15)
        assert det_law_pdf(0.0) == pytest.approx(1 / math.sqrt(2) / DET_LAW_RAW_MASS, rel=1e-15)

    def test_raw_mass(self):
        # the unnormalized density does not integrate to one; its mass is 1 - 1/sqrt(2)
        mass = mpmath.quad(mp_det_raw, [0, 1, 10, mpmath.inf])
        assert float(mass) == pytest.approx(1 - 1 / math.sqrt(2), rel=1e-12)
        assert DET_LAW_RAW_MASS == pytest.approx(float(mass), rel=1e-14)

    def test_normalized_integrates_to_one(self):
        total = mpmath.quad(lambda z: det_law_pdf(float(z)), [0, 1, 10, 40])
        assert abs(float(total) - 1.0) < 1e-9

    def test_negative_support(self):
        assert det_law_pdf(-1.0) == 0.0 and det_law_cdf(-1.0) == 0.0 and det_law_cdf(0.0) == 0.0

    @pytest.mark.parametrize("z", [1e-6, 0.01, 0.3, 1.0, 4.0, 15.0, 40.0])
    def test_cdf_against_quadrature(self, z):
        expect = mpmath.quad(mp_det_raw, [0, z]) / (1 - 1 / mpmath.sqrt(2))
        assert det_law_cdf(z) == pytest.approx(float(expect), rel=1e-10, abs=1e-14)
        assert det_law_cdf(z, normalized=False) == pytest.approx(float(expect) * DET_LAW_RAW_MASS, rel=1e-10)

    def test_cdf_monotone(self):
        zs = np.linspace(0, 30, 301)
        vals = [det_law_cdf(z) for z in zs]
        assert all(b >= a for a, b in zip(vals, vals[1:]))
        assert vals[-1] == pytest.approx(1.0, abs=1e-9)

    def test_median_regression(self):
        med = det_law_quantile(0.5)
        target = mpmath.findroot(
            lambda z: mpmath.quad(mp_det_raw, [0, z]) / (1 - 1 / mpmath.sqrt(2)) - mpmath.mpf(0.5), 0.3)
        assert med == pytest.approx(float(target), rel=1e-9)
        assert abs(det_law_cdf(med) - 0.5) < 1e-6

    @given(st.floats(1e-6, 1 - 1e-6))
    def test_round_trip(self, p):
        assert abs(det_law_cdf(det_law_quantile(p)) - p) < 1e-6

    def test_quantile_increasing(self):
        qs = [det_law_quantile(p) for p in np.linspace(0.01, 0.99, 50)]
        assert all(b > a for a, b in zip(qs, qs[1:]))

    @pytest.mark.parametrize("p", [0.0, 1.0])
    def test_quantile_domain(self, p):
        with pytest.raises(ValueError):
            det_law_quantile(p)
