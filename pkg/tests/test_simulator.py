import itertools
import math

import numpy as np
import pytest
from scipy.stats import chi2

from stratalloc import matcalc
from stratalloc.estimators import AllocationError, trace_moments
from stratalloc.simulator import (GaussianGenerator, LognormalGenerator, SimulationError, SyntheticPopulationSpec,
                                  TwoPointGenerator, draw_stratified_sample, generate_population,
                                  nominal_trace_coverage, population_frame, shc_epsilon, validate_coverage,
                                  validate_normality, wilson_interval)

COV = np.array([[1.0, 0.5], [0.5, 2.0]])


def small_population(seed=11, sizes=(60, 80)):
    gens = (GaussianGenerator((0.0, 1.0), COV), LognormalGenerator((0.0, 0.0), 0.25 * COV))
    return generate_population(SyntheticPopulationSpec(sizes, gens, seed))


class TestGenerators:
    def test_two_point_tiny(self):
        pop = generate_population(SyntheticPopulationSpec((4,), (TwoPointGenerator((0.0, 1.0)),), 5))
        assert sorted(pop[0][:, 0].tolist()) == [0.0, 0.0, 1.0, 1.0]

    def test_same_seed(self):
        a, b = small_population(3), small_population(3)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        c = small_population(4)
        assert not np.array_equal(a[0], c[0])

    def test_gaussian_law_of_large_numbers(self):
        pop = generate_population(SyntheticPopulationSpec((100_000,), (GaussianGenerator((0, 0), COV),), 2024))
        emp = np.cov(pop[0], rowvar=False)
        assert np.all(np.abs(emp - COV) <= 0.03 * np.abs(COV))

    @pytest.mark.parametrize("kwargs", [
        dict(sizes=(3,), generators=(TwoPointGenerator((0.0, 1.0)),)),
        dict(sizes=(10, 10), generators=(TwoPointGenerator((0.0, 1.0)),)),
        dict(sizes=(10, 10), generators=(TwoPointGenerator((0.0, 1.0)), GaussianGenerator((0, 0), COV))),
    ])
    def test_invalid_specs(self, kwargs):
        with pytest.raises(SimulationError):
            SyntheticPopulationSpec(**kwargs)

    def test_invalid_generators(self):
        with pytest.raises(SimulationError):
            GaussianGenerator((0, 0), [[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(SimulationError):
            TwoPointGenerator((0.0, 1.0), (0.7, 0.7))


class TestSampling:
    def test_census(self):
        pop = small_population()
        sample = draw_stratified_sample(pop, (60, 80), seed=1)
        for s, p in zip(sample, pop):
            assert np.array_equal(np.sort(s, axis=0), np.sort(p, axis=0))

    def test_bad_sizes(self):
        pop = small_population()
        with pytest.raises(AllocationError):
            draw_stratified_sample(pop, (1, 5), seed=1)
        with pytest.raises(AllocationError):
            draw_stratified_sample(pop, (61, 5), seed=1)

    def test_subset_frequencies(self):
        pop = [np.arange(4.0).reshape(4, 1)]
        counts = dict.fromkeys(itertools.combinations(range(4), 2), 0)
        draws = 100_000
        for r in range(draws):
            picked = draw_stratified_sample(pop, (2,), seed=99, replication=r)[0][:, 0]
            counts[tuple(sorted(int(v) for v in picked))] += 1
        freq = np.array(list(counts.values())) / draws
        assert np.all(np.abs(freq - 1 / 6) <= 0.01)
        stat = sum((c - draws / 6) ** 2 / (draws / 6) for c in counts.values())
        assert stat < chi2.ppf(0.999, 5)

    def test_replications_independent_of_count(self):
        pop = small_population()
        a = draw_stratified_sample(pop, (5, 7), seed=3, replication=42)
        b = draw_stratified_sample(pop, (5, 7), seed=3, replication=42)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))


class TestNormality:
    def test_census_constant_zero(self):
        pop = small_population()
        rep = validate_normality(pop, (60, 80), 1000, seed=5)
        stats = rep.normality_stats["cov_hat"]
        assert np.all(np.abs(stats.empirical_mean) < 1e-12)
        assert np.all(np.abs(stats.empirical_cov) < 1e-20)
        assert rep.empirical_probability is None

    def test_xi_matches_formula(self):
        pop = generate_population(SyntheticPopulationSpec((20_000,), (GaussianGenerator((0.0,), [[2.0]]),), 8))
        rep = validate_normality(pop, (50,), 4000, seed=9)
        xi = rep.normality_stats["xi[1]"]
        assert abs(xi.mean_z[0]) < 3.0
        assert xi.cov_rel_error < 0.1

    def test_sample_covariance_mean_is_unbiased_for_finite_population(self):
        # SRSWOR: E s_h = N/(N-1) S_h, the quantity the formulas scale by n/(n-1) instead
        big, n = 20_000, 50
        pop = generate_population(SyntheticPopulationSpec((big,), (GaussianGenerator((0.0,), [[2.0]]),), 8))
        rep = validate_normality(pop, (n,), 4000, seed=9)
        s = rep.normality_stats["s[1]"]
        target = big / (big - 1.0) * population_frame(pop).strata[0].covariance[0, 0]
        se = math.sqrt(s.empirical_cov[0, 0] / 4000)
        assert abs(s.empirical_mean[0] - target) < 3 * se

    @pytest.mark.xfail(strict=True, reason="the closed-form mean carries n/(n-1); the sample mean of s_h "
                                           "has N/(N-1), a gap of ~5 standard errors here")
    def test_g1_cov_hat_mean_against_formula(self):
        pop = generate_population(SyntheticPopulationSpec((100_000,), (GaussianGenerator((0.0,), [[1.0]]),), 31))
        rep = validate_normality(pop, (200,), 10_000, seed=32)
        assert abs(rep.normality_stats["cov_hat"].mean_z[0]) < 3.0

    def test_zero_variance(self):
        pop = [np.ones((10, 2))]
        with pytest.raises(SimulationError, match="zero variance"):
            validate_normality(pop, (3,), 1000, seed=1)
        with pytest.raises(SimulationError):
            validate_coverage(pop, (3,), 1.0)

    def test_too_few_replications(self):
        with pytest.raises(SimulationError):
            validate_normality(small_population(), (5, 5), 999, seed=1)

    def test_reproducible_reports(self):
        pop = small_population()
        a = validate_normality(pop, (6, 9), 1000, seed=77).to_dict()
        b = validate_normality(pop, (6, 9), 1000, seed=77).to_dict()
        assert a == b
        assert set(a["normality_stats"]) == {"s[1]", "xi[1]", "s[2]", "xi[2]", "cov_hat"}
        assert 0.0 <= a["empirical_probability"] <= 1.0


class TestCoverage:
    def test_extremes(self):
        pop = small_population()
        assert validate_coverage(pop, (5, 5), math.inf, replications=500, seed=1).empirical_probability == 1.0
        assert validate_coverage(pop, (5, 5), -1.0, replications=500, seed=1).empirical_probability == 0.0
        assert validate_coverage(pop, (5, 5), -1.0, "det", replications=500, seed=1).empirical_probability == 0.0
        assert validate_coverage(pop, (5, 5), math.inf, replications=10, seed=1).to_dict()["tau"] == "inf"

    def test_monotone_in_tau(self):
        pop = small_population()
        mean, _ = trace_moments((6, 8), population_frame(pop))
        probs = [validate_coverage(pop, (6, 8), t, replications=2000, seed=4).empirical_probability
                 for t in np.linspace(0.2, 3.0, 8) * mean]
        assert all(b >= a for a, b in zip(probs, probs[1:]))

    def test_census(self):
        pop = small_population()
        rep = validate_coverage(pop, (60, 80), 0.0, replications=200, seed=2)
        assert rep.empirical_probability == 1.0
        assert nominal_trace_coverage(pop, (60, 80), 0.0) == 1.0

    def test_nominal_at_mean(self):
        pop = small_population()
        mean, _ = trace_moments((6, 8), population_frame(pop))
        assert nominal_trace_coverage(pop, (6, 8), mean) == 0.5

    def test_bad_functional(self):
        with pytest.raises(SimulationError):
            validate_coverage(small_population(), (5, 5), 1.0, functional="max")


class TestWilson:
    def test_known_value(self):
        lo, hi = wilson_interval(50, 100)
        z = 1.959963984540054
        half = z * math.sqrt(0.25 / 100 + z * z / 40_000) / (1 + z * z / 100)
        assert (lo, hi) == pytest.approx((0.5 - half, 0.5 + half), rel=1e-12)

    def test_edges(self):
        assert wilson_interval(0, 10)[0] == 0.0 and wilson_interval(10, 10)[1] == 1.0
        lo, hi = wilson_interval(3, 10)
        assert lo < 0.3 < hi


class TestShcEpsilon:
    def test_g1_gaussian_is_one(self):
        pop = generate_population(SyntheticPopulationSpec((5000,), (GaussianGenerator((0.0,), [[3.0]]),), 1))
        assert shc_epsilon(pop)[0] == pytest.approx(1.0, rel=1e-12)

    def test_not_above_random_ratios(self, rng):
        pop = small_population()
        eps = shc_epsilon(pop)
        frame = population_frame(pop)
        for h, stratum in enumerate(frame.strata):
            v = matcalc.vech(stratum.covariance)
            a = stratum.fourth_moment_vech - np.outer(v, v)
            lam = rng.normal(size=(20_000, a.shape[0]))
            ratio = np.einsum("ri,ij,rj->r", lam, a, lam) / np.max(lam ** 2 * np.diag(a), axis=1)
            assert 0.0 <= eps[h] <= ratio.min() + 1e-9
            assert ratio.min() - eps[h] < 0.05
