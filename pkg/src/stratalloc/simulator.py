"""Synthetic populations and Monte Carlo checks of the asymptotic moment formulas.

Random streams
    Every draw comes from a Philox generator keyed by ``(seed, purpose, ...)``
    through :class:`numpy.random.SeedSequence` spawn keys: population ``h`` uses
    ``(0, h)`` and replication ``r`` of stratum ``h`` uses ``(1, r, h)``. A
    replication's sample therefore does not depend on how many replications run
    or in which order, and identical seeds give bit-identical reports.

Population moments
    "True" moments are the population summaries with divisor ``N_h``
    (``S_h`` and ``M_h^4``). Under simple random sampling without replacement
    the matrix ``Xi_h``, centred at the population mean, has mean
    ``n_h/(n_h-1) vech S_h`` exactly; the ordinary sample covariance ``s_h`` has
    mean ``N_h/(N_h-1) vech S_h``. Both are reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtr
from scipy.stats import chi2

from . import estimators, matcalc
from .distributions import normal_cdf, normal_quantile
from .estimators import Allocation
from .strata import SurveyFrame, frame_from_strata, summarize

_POPULATION, _SAMPLE = 0, 1
# replications are processed in blocks of at most this many sampled values
_BLOCK_VALUES = 4_000_000


class SimulationError(ValueError):
    """Invalid simulation parameters or a population the checks cannot use."""


# ---------------------------------------------------------------- generators


@dataclass(frozen=True)
class GaussianGenerator:
    mean: tuple[float, ...]
    covariance: np.ndarray

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "mean", tuple(float(m) for m in np.atleast_1d(self.mean)))
        if cov.shape != (len(self.mean), len(self.mean)):
            raise SimulationError(f"covariance shape {cov.shape} does not match mean of length {len(self.mean)}")
        if not matcalc.is_symmetric(cov) or not matcalc.is_positive_definite(cov):
            raise SimulationError("gaussian covariance must be symmetric positive definite")

    @property
    def g(self) -> int:
        return len(self.mean)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        chol = np.linalg.cholesky(self.covariance)
        return np.asarray(self.mean) + rng.standard_normal((size, self.g)) @ chol.T


@dataclass(frozen=True)
class LognormalGenerator:
    """``exp`` of a gaussian vector with log-scale ``mean`` and ``covariance``."""

    mean: tuple[float, ...]
    covariance: np.ndarray

    def __post_init__(self):
        inner = GaussianGenerator(self.mean, self.covariance)
        object.__setattr__(self, "mean", inner.mean)
        object.__setattr__(self, "covariance", inner.covariance)

    @property
    def g(self) -> int:
        return len(self.mean)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.exp(GaussianGenerator(self.mean, self.covariance).draw(rng, size))


@dataclass(frozen=True)
class TwoPointGenerator:
    """Two support points (scalars or ``G``-vectors) in fixed proportions.

    ``round(N * weights[0])`` units take the first value and the rest the
    second, then the units are shuffled. Fixing the counts keeps both values
    present even in tiny strata.
    """

    values: tuple
    weights: tuple[float, float] = (0.5, 0.5)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals.reshape(2, 1) if vals.size == 2 else vals
        if vals.ndim != 2 or vals.shape[0] != 2:
            raise SimulationError("two_point needs exactly two values (scalars or equal-length vectors)")
        w = tuple(float(x) for x in self.weights)
        if len(w) != 2 or min(w) < 0 or not math.isclose(sum(w), 1.0, rel_tol=1e-12, abs_tol=1e-12):
            raise SimulationError(f"two_point weights must be two nonnegative numbers summing to 1, got {w}")
        object.__setattr__(self, "values", tuple(tuple(row) for row in vals))
        object.__setattr__(self, "weights", w)

    @property
    def g(self) -> int:
        return len(self.values[0])

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        first = int(round(size * self.weights[0]))
        vals = np.asarray(self.values)
        out = np.vstack([np.repeat(vals[:1], first, axis=0), np.repeat(vals[1:], size - first, axis=0)])
        return out[rng.permutation(size)]


Generator = Union[GaussianGenerator, LognormalGenerator, TwoPointGenerator]


@dataclass(frozen=True)
class SyntheticPopulationSpec:
    sizes: tuple[int, ...]
    generators: tuple[Generator, ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(n) for n in self.sizes))
        object.__setattr__(self, "generators", tuple(self.generators))
        if not self.sizes:
            raise SimulationError("need at least one stratum")
        if len(self.generators) != len(self.sizes):
            raise SimulationError(f"{len(self.sizes)} strata but {len(self.generators)} generators")
        for h, n in enumerate(self.sizes):
            if n < 4:
                raise SimulationError(f"stratum {h + 1}: N_h={n} is below the minimum of 4")
        if len({gen.g for gen in self.generators}) != 1:
            raise SimulationError("all generators must produce the same number of characteristics")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise SimulationError("seed must be a 64-bit unsigned integer")

    @property
    def h(self) -> int:
        return len(self.sizes)


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))


def generate_population(spec: SyntheticPopulationSpec) -> list[np.ndarray]:
    """One ``N_h x G`` array per stratum, deterministic in ``spec.seed``."""
    return [gen.draw(_stream(spec.seed, _POPULATION, h), size)
            for h, (size, gen) in enumerate(zip(spec.sizes, spec.generators))]


def population_frame(population: Sequence[np.ndarray], costs: Sequence[float] | None = None) -> SurveyFrame:
    """Frame of true population moments (divisor ``N_h``)."""
    costs = [1.0] * len(population) if costs is None else costs
    strata = [summarize(pop, len(pop), c, divisor="population") for pop, c in zip(population, costs)]
    return frame_from_strata(strata)


def _sizes_check(population, alloc) -> np.ndarray:
    n = np.asarray(alloc.n if isinstance(alloc, Allocation) else alloc, dtype=int).ravel()
    if n.size != len(population):
        raise SimulationError(f"allocation has {n.size} entries but the population has {len(population)} strata")
    for h, (nh, pop) in enumerate(zip(n, population)):
        if nh < 2:
            raise estimators.AllocationError(f"stratum {h + 1}: n_h={nh} is below the minimum of 2")
        if nh > len(pop):
            raise estimators.AllocationError(f"stratum {h + 1}: n_h={nh} exceeds N_h={len(pop)}")
    return n


def draw_stratified_sample(population: Sequence[np.ndarray], alloc, seed: int,
                           replication: int = 0) -> list[np.ndarray]:
    """Simple random sample without replacement of ``n_h`` rows from each stratum."""
    n = _sizes_check(population, alloc)
    return [pop[_stream(seed, _SAMPLE, replication, h).choice(len(pop), int(nh), replace=False)]
            for h, (pop, nh) in enumerate(zip(population, n))]


# ---------------------------------------------------------------- statistics


def _column_fsum_mean(a: np.ndarray) -> np.ndarray:
    """Mean over axis 0 with compensated summation, independent of row order."""
    flat = a.reshape(a.shape[0], -1)
    return np.array([math.fsum(col) / a.shape[0] for col in flat.T]).reshape(a.shape[1:])


@dataclass(frozen=True)
class NormalityStats:
    """Empirical versus asymptotic moments of one vector statistic.

    ``cov_rel_error`` is ``max_ij |C_emp - C_th|_ij / sqrt(C_th,ii C_th,jj)``,
    which equals the plain relative error on the diagonal.
    """

    components: tuple[str, ...]
    empirical_mean: np.ndarray
    theoretical_mean: np.ndarray
    mean_z: np.ndarray
    empirical_cov: np.ndarray
    theoretical_cov: np.ndarray
    cov_rel_error: float
    skewness: np.ndarray
    excess_kurtosis: np.ndarray
    max_cdf_gap: np.ndarray

    def to_dict(self) -> dict:
        def clean(a):
            a = np.asarray(a, dtype=float)
            return [None if not np.isfinite(v) else float(v) for v in a.ravel()] if a.ndim <= 1 else \
                [clean(row) for row in a]

        return {
            "components": list(self.components),
            "empirical_mean": clean(self.empirical_mean),
            "theoretical_mean": clean(self.theoretical_mean),
            "mean_z": clean(self.mean_z),
            "empirical_cov": clean(self.empirical_cov),
            "theoretical_cov": clean(self.theoretical_cov),
            "cov_rel_error": None if not math.isfinite(self.cov_rel_error) else self.cov_rel_error,
            "skewness": clean(self.skewness),
            "excess_kurtosis": clean(self.excess_kurtosis),
            "max_cdf_gap": clean(self.max_cdf_gap),
        }


def _normality(draws: np.ndarray, mean_th: np.ndarray, cov_th: np.ndarray, labels) -> NormalityStats:
    r = draws.shape[0]
    mean = _column_fsum_mean(draws)
    dev = draws - mean
    cov = dev.T @ dev / (r - 1)
    sd = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (mean - mean_th) / (sd / math.sqrt(r))
        z = np.where(sd > 0, z, np.where(mean == mean_th, 0.0, np.inf))
        scale = np.sqrt(np.outer(np.diag(cov_th), np.diag(cov_th)))
        rel = np.abs(cov - cov_th) / scale
        rel = np.where(scale > 0, rel, np.where(np.abs(cov - cov_th) <= 1e-300, 0.0, np.inf))
        std = dev / sd
        skew = np.where(sd > 0, np.mean(std ** 3, axis=0), np.nan)
        kurt = np.where(sd > 0, np.mean(std ** 4, axis=0) - 3.0, np.nan)
    gaps = np.full(draws.shape[1], np.nan)
    for j in range(draws.shape[1]):
        if sd[j] > 0:
            u = np.sort(std[:, j])
            cdf = ndtr(u)
            i = np.arange(1, r + 1)
            gaps[j] = float(max(np.max(i / r - cdf), np.max(cdf - (i - 1) / r)))
    return NormalityStats(tuple(labels), mean, mean_th, z, cov, cov_th, float(np.max(rel)), skew, kurt, gaps)


def _vech_labels(prefix: str, g: int) -> list[str]:
    return [f"{prefix}[{i + 1},{j + 1}]" for j in range(g) for i in range(j, g)]


def _replicate(population, n, replications: int, seed: int):
    """Per-stratum arrays of ``vech s_h`` and ``vech Xi_h``, shape ``(R, k)`` each."""
    g = population[0].shape[1]
    rows, cols = np.tril_indices(g)
    # vech order is column-major over the lower triangle
    order = np.lexsort((rows, cols))
    rows, cols = rows[order], cols[order]
    out_s, out_xi = [], []
    for h, (pop, nh) in enumerate(zip(population, n)):
        big = len(pop)
        centre = pop.mean(axis=0)
        s = np.empty((replications, rows.size))
        xi = np.empty((replications, rows.size))
        block = max(1, _BLOCK_VALUES // max(1, int(nh) * g))
        for start in range(0, replications, block):
            stop = min(replications, start + block)
            idx = np.stack([_stream(seed, _SAMPLE, r, h).choice(big, int(nh), replace=False)
                            for r in range(start, stop)])
            y = pop[idx]  # (B, n, G)
            d = y - y.mean(axis=1, keepdims=True)
            e = y - centre
            s[start:stop] = np.einsum("bni,bnj->bij", d, d)[:, rows, cols] / (nh - 1)
            xi[start:stop] = np.einsum("bni,bnj->bij", e, e)[:, rows, cols] / (nh - 1)
        out_s.append(s)
        out_xi.append(xi)
    return out_s, out_xi


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    z = normal_quantile(0.5 + confidence / 2.0)
    p = successes / trials
    denom = 1.0 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    # the closed form reaches the endpoints only up to rounding
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == trials else min(1.0, centre + half)
    return lo, hi


@dataclass(frozen=True)
class CoverageReport:
    """Outcome of a Monte Carlo run.

    ``empirical_probability`` is the fraction of replications with
    ``f(Cov-hat) <= tau`` for a coverage run, and the fraction falling inside
    the nominal ``p0`` normal ellipsoid for a normality run.
    """

    replications: int
    empirical_probability: float | None
    nominal_p0: float | None
    wilson_interval: tuple[float, float] | None
    normality_stats: dict[str, NormalityStats] = field(default_factory=dict)
    functional: str | None = None
    tau: float | None = None
    allocation: tuple[int, ...] = ()
    seed: int = 0

    def to_dict(self) -> dict:
        tau = self.tau
        if tau is not None and math.isinf(tau):
            tau = "inf" if tau > 0 else "-inf"
        return {
            "replications": self.replications,
            "empirical_probability": self.empirical_probability,
            "nominal_p0": self.nominal_p0,
            "wilson_interval": None if self.wilson_interval is None else list(self.wilson_interval),
            "functional": self.functional,
            "tau": tau,
            "allocation": list(self.allocation),
            "seed": self.seed,
            "normality_stats": {k: v.to_dict() for k, v in self.normality_stats.items()},
        }


def _check_population(population) -> list[np.ndarray]:
    pops = [np.asarray(p, dtype=float).reshape(len(p), -1) for p in population]
    for h, pop in enumerate(pops):
        var = pop.var(axis=0)
        if np.any(var <= 0.0):
            j = int(np.argmin(var)) + 1
            raise SimulationError(f"stratum {h + 1}: characteristic {j} has zero variance (degenerate population)")
    return pops


def _cov_hat_draws(population, n, s_draws) -> np.ndarray:
    frame = population_frame(population)
    w = estimators.weights(n, frame)
    return sum(wh * s for wh, s in zip(w, s_draws))


def validate_normality(population: Sequence[np.ndarray], alloc, replications: int, seed: int,
                       *, p0: float = 0.95) -> CoverageReport:
    """Compare Monte Carlo moments of ``vech`` statistics with their asymptotic values.

    Reports, under ``normality_stats``:

    - ``cov_hat``: ``vech Cov-hat`` against the moments from the estimator
      formulas evaluated at the true population moments;
    - ``s[h]`` and ``xi[h]``: per-stratum ``vech s_h`` and ``vech Xi_h`` against
      ``n/(n-1) vech S_h`` and ``n/(n-1)^2 (M_h^4 - vech S_h vech' S_h)``.

    ``empirical_probability`` is the share of replications whose ``vech Cov-hat``
    lies inside the ``p0`` ellipsoid of the asymptotic normal law (``None`` when
    that law is singular, e.g. under a census).
    """
    if replications < 1000:
        raise SimulationError(f"need at least 1000 replications, got {replications}")
    pops = _check_population(population)
    n = _sizes_check(pops, alloc)
    frame = population_frame(pops)
    g = frame.g
    s_draws, xi_draws = _replicate(pops, n, replications, seed)
    stats = {}
    for h, (pop, nh) in enumerate(zip(pops, n)):
        stratum = frame.strata[h]
        v = matcalc.vech(stratum.covariance)
        mean_th = nh / (nh - 1.0) * v
        cov_th = nh / (nh - 1.0) ** 2 * (stratum.fourth_moment_vech - np.outer(v, v))
        stats[f"s[{h + 1}]"] = _normality(s_draws[h], mean_th, cov_th, _vech_labels("s", g))
        stats[f"xi[{h + 1}]"] = _normality(xi_draws[h], mean_th, cov_th, _vech_labels("xi", g))
    cov_hat = _cov_hat_draws(pops, n, s_draws)
    mean_th = estimators.vech_mean(n, frame)
    cov_th = estimators.vech_cov(n, frame)
    stats["cov_hat"] = _normality(cov_hat, mean_th, cov_th, _vech_labels("cov_hat", g))
    prob, interval = None, None
    if matcalc.is_positive_definite(0.5 * (cov_th + cov_th.T)):
        dev = cov_hat - mean_th
        dist = np.einsum("ri,ri->r", dev, np.linalg.solve(cov_th, dev.T).T)
        hits = int(np.sum(dist <= chi2.ppf(p0, dev.shape[1])))
        prob, interval = hits / replications, wilson_interval(hits, replications)
    return CoverageReport(replications, prob, p0, interval, stats, "normality", None,
                          tuple(int(x) for x in n), int(seed))


def nominal_trace_coverage(population: Sequence[np.ndarray], alloc, tau: float) -> float:
    """``Phi((tau - E tr) / sqrt(Var tr))``, the normal-approximation coverage at ``tau``."""
    frame = population_frame(_check_population(population))
    mean, var = estimators.trace_moments(alloc, frame)
    if var <= 0.0:
        return 1.0 if tau >= mean else 0.0
    return normal_cdf((tau - mean) / math.sqrt(var))


def validate_coverage(population: Sequence[np.ndarray], alloc, tau: float, functional: str = "trace",
                      replications: int = 10_000, seed: int = 0) -> CoverageReport:
    """Empirical ``P(f(Cov-hat) <= tau)`` for ``f`` the trace or the determinant."""
    if functional not in ("trace", "det"):
        raise SimulationError(f"functional must be 'trace' or 'det', got {functional!r}")
    if replications < 1:
        raise SimulationError("need at least one replication")
    pops = _check_population(population)
    n = _sizes_check(pops, alloc)
    g = pops[0].shape[1]
    s_draws, _ = _replicate(pops, n, replications, seed)
    cov_hat = _cov_hat_draws(pops, n, s_draws)
    mats = np.stack([matcalc.vech_inverse(v) for v in cov_hat]) if g > 1 else cov_hat.reshape(-1, 1, 1)
    values = np.trace(mats, axis1=1, axis2=2) if functional == "trace" else np.linalg.det(mats)
    hits = int(np.sum(values <= tau))
    nominal = nominal_trace_coverage(pops, n, tau) if functional == "trace" else None
    return CoverageReport(replications, hits / replications, nominal, wilson_interval(hits, replications),
                          {}, functional, float(tau), tuple(int(x) for x in n), int(seed))


def shc_epsilon(population: Sequence[np.ndarray]) -> np.ndarray:
    """Largest ``epsilon`` satisfying the fourth-moment regularity condition, per stratum.

    With ``A = M^4 - vech S vech' S`` the condition asks
    ``l'A l >= eps max_a l_a^2 A_aa`` for every ``l``. After rescaling
    ``m_a = l_a sqrt(A_aa)`` the best ``eps`` is the minimum of ``m'R m`` over
    ``max|m_a| = 1``, ``R`` the correlation form of ``A``. Each face
    ``m_a = 1`` is a convex box QP. A zero diagonal entry gives ``eps = 0``.
    """
    pops = _check_population(population)
    frame = population_frame(pops)
    out = []
    for stratum in frame.strata:
        v = matcalc.vech(stratum.covariance)
        a = stratum.fourth_moment_vech - np.outer(v, v)
        a = 0.5 * (a + a.T)
        diag = np.diag(a)
        if np.any(diag <= 0):
            out.append(0.0)
            continue
        r = a / np.sqrt(np.outer(diag, diag))
        k = r.shape[0]
        best = math.inf
        for alpha in range(k):
            rest = [b for b in range(k) if b != alpha]
            if not rest:
                best = min(best, float(r[0, 0]))
                continue
            rr = r[np.ix_(rest, rest)]
            ra = r[rest, alpha]

            def fun(m, rr=rr, ra=ra):
                return float(m @ rr @ m + 2.0 * ra @ m + 1.0), 2.0 * (rr @ m + ra)

            res = minimize(fun, np.zeros(k - 1), jac=True, method="L-BFGS-B", bounds=[(-1.0, 1.0)] * (k - 1),
                           options={"ftol": 1e-15, "gtol": 1e-12})
            best = min(best, float(res.fun))
        out.append(max(best, 0.0))
    return np.array(out)


__all__ = [
    "CoverageReport", "GaussianGenerator", "LognormalGenerator", "NormalityStats", "SimulationError",
    "SyntheticPopulationSpec", "TwoPointGenerator", "draw_stratified_sample", "generate_population",
    "nominal_trace_coverage", "population_frame", "shc_epsilon", "validate_coverage", "validate_normality",
    "wilson_interval",
]
