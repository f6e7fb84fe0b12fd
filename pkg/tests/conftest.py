import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stratalloc import matcalc
from stratalloc.strata import StratumSummary, frame_from_strata

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# lines recorded by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def gaussian_m4(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fourth-moment matrices of a centred gaussian: vec form and vech form."""
    g = cov.shape[0]
    v = cov.reshape(-1, order="F")
    k = matcalc.commutation_matrix(g, g)
    m4_vec = np.outer(v, v) + (np.eye(g * g) + k) @ np.kron(cov, cov)
    dp = matcalc.duplication_pinv(g)
    return m4_vec, dp @ m4_vec @ dp.T


def random_frame(rng: np.random.Generator, *, h: int | None = None, g: int = 2, max_n: int = 8,
                 full_rank_vec: bool = False, half_costs: bool = True):
    """Small random frame with positive-definite covariances and gaussian (or synthetic) fourth moments."""
    h = int(rng.integers(1, 4)) if h is None else h
    strata = []
    for _ in range(h):
        big = int(rng.integers(2, max_n + 1))
        a = rng.normal(size=(g, g))
        cov = a @ a.T + 0.1 * np.eye(g)
        if full_rank_vec:
            b = rng.normal(size=(g * g, g * g))
            v = cov.reshape(-1, order="F")
            m4_vec = b @ b.T + 0.1 * np.eye(g * g) + np.outer(v, v)
            dp = matcalc.duplication_pinv(g)
            m4_vech = dp @ m4_vec @ dp.T
        else:
            m4_vec, m4_vech = gaussian_m4(cov)
        cost = float(rng.integers(1, 5)) * (0.5 if half_costs else 1.0)
        strata.append(StratumSummary(big, cost, cov, m4_vech, m4_vec))
    return frame_from_strata(strata)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
