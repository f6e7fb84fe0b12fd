"""Stratified population summaries and their file formats.

A :class:`SurveyFrame` is what every solver consumes: one
:class:`StratumSummary` per stratum (population size, unit cost, covariance
matrix and, optionally, fourth-moment matrices) plus the fixed cost ``c0``.

Two on-disk formats are supported:

* CSV, flat and limited to variances/covariances::

      stratum,N,cost,var_BA,var_Vol,cov_1_2

  covariance columns ``cov_<i>_<j>`` (1-based, ``i < j``) in lexicographic order.
* JSON, general::

      {"g": 2, "fixed_cost": 0.0, "labels": [...],
       "strata": [{"n_population": 11131, "cost": 2.5,
                   "covariance": [[...]], "m4_vech": [[...]] | null,
                   "m4_vec": [[...]] | null, "pilot_n": 30 | null}]}
"""

from __future__ import annotations

import csv
import json
import os
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import matcalc


class SurveyDataError(ValueError):
    """Malformed or invalid survey input."""


def _matrix_or_none(a) -> np.ndarray | None:
    if a is None:
        return None
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class StratumSummary:
    """Per-stratum inputs of the allocation problem.

    ``fourth_moment_vech`` is the ``k x k`` matrix (``k = G(G+1)/2``) of fourth
    central moments of the distinct covariance elements;
    ``fourth_moment_vec`` is the full ``G^2 x G^2`` version. Both are
    optional and only needed by the chance-constrained variants.
    ``pilot_sample_size`` records the (fixed) size of the pilot sample the
    statistics came from; it is never a decision variable.
    """

    population_size: int
    unit_cost: float
    covariance: np.ndarray
    fourth_moment_vech: np.ndarray | None = None
    fourth_moment_vec: np.ndarray | None = None
    pilot_sample_size: int | None = None
    name: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "covariance", _matrix_or_none(self.covariance))
        object.__setattr__(self, "fourth_moment_vech", _matrix_or_none(self.fourth_moment_vech))
        object.__setattr__(self, "fourth_moment_vec", _matrix_or_none(self.fourth_moment_vec))
        self._validate()

    @property
    def label(self) -> str:
        return self.name if self.name is not None else "?"

    def _validate(self) -> None:
        where = f"stratum {self.label}"
        n_pop = self.population_size
        if isinstance(n_pop, bool) or int(n_pop) != n_pop:
            raise SurveyDataError(f"{where}: population size must be an integer, got {n_pop!r}")
        object.__setattr__(self, "population_size", int(n_pop))
        if self.population_size < 2:
            raise SurveyDataError(f"{where}: population size N_h={n_pop} must be >= 2")
        if not np.isfinite(self.unit_cost) or self.unit_cost < 0:
            raise SurveyDataError(f"{where}: unit cost must be finite and >= 0, got {self.unit_cost}")
        object.__setattr__(self, "unit_cost", float(self.unit_cost))

        cov = self.covariance
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or cov.shape[0] == 0:
            raise SurveyDataError(f"{where}: covariance must be a square matrix, got shape {cov.shape}")
        if not np.all(np.isfinite(cov)):
            raise SurveyDataError(f"{where}: covariance has non-finite entries")
        if not matcalc.is_symmetric(cov):
            raise SurveyDataError(f"{where}: covariance is not symmetric")
        if not matcalc.is_positive_semidefinite(cov):
            raise SurveyDataError(f"{where}: covariance is not positive semidefinite")

        g = cov.shape[0]
        k = matcalc.vech_length(g)
        m4 = self.fourth_moment_vech
        if m4 is not None:
            if m4.shape != (k, k):
                raise SurveyDataError(f"{where}: m4_vech must be {k}x{k}, got {m4.shape}")
            if not matcalc.is_symmetric(m4):
                raise SurveyDataError(f"{where}: m4_vech is not symmetric")
            v = matcalc.vech(cov)
            if not matcalc.is_positive_semidefinite(m4 - np.outer(v, v), atol=1e-9):
                # small pilot samples can produce this; the chance constraints then
                # see a negative variance term and reject the frame where it matters
                warnings.warn(f"{where}: m4_vech - vech(S) vech(S)' is not positive semidefinite",
                              stacklevel=3)
        m4v = self.fourth_moment_vec
        if m4v is not None and m4v.shape != (g * g, g * g):
            raise SurveyDataError(f"{where}: m4_vec must be {g * g}x{g * g}, got {m4v.shape}")
        if self.pilot_sample_size is not None:
            if int(self.pilot_sample_size) != self.pilot_sample_size or self.pilot_sample_size < 2:
                raise SurveyDataError(f"{where}: pilot sample size must be an integer >= 2")
            object.__setattr__(self, "pilot_sample_size", int(self.pilot_sample_size))

    @property
    def g(self) -> int:
        return self.covariance.shape[0]

    def variances(self) -> np.ndarray:
        return np.diag(self.covariance).copy()

    def fourth_moment_diagonal(self) -> np.ndarray:
        """Scalar fourth moments ``m4_j`` of each characteristic (needs ``fourth_moment_vech``)."""
        if self.fourth_moment_vech is None:
            raise SurveyDataError(f"stratum {self.label}: fourth moments (m4_vech) are missing")
        pos = matcalc.diagonal_positions(self.g)
        return self.fourth_moment_vech[pos, pos].copy()

    def to_dict(self) -> dict:
        def lst(a):
            return None if a is None else a.tolist()

        return {
            "name": self.name,
            "n_population": self.population_size,
            "cost": self.unit_cost,
            "covariance": lst(self.covariance),
            "m4_vech": lst(self.fourth_moment_vech),
            "m4_vec": lst(self.fourth_moment_vec),
            "pilot_n": self.pilot_sample_size,
        }


@dataclass(frozen=True, eq=False)
class SurveyFrame:
    strata: tuple[StratumSummary, ...]
    fixed_cost: float = 0.0
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        strata = tuple(self.strata)
        object.__setattr__(self, "strata", strata)
        if not strata:
            raise SurveyDataError("survey frame has no strata (H=0)")
        gs = {s.g for s in strata}
        if len(gs) != 1:
            raise SurveyDataError(f"strata disagree on the number of characteristics: {sorted(gs)}")
        if not np.isfinite(self.fixed_cost) or self.fixed_cost < 0:
            raise SurveyDataError(f"fixed cost must be finite and >= 0, got {self.fixed_cost}")
        object.__setattr__(self, "fixed_cost", float(self.fixed_cost))
        if self.labels is not None:
            labels = tuple(str(x) for x in self.labels)
            if len(labels) != self.g:
                raise SurveyDataError(f"expected {self.g} labels, got {len(labels)}")
            object.__setattr__(self, "labels", labels)

    @property
    def h(self) -> int:
        return len(self.strata)

    @property
    def g(self) -> int:
        return self.strata[0].g

    @property
    def k(self) -> int:
        return matcalc.vech_length(self.g)

    @property
    def characteristic_labels(self) -> tuple[str, ...]:
        return self.labels if self.labels is not None else tuple(f"y{j + 1}" for j in range(self.g))

    @property
    def population_sizes(self) -> np.ndarray:
        return np.array([s.population_size for s in self.strata], dtype=float)

    @property
    def n_total(self) -> float:
        return float(self.population_sizes.sum())

    @property
    def relative_sizes(self) -> np.ndarray:
        sizes = self.population_sizes
        return sizes / sizes.sum()

    @property
    def costs(self) -> np.ndarray:
        return np.array([s.unit_cost for s in self.strata])

    @property
    def covariances(self) -> np.ndarray:
        """Stacked ``H x G x G`` covariance matrices."""
        return np.stack([s.covariance for s in self.strata])

    @property
    def variances(self) -> np.ndarray:
        """``H x G`` per-stratum variances."""
        return np.stack([s.variances() for s in self.strata])

    def has_fourth_moments(self) -> bool:
        return all(s.fourth_moment_vech is not None for s in self.strata)

    def has_vec_fourth_moments(self) -> bool:
        return all(s.fourth_moment_vec is not None for s in self.strata)

    def require_fourth_moments(self) -> None:
        for i, s in enumerate(self.strata):
            if s.fourth_moment_vech is None:
                raise SurveyDataError(
                    f"stratum {s.name or i + 1}: fourth moments (m4_vech) are required but missing")

    def require_vec_fourth_moments(self) -> None:
        for i, s in enumerate(self.strata):
            if s.fourth_moment_vec is None:
                raise SurveyDataError(
                    f"stratum {s.name or i + 1}: vec fourth moments (m4_vec) are required but missing")

    def to_dict(self) -> dict:
        return {
            "g": self.g,
            "fixed_cost": self.fixed_cost,
            "labels": None if self.labels is None else list(self.labels),
            "strata": [s.to_dict() for s in self.strata],
        }


def summarize(raw, population_size: int, unit_cost: float, *, divisor: str = "sample",
              name: str | None = None) -> StratumSummary:
    """Plug-in summary of one stratum from observed units.

    ``raw`` is an ``n x G`` array. ``divisor='sample'`` gives the unbiased
    ``1/(n-1)`` covariance; ``'population'`` gives ``1/n`` (use it when ``raw``
    is the whole stratum). The fourth-moment matrices always use ``1/n``.
    """
    y = np.asarray(raw, dtype=float)
    if y.ndim == 1:
        y = y.reshape(-1, 1)
    n, g = y.shape
    if n < 2:
        raise SurveyDataError(f"need at least 2 observations to summarize a stratum, got {n}")
    if divisor not in ("sample", "population"):
        raise ValueError(f"divisor must be 'sample' or 'population', got {divisor!r}")
    d = y - y.mean(axis=0)
    cov = d.T @ d / (n - 1 if divisor == "sample" else n)
    # row i of z is vec(d_i d_i'); sum_i vec(.)vec(.)' equals sum_i (d_i d_i') kron (d_i d_i')
    z = np.einsum("ni,nj->nji", d, d).reshape(n, g * g)
    m4_vec = z.T @ z / n
    dp = matcalc.duplication_pinv(g)
    m4_vech = dp @ m4_vec @ dp.T
    return StratumSummary(
        population_size=population_size,
        unit_cost=unit_cost,
        covariance=0.5 * (cov + cov.T),
        fourth_moment_vech=0.5 * (m4_vech + m4_vech.T),
        fourth_moment_vec=0.5 * (m4_vec + m4_vec.T),
        pilot_sample_size=n,
        name=name,
    )


def _parse_number(text: str, what: str, row: int) -> float:
    try:
        return float(text.replace(" ", ""))
    except (AttributeError, ValueError):
        raise SurveyDataError(f"row {row}: cannot parse {what} value {text!r}") from None


def _read_csv(path: Path, fixed_cost: float) -> SurveyFrame:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = {"N", "cost"} - set(header)
        if missing:
            raise SurveyDataError(f"{path}: missing CSV columns {sorted(missing)}")
        var_cols = [c for c in header if c.startswith("var_")]
        if not var_cols:
            raise SurveyDataError(f"{path}: no var_<label> columns")
        g = len(var_cols)
        cov_cols = {}
        for i in range(g):
            for j in range(i + 1, g):
                col = f"cov_{i + 1}_{j + 1}"
                if col not in header:
                    raise SurveyDataError(f"{path}: missing covariance column {col}")
                cov_cols[(i, j)] = col
        strata = []
        for r, rec in enumerate(reader, start=2):
            cov = np.zeros((g, g))
            for j, col in enumerate(var_cols):
                cov[j, j] = _parse_number(rec[col], col, r)
            for (i, j), col in cov_cols.items():
                cov[i, j] = cov[j, i] = _parse_number(rec[col], col, r)
            n_pop = _parse_number(rec["N"], "N", r)
            name = rec.get("stratum") or str(r - 1)
            strata.append(StratumSummary(
                population_size=n_pop, unit_cost=_parse_number(rec["cost"], "cost", r),
                covariance=cov, name=name))
    labels = tuple(c[len("var_"):] for c in var_cols)
    return SurveyFrame(tuple(strata), fixed_cost=fixed_cost, labels=labels)


def frame_from_dict(doc: dict) -> SurveyFrame:
    try:
        records = doc["strata"]
    except (KeyError, TypeError):
        raise SurveyDataError("JSON survey needs a 'strata' list") from None
    strata = []
    for i, rec in enumerate(records):
        try:
            strata.append(StratumSummary(
                population_size=rec["n_population"],
                unit_cost=rec["cost"],
                covariance=rec["covariance"],
                fourth_moment_vech=rec.get("m4_vech"),
                fourth_moment_vec=rec.get("m4_vec"),
                pilot_sample_size=rec.get("pilot_n"),
                name=rec.get("name") or str(i + 1),
            ))
        except KeyError as exc:
            raise SurveyDataError(f"stratum {i + 1}: missing field {exc.args[0]!r}") from None
    frame = SurveyFrame(tuple(strata), fixed_cost=doc.get("fixed_cost", 0.0), labels=doc.get("labels"))
    if "g" in doc and doc["g"] != frame.g:
        raise SurveyDataError(f"declared g={doc['g']} but covariances are {frame.g}x{frame.g}")
    return frame


def load_survey(path, format: str | None = None, *, fixed_cost: float = 0.0) -> SurveyFrame:
    """Load a survey frame from CSV or JSON; ``format`` defaults to the file suffix."""
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt not in ("csv", "json"):
        raise SurveyDataError(f"unknown survey format {fmt!r} (use csv or json)")
    if fmt == "csv":
        return _read_csv(path, fixed_cost)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SurveyDataError(f"{path}: invalid JSON ({exc})") from None
    return frame_from_dict(doc)


def save_survey(frame: SurveyFrame, path) -> None:
    """Write ``frame`` as JSON (the lossless format)."""
    Path(path).write_text(json.dumps(frame.to_dict(), indent=2))


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("stratalloc.data").joinpath(name)))


def humboldt() -> SurveyFrame:
    """The bundled Humboldt County forest survey (9 strata, basal area and volume)."""
    return load_survey(bundled_path("humboldt.csv"))


def resolve_input(path: str, env_var: str = "STRATALLOC_DATA_DIR") -> Path:
    """Find an input file: as given, then under ``$STRATALLOC_DATA_DIR``, then bundled data."""
    p = Path(path)
    if p.exists():
        return p
    data_dir = os.environ.get(env_var)
    if data_dir and (Path(data_dir) / p).exists():
        return Path(data_dir) / p
    bundled = bundled_path(p.name)
    if bundled.exists():
        return bundled
    raise SurveyDataError(f"input file not found: {path}")


def frame_from_strata(strata: Sequence[StratumSummary], fixed_cost: float = 0.0,
                      labels: Sequence[str] | None = None) -> SurveyFrame:
    return SurveyFrame(tuple(strata), fixed_cost=fixed_cost,
                       labels=None if labels is None else tuple(labels))
