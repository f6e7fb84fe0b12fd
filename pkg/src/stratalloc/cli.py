"""Command-line front end: ``solve``, ``check``, ``moments`` and ``simulate``.

Exit status is 0 on success, 1 on input or validation errors and 2 when the
problem (or the checked allocation) is infeasible. The data directory can be
set with ``STRATALLOC_DATA_DIR``; explicit flags always win.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from typing import Sequence

import numpy as np

from . import estimators
from .estimators import AllocationError
from .simulator import (GaussianGenerator, SimulationError, SyntheticPopulationSpec, generate_population,
                        validate_coverage, validate_normality)
from .solvers import Formulation, ProblemError, ProblemSpec, check_allocation, solve
from .strata import SurveyDataError, load_survey, resolve_input

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE = 0, 1, 2

_NEEDS = {
    Formulation.PER_VARIABLE: ("v0",),
    Formulation.PREKOPA: ("v0", "p0"),
    Formulation.TRACE: ("tau", "p0"),
    Formulation.TRACE_DETERMINISTIC: ("tau",),
    Formulation.DET: ("tau", "p0"),
}


class InputError(ValueError):
    pass


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers (inf allowed), got {text!r}") from None


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stratalloc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", default="humboldt.csv",
                        help="survey file (CSV or JSON); looked up in $STRATALLOC_DATA_DIR and bundled data")
    common.add_argument("--format", choices=("csv", "json"), help="input format (default: file suffix)")
    common.add_argument("--output", choices=("table", "json"), default="table")
    problem = argparse.ArgumentParser(add_help=False)
    problem.add_argument("--formulation", default="per-variable",
                         help="per-variable | prekopa | trace | trace-det | det")
    problem.add_argument("--v0", type=_float_list, help="precision bounds, one per characteristic (inf to skip)")
    problem.add_argument("--tau", type=float)
    problem.add_argument("--p0", type=float)
    problem.add_argument("--total-n", type=int, dest="total_n")

    p = sub.add_parser("solve", parents=[common, problem], help="minimum-cost allocation")
    p.add_argument("--node-limit", type=int, default=200_000, dest="node_limit")
    p.add_argument("--time-limit", type=float, default=None, dest="time_limit")
    p = sub.add_parser("check", parents=[common, problem], help="evaluate a given allocation")
    p.add_argument("--alloc", type=_int_list, required=True)
    p = sub.add_parser("moments", parents=[common], help="estimator moments at an allocation")
    p.add_argument("--alloc", type=_int_list, required=True)
    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo check on a gaussian population "
                       "built from the input's covariances")
    p.add_argument("--alloc", type=_int_list, required=True)
    p.add_argument("--tau", type=float, help="coverage threshold; omit for a normality check")
    p.add_argument("--formulation", default="trace", help="trace | det (functional for the coverage check)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replications", type=int, default=10_000)
    return parser


def make_spec(args) -> ProblemSpec:
    """Build the problem, rejecting parameters the formulation does not use."""
    form = Formulation.parse(args.formulation)
    needs = _NEEDS[form]
    given = {k for k in ("v0", "tau", "p0") if getattr(args, k) is not None}
    missing = [k for k in needs if k not in given]
    if missing:
        raise InputError(f"--formulation {args.formulation} needs " + ", ".join(f"--{k}" for k in missing))
    extra = sorted(given - set(needs))
    if extra:
        raise InputError(f"--formulation {args.formulation} does not use " + ", ".join(f"--{k}" for k in extra))
    return ProblemSpec(form, v0=args.v0, tau=args.tau, p0=args.p0, total_n=args.total_n)


def _fmt(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{x:.6g}"


def _table(header: Sequence[str], row: Sequence) -> str:
    cells = [_fmt(v) if not isinstance(v, str) else v for v in row]
    widths = [max(len(h), len(c)) for h, c in zip(header, cells)]
    return "\n".join([" ".join(h.rjust(w) for h, w in zip(header, widths)),
                      " ".join(c.rjust(w) for c, w in zip(cells, widths))])


def _pairs(items) -> str:
    items = list(items)
    width = max((len(k) for k, _ in items), default=0)
    return "\n".join(f"{k.ljust(width)}  {v if isinstance(v, str) else _fmt(v)}" for k, v in items)


def _allocation_row(n, hats, cost, labels) -> str:
    header = [f"n{h + 1}" for h in range(len(n))] + [f"Var[{lab}]" for lab in labels] + ["cost"]
    return _table(header, list(n) + list(hats) + [cost])


def render_solve(report, frame) -> str:
    lines = []
    if report.allocation is not None:
        lines.append(_allocation_row(report.allocation.n, report.variance_hats, report.objective_cost,
                                     frame.characteristic_labels))
        lines.append("")
    items = [("formulation", report.formulation), ("status", report.status),
             ("feasible", str(report.feasible))]
    items += [(f"constraint {k}", v) for k, v in report.constraint_values.items()]
    items += [("nodes explored", report.nodes_explored), ("relaxation bound", report.relaxation_bound),
              ("lower bound", report.lower_bound), ("wall time [s]", report.wall_time)]
    if report.certificate:
        items.append(("certificate", report.certificate))
    lines.append(_pairs(items))
    return "\n".join(lines)


def render_check(report, frame) -> str:
    items = [("feasible", str(report.feasible)), ("total n", report.total_n)]
    for k, v in report.constraint_values.items():
        items.append((f"constraint {k}", v))
        items.append((f"slack {k}", -v))
    return _allocation_row(report.allocation, report.variance_hats, report.cost,
                           frame.characteristic_labels) + "\n\n" + _pairs(items)


def _matrix(name: str, a) -> list[tuple[str, str]]:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    return [(name if i == 0 else "", " ".join(f"{v:.6g}" for v in row)) for i, row in enumerate(a)]


def render_moments(report) -> str:
    items = [("allocation", " ".join(str(x) for x in report.allocation))]
    items += _matrix("cov_hat", report.cov_hat)
    items += _matrix("mean vech", report.mean_vech)
    if report.cov_vech is not None:
        items += _matrix("cov vech", report.cov_vech)
    items += [("trace mean", report.trace_mean), ("trace var", report.trace_var)]
    return _pairs(items)


def render_coverage(report) -> str:
    items = [("replications", report.replications), ("functional", report.functional or "-"),
             ("tau", report.tau), ("empirical probability", report.empirical_probability),
             ("nominal p0", report.nominal_p0)]
    if report.wilson_interval is not None:
        items.append(("wilson 95%", f"{report.wilson_interval[0]:.6g} {report.wilson_interval[1]:.6g}"))
    for key, st in report.normality_stats.items():
        items.append((f"{key} mean z", " ".join(f"{v:.6g}" for v in st.mean_z)))
        items.append((f"{key} cov rel err", st.cov_rel_error))
        items.append((f"{key} skewness", " ".join(f"{v:.6g}" for v in st.skewness)))
        items.append((f"{key} excess kurt", " ".join(f"{v:.6g}" for v in st.excess_kurtosis)))
        items.append((f"{key} max cdf gap", " ".join(f"{v:.6g}" for v in st.max_cdf_gap)))
    return _pairs(items)


def _json_default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _dump(doc: dict) -> str:
    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        return v

    return json.dumps(clean(doc), indent=2, default=_json_default, allow_nan=False)


def _simulate(args, frame):
    gens = tuple(GaussianGenerator(tuple([0.0] * frame.g), s.covariance) for s in frame.strata)
    pop_spec = SyntheticPopulationSpec(tuple(int(n) for n in frame.population_sizes), gens, seed=args.seed)
    population = generate_population(pop_spec)
    if args.tau is None:
        return validate_normality(population, args.alloc, args.replications, args.seed)
    functional = args.formulation.strip().lower()
    if functional not in ("trace", "det"):
        raise InputError(f"simulate --formulation must be trace or det, got {args.formulation!r}")
    return validate_coverage(population, args.alloc, args.tau, functional, args.replications, args.seed)


def run(argv: Sequence[str] | None = None, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    args = build_parser().parse_args(argv)
    try:
        frame = load_survey(resolve_input(args.input), args.format)
        if args.command == "solve":
            spec = make_spec(args)
            spec.validate(frame)
            report = solve(spec, frame, node_limit=args.node_limit, time_limit=args.time_limit)
            print(_dump(report.to_dict()) if args.output == "json" else render_solve(report, frame), file=out)
            if report.status == "infeasible":
                return EXIT_INFEASIBLE
            if report.allocation is None:
                print("error: search limit reached before any feasible allocation was found", file=err)
                return EXIT_INPUT
            return EXIT_OK
        if args.command == "check":
            spec = make_spec(args)
            report = check_allocation(args.alloc, spec, frame)
            print(_dump(report.to_dict()) if args.output == "json" else render_check(report, frame), file=out)
            return EXIT_OK if report.feasible else EXIT_INFEASIBLE
        if args.command == "moments":
            report = estimators.moment_report(args.alloc, frame)
            print(_dump(report.to_dict()) if args.output == "json" else render_moments(report), file=out)
            return EXIT_OK
        report = _simulate(args, frame)
        print(_dump(report.to_dict()) if args.output == "json" else render_coverage(report), file=out)
        return EXIT_OK
    except (InputError, SurveyDataError, ProblemError, AllocationError, SimulationError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_INPUT
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_INPUT


def main(argv: Sequence[str] | None = None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
