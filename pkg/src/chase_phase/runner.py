import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Any, Callable, Optional

import dotenv

from src.chase_phase.analysis.catalan import (
    ENUMERATION_LIMIT,
    brute_force_catalan,
    root_test_estimate,
    weighted_catalan_table,
)
from src.chase_phase.analysis.contfrac import (
    PHASE_DEFAULTS,
    Verdict,
    classify_phase,
    comparison_bounds,
    constant_profile_radius,
    critical_lambda,
    evaluate_f,
    tail_index,
)
from src.chase_phase.analysis.profile_loader import load_profile
from src.chase_phase.analysis.rates import ArithmeticMode, RateProfile, StepWeights
from src.chase_phase.common import LOGFILE_NAME, LOGGER_NAME, create_logger, get_working_dir, version_stamp
from src.chase_phase.exceptions import (
    ChaseEscapeError,
    EnumerationLimitError,
    InsufficientDataError,
    InvalidParameterError,
    InvalidProfileError,
    NumericalUnderflowError,
    PreconditionError,
)
from src.chase_phase.run_manifest import RunManifest
from src.chase_phase.simulation.jumpchain import reach_rows, reach_table, renewal_frequencies
from src.chase_phase.simulation.seeding import check_seed
from src.chase_phase.simulation.treesim import expected_B_estimate
from src.chase_phase.storage import STDOUT_MARKER, ResultStorage
from src.chase_phase.verifier import BUDGETS, verify_profile

logger = logging.getLogger(LOGGER_NAME)

EXIT_OK: int = 0
EXIT_FAILED: int = 1
EXIT_INPUT: int = 2
EXIT_NO_COEXISTENCE: int = 3
EXIT_INCONCLUSIVE: int = 4
EXIT_PRECONDITION: int = 5

VERDICT_EXIT: dict[Verdict, int] = {
    Verdict.EXPECTED_COEXISTENCE: EXIT_OK,
    Verdict.NO_EXPECTED_COEXISTENCE: EXIT_NO_COEXISTENCE,
    Verdict.BOUNDARY_INCONCLUSIVE: EXIT_INCONCLUSIVE,
}

ORACLE_FLAG_K_MAX: int = 8

EXIT_CODES_HELP: str = """exit codes:
  0  success, or expected coexistence (phase)
  1  verification failed (verify), or an internal invariant broke
  2  invalid input: profile file or arguments
  3  no expected coexistence (phase)
  4  boundary inconclusive (phase)
  5  precondition not met: no flip for critical, bad seed, d < 2
"""


def _config(args: argparse.Namespace) -> dict[str, Any]:
    """Resolved run configuration, embedded in every output document."""
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("handler", "output") and v is not None}


def _emit(
    args: argparse.Namespace,
    storage: ResultStorage,
    document: dict,
    rows: Optional[list[dict]] = None,
    columns: Optional[list[str]] = None,
    profile: Optional[RateProfile] = None,
) -> None:
    """Write the result in the requested format, plus a run manifest when writing to a file."""
    config = _config(args)
    if args.format == "csv" and rows is not None:
        storage.write_csv(args.output, rows, columns, comments={"config": config, "version": version_stamp()})
    else:
        storage.write_json(args.output, {**document, "config": config})
    if args.output and args.output != STDOUT_MARKER:
        manifest = RunManifest.for_run(_command_name(args), config, profile, getattr(args, "profile", None))
        storage.write_text(manifest.manifest_path(args.output), manifest.to_yaml())


def _command_name(args: argparse.Namespace) -> str:
    target = getattr(args, "target", None)
    return f"{args.command} {target}" if target else args.command


def _profile(args: argparse.Namespace) -> RateProfile:
    return load_profile(args.profile)


def cmd_weights(args: argparse.Namespace, storage: ResultStorage) -> int:
    """Dump j, u(j), v(j), a_j and D_j for j = 0..j_max."""
    profile = _profile(args)
    if args.j_max < 0:
        raise InvalidParameterError("j_max", args.j_max)
    weights = StepWeights(profile, ArithmeticMode(args.mode))
    rows = [
        {"j": j, "u": weights.u(j), "v": weights.v(j), "a": weights.a(j), "D_j": weights.death(j)}
        for j in range(args.j_max + 1)
    ]
    _emit(args, storage, {"profile": profile.to_dict(), "rows": rows}, rows, profile=profile)
    return EXIT_OK


def cmd_catalan(args: argparse.Namespace, storage: ResultStorage) -> int:
    """C_k table with inverse roots, the root-test estimate and a brute-force match flag for small k."""
    profile = _profile(args)
    mode = ArithmeticMode(args.mode)
    table = weighted_catalan_table(StepWeights(profile, mode), args.k_max)
    exact_weights = StepWeights(profile, ArithmeticMode.EXACT)
    rows = table.rows()
    for row in rows:
        k = row["k"]
        row["oracle_match"] = None
        if k <= min(ORACLE_FLAG_K_MAX, ENUMERATION_LIMIT):
            expected = brute_force_catalan(exact_weights, k)
            if mode is ArithmeticMode.EXACT:
                row["oracle_match"] = table.values[k] == expected
            else:
                row["oracle_match"] = math.isclose(float(table.values[k]), float(expected), rel_tol=1e-12)
    try:
        root_test = root_test_estimate(table, min(args.window, table.k_max)).to_dict()
    except (InsufficientDataError, InvalidParameterError) as e:
        logger.warning(f"No root-test estimate: {e}")
        root_test = None
    document = {
        "mode": mode,
        "profile": profile.to_dict(),
        "weights_fingerprint": table.weights_fingerprint,
        "root_test": root_test,
        "rows": rows,
    }
    _emit(args, storage, document, rows, profile=profile)
    return EXIT_OK


def cmd_phase(args: argparse.Namespace, storage: ResultStorage) -> int:
    """Phase verdict; the exit code carries the verdict."""
    profile = _profile(args)
    verdict = classify_phase(profile, args.d, tol=args.tol)
    document = verdict.to_dict()
    if args.cutoff:
        document["comparison_bounds"] = comparison_bounds(profile, args.cutoff, args.tol or PHASE_DEFAULTS["tol"]).to_dict()
    row = {
        "verdict": verdict.verdict,
        "d": args.d,
        "M_lower": verdict.M_estimate.lower if verdict.M_estimate else None,
        "M_upper": verdict.M_estimate.upper if verdict.M_estimate else None,
        "profile_fingerprint": verdict.profile_fingerprint,
    }
    _emit(args, storage, document, [row], profile=profile)
    return VERDICT_EXIT[verdict.verdict]


def _closed_form_scale(profile: RateProfile, d: int) -> Optional[float]:
    """t* for a constant lambda and rho = 0, from (1 + t lam)^2 = 4 t lam d."""
    canonical = profile.canonical()
    if canonical.rho_head or canonical.rho_tail != 0 or canonical.lambda_head:
        return None
    lam = float(canonical.lambda_tail) or 1.0
    return (2 * d - 1 - 2 * math.sqrt(d * (d - 1))) / lam


def cmd_critical(args: argparse.Namespace, storage: ResultStorage) -> int:
    """Critical scale t* of lambda at fixed rho."""
    profile = _profile(args)
    result = critical_lambda(profile, args.d, t_min=args.t_min, t_max=args.t_max, tol=args.tol)
    document = result.to_dict()
    closed_form = _closed_form_scale(profile, args.d)
    if closed_form is not None:
        lam = float(profile.canonical().lambda_tail) or 1.0
        document["closed_form_t_star"] = closed_form
        document["closed_form_radius_at_t_star"] = constant_profile_radius(result.t_star * lam)
    row = {"d": args.d, "t_star": result.t_star, "lower": result.lower, "upper": result.upper}
    _emit(args, storage, document, [row], profile=profile)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, storage: ResultStorage) -> int:
    profile = _profile(args)
    check_seed(args.seed)
    if args.target == "line":
        frequencies = renewal_frequencies(profile, args.runs, args.k_max, args.seed, args.threads)
        table = reach_table(profile, max(args.k_max, 1), ArithmeticMode.EXACT)
        catalan = weighted_catalan_table(StepWeights(profile, ArithmeticMode.EXACT), args.k_max)
        rows = reach_rows(table, catalan.values, frequencies)
        document = {"profile": profile.to_dict(), "seed": args.seed, "rows": rows}
        _emit(args, storage, document, rows, profile=profile)
        return EXIT_OK

    estimate = expected_B_estimate(
        profile, args.d, args.depth_cap, args.runs, args.seed, args.threads, args.max_events
    )
    rows = [outcome.row() for outcome in estimate.outcomes]
    summary = estimate.to_dict()
    if args.format == "csv":
        _emit(args, storage, {"summary": summary}, rows, profile=profile)
        if args.output and args.output != STDOUT_MARKER:
            output = Path(args.output)
            storage.write_json(output.with_name(f"{output.stem}.summary.json"), {"summary": summary, "config": _config(args)})
        else:
            logger.info(f"Summary: {summary}")
    else:
        _emit(args, storage, {"summary": summary, "runs": rows}, profile=profile)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace, storage: ResultStorage) -> int:
    profile = _profile(args)
    report = verify_profile(profile, args.budget, seed=args.seed, threads=args.threads, d=args.d)
    _emit(args, storage, report.to_dict(), report.rows(), profile=profile)
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_evaluate(args: argparse.Namespace, storage: ResultStorage) -> int:
    """f(z) by continued fraction next to the truncated power series at z."""
    profile = _profile(args)
    weights = StepWeights(profile, ArithmeticMode.FLOAT)
    evaluation = evaluate_f(weights, args.z, tol=args.tol)
    table = weighted_catalan_table(StepWeights(profile, ArithmeticMode.LOG), args.k_max)
    document = {
        "z": args.z,
        "f": evaluation.to_dict(),
        "tail_index": tail_index(weights, args.z),
        "series": table.series(args.z),
        "series_k_max": table.k_max,
        "profile": profile.to_dict(),
    }
    row = {
        "z": args.z,
        "status": evaluation.status,
        "f": evaluation.value,
        "series": document["series"],
        "tail_index": document["tail_index"],
    }
    _emit(args, storage, document, [row], profile=profile)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--profile", required=True, help="Rate profile file (YAML)")
    common.add_argument("--format", choices=["csv", "json"], default="json", help="Output format (default: json)")
    common.add_argument("-o", "--output", help="Output file; '-' or absent for standard output")
    common.add_argument("--threads", type=int, help="Worker processes (default: CHASE_PHASE_THREADS or CPU count)")

    mode_choice = [mode.value for mode in ArithmeticMode]

    parser = argparse.ArgumentParser(
        description="Chase-escape phase structure on d-ary trees",
        epilog=EXIT_CODES_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    weights_parser = subparsers.add_parser("weights", parents=[common], help="Step weights u, v, a and D_j")
    weights_parser.add_argument("--j-max", type=int, default=10, help="Largest j (default: 10)")
    weights_parser.add_argument("--mode", choices=["exact", "float"], default="exact")
    weights_parser.set_defaults(handler=cmd_weights)

    catalan_parser = subparsers.add_parser("catalan", parents=[common], help="Weighted Catalan numbers")
    catalan_parser.add_argument("--k-max", type=int, default=20, help="Largest k (default: 20)")
    catalan_parser.add_argument("--mode", choices=mode_choice, default="exact")
    catalan_parser.add_argument(
        "--window", type=int, default=int(PHASE_DEFAULTS["root_test_window"]), help="Root-test window"
    )
    catalan_parser.set_defaults(handler=cmd_catalan)

    phase_parser = subparsers.add_parser(
        "phase", parents=[common], help="Expected coexistence verdict (exit 0 / 3 / 4)"
    )
    phase_parser.add_argument("--d", type=int, required=True, help="Branching factor")
    phase_parser.add_argument("--tol", type=float, help="Phase tolerance")
    phase_parser.add_argument("--cutoff", type=int, help="Also bracket M by profiles truncated at this index")
    phase_parser.set_defaults(handler=cmd_phase)

    critical_parser = subparsers.add_parser("critical", parents=[common], help="Critical lambda scale")
    critical_parser.add_argument("--d", type=int, required=True, help="Branching factor")
    critical_parser.add_argument("--tol", type=float, help="Width of the final bracket")
    critical_parser.add_argument("--t-min", type=float, help="Lower end of the scale search (default: min(0.001, 1/(8d)))")
    critical_parser.add_argument("--t-max", type=float, help="Upper end of the scale search")
    critical_parser.set_defaults(handler=cmd_critical)

    simulate_parser = subparsers.add_parser("simulate", parents=[common], help="Monte Carlo simulation")
    simulate_parser.add_argument("target", choices=["line", "tree"], help="Half-line jump chain or truncated tree")
    simulate_parser.add_argument("--seed", type=int, default=0, help="Master seed (unsigned 64-bit)")
    simulate_parser.add_argument("--runs", type=int, default=10_000, help="Number of runs")
    simulate_parser.add_argument("--k-max", type=int, default=6, help="Largest renewal index (line)")
    simulate_parser.add_argument("--d", type=int, default=2, help="Branching factor (tree)")
    simulate_parser.add_argument("--depth-cap", type=int, default=10, help="Depth cap (tree)")
    simulate_parser.add_argument("--max-events", type=int, help="Event limit per run (tree)")
    simulate_parser.set_defaults(handler=cmd_simulate)

    verify_parser = subparsers.add_parser("verify", parents=[common], help="Run the invariant suite")
    verify_parser.add_argument("--budget", choices=sorted(BUDGETS), default="default")
    verify_parser.add_argument("--seed", type=int, default=0, help="Master seed (unsigned 64-bit)")
    verify_parser.add_argument("--d", type=int, help="Branching factor for the series check")
    verify_parser.set_defaults(handler=cmd_verify)

    evaluate_parser = subparsers.add_parser("evaluate", parents=[common], help="Evaluate f(z) and the series")
    evaluate_parser.add_argument("--z", type=float, required=True, help="Evaluation point (> 0)")
    evaluate_parser.add_argument("--tol", type=float, help="Continued-fraction tolerance")
    evaluate_parser.add_argument("--k-max", type=int, default=200, help="Terms of the power series")
    evaluate_parser.set_defaults(handler=cmd_evaluate)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    # Load environment variables first
    dotenv.load_dotenv()

    parser = build_parser()
    args = parser.parse_args(argv)
    create_logger(LOGGER_NAME, str(get_working_dir() / LOGFILE_NAME))

    handler: Optional[Callable[[argparse.Namespace, ResultStorage], int]] = getattr(args, "handler", None)
    if handler is None:
        parser.print_help()
        return EXIT_INPUT

    storage = ResultStorage()
    try:
        return handler(args, storage)
    except InvalidProfileError as e:
        logger.error(str(e))
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as e:
        logger.error(f"Cannot read input: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (
        PreconditionError,
        InvalidParameterError,
        InsufficientDataError,
        NumericalUnderflowError,
        EnumerationLimitError,
    ) as e:
        logger.error(str(e))
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_PRECONDITION
    except ChaseEscapeError as e:
        logger.error(f"Unexpected failure: {e}", exc_info=True)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
