"""Command-line interface: homog cell | solve | sweep | verify."""

import argparse
import json
import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import List, Optional

from src.cell_problems import corrector_norms, solve_cell
from src.correctors import avg_grad_error, corrector_h1_gap
from src.pde_solvers import (
    ProblemSpec,
    oscillating_gradient_norm,
    solve_homogenized,
    solve_oscillating_family,
    stability_bound,
)
from src.report import save_report
from src.study import parse_config, parse_eps, run_sweep, verify
from src.utils import (
    calculate_processing_stats,
    ensure_directories,
    print_processing_summary,
    load_config,
    resolve_workers,
    setup_logging,
)

logger = logging.getLogger(__name__)


def _load_spec(path: str) -> ProblemSpec:
    logger.info(f"Loading configuration from {path}")
    return parse_config(load_config(path))


def _write_json(data: dict, path: str):
    ensure_directories(Path(path).parent)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2)
    logger.info(f"Wrote {path}")


def _cell_solution(spec: ProblemSpec, workers: int):
    x_points = spec.domain_grid().coordinates() if spec.coefficient.depends_on_x else None
    return solve_cell(spec.coefficient, spec.M, spec.cg_tol, x_points=x_points, max_workers=workers)


def cmd_cell(args) -> int:
    spec = _load_spec(args.config)
    workers = resolve_workers(spec.workers)
    cs = _cell_solution(spec, workers)
    summary = {
        'a_hom': cs.a_hom.tolist() if cs.depends_on_x else cs.a_hom_matrix.tolist(),
        'residual': cs.residual,
        'iterations': cs.iterations,
        'chi_norms': corrector_norms(cs),
        'alpha': cs.alpha,
        'beta': cs.beta,
    }
    if not cs.depends_on_x:
        print(f"a_hom = {summary['a_hom']}")
    print(f"residual = {cs.residual:.3e}")
    if args.out:
        _write_json(summary, args.out)
    return 0


def cmd_solve(args) -> int:
    spec = _load_spec(args.config)
    eps = parse_eps(args.eps)
    workers = resolve_workers(spec.workers)
    cs = _cell_solution(spec, workers)
    u0 = solve_homogenized(spec, cs)
    u_eps = solve_oscillating_family(spec, eps, workers)
    summary = {
        'eps': eps,
        'h1_gap': corrector_h1_gap(u_eps, u0),
        'avg_grad_error': avg_grad_error(u_eps, u0),
        'grad_norm': oscillating_gradient_norm(u_eps),
        'stability_bound': stability_bound(u0.grid, spec.coefficient.alpha, spec.source),
    }
    for key, value in summary.items():
        print(f"{key} = {value:.12g}")
    if args.out:
        _write_json(summary, args.out)
    return 0


def cmd_sweep(args) -> int:
    start_time = datetime.now()
    spec = _load_spec(args.config)
    fmt = args.format or spec.format
    out = args.out or spec.out or f"output/report.{fmt}"
    report = run_sweep(spec)
    save_report(report, out, fmt)

    stats = calculate_processing_stats(
        start_time,
        len(report.rows),
        report.solves,
        sum(1 for row in report.rows if row['bound_ok'])
    )
    print_processing_summary(stats)
    return 0


def cmd_verify(args) -> int:
    spec = _load_spec(args.config)
    results = verify(spec)
    for result in results:
        status = 'PASS' if result.passed else 'FAIL'
        print(f"[{status}] {result.name} {result.detail}".rstrip())
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.error(f"{len(failed)} check(s) failed: {', '.join(failed)}")
        return 1
    logger.info(f"All {len(results)} checks passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='homog', description='Periodic homogenization by cell averaging')
    parser.add_argument(
        '--log-level',
        default='INFO',
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
        help='Logging level'
    )
    sub = parser.add_subparsers(dest='command', required=True)

    cell = sub.add_parser('cell', help='Solve the cell problems and report a_hom')
    cell.add_argument('--config', required=True, help='Path to configuration file')
    cell.add_argument('--out', help='Write a JSON summary here')
    cell.set_defaults(func=cmd_cell)

    solve = sub.add_parser('solve', help='Solve the homogenized problem and one oscillating family')
    solve.add_argument('--config', required=True, help='Path to configuration file')
    solve.add_argument('--eps', required=True, help="Scale, a number or 'p/q'")
    solve.add_argument('--out', help='Write a JSON summary here')
    solve.set_defaults(func=cmd_solve)

    sweep = sub.add_parser('sweep', help='Run the eps sweep and write the report')
    sweep.add_argument('--config', required=True, help='Path to configuration file')
    sweep.add_argument('--out', help='Report path (defaults to the config out key)')
    sweep.add_argument('--format', choices=['csv', 'json'], help='Report format')
    sweep.set_defaults(func=cmd_sweep)

    check = sub.add_parser('verify', help='Run the acceptance checks for a config')
    check.add_argument('--config', required=True, help='Path to configuration file')
    check.set_defaults(func=cmd_verify)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    args = build_parser().parse_args(argv)

    # Setup logging
    setup_logging(args.log_level)

    try:
        return args.func(args)
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return 0
    except Exception as e:
        logger.error(f"Fatal error: {e}")
        return 1


if __name__ == '__main__':
    sys.exit(main())
