"""
Command-line entry point.

    crossdiff check <coeff-file>
    crossdiff verify <coeff-file>
    crossdiff simulate <config> [--out DIR] [--seed N] [--no-plots]
    crossdiff sweep <config> <param> <start:stop:count> [--threads N]

Results go to stdout as JSON; failures write a JSON error record to stderr
and exit with 2 (validation), 3 (numerical) or 4 (oracle disagreement).
"""

import argparse
import json
import logging
import logging.config
import multiprocessing as mp
import sys
from pathlib import Path

import numpy as np

from crossdiff_project import settings
from .coeff_conditions import (
    check_psd_iff, check_remark_case, check_skt_corollary, check_symmetry, check_theorem_conditions,
    det_hessian_certificate, epsilon_max, hessian_det_A, spectral_oracle_scan, vertex_limits,
)
from .config import (
    apply_override, load_coefficients, load_config, load_document, parse_config, parse_range,
    serialize_config,
)
from .exceptions import (
    EXIT_OK, EXIT_VALIDATION, ConfigError, CrossDiffusionError, OracleDisagreementError, TimeStepUnderflowError,
)
from .output import write_run, write_summary
from .solver import RunResult, diagnostics, run

logger = logging.getLogger(__name__)

ORACLE_RESOLUTIONS = (32, 64, 128)
DEGENERATE_MARGIN = 1e-6
ORACLE_SLACK = 1e-9


def build_parser():
    parser = argparse.ArgumentParser(prog='crossdiff', description=__doc__.split('\n\n')[0].strip())
    parser.add_argument('--log-level', default=None, help='overrides CROSSDIFF_LOG_LEVEL')
    commands = parser.add_subparsers(dest='command', required=True)

    for name, text in (('check', 'print the entropy-structure reports of a coefficient set'),
                       ('verify', 'compare the PSD criterion with the spectral scan')):
        sub = commands.add_parser(name, help=text)
        sub.add_argument('file', nargs='?', help='coefficient file')
        sub.add_argument('--config', help='coefficient file (alternative to the positional argument)')

    sub = commands.add_parser('simulate', help='run one simulation and write its outputs')
    sub.add_argument('file', nargs='?', help='simulation document')
    sub.add_argument('--config', help='simulation document (alternative to the positional argument)')
    _add_run_flags(sub)

    sub = commands.add_parser('sweep', help='run simulate over a range of one parameter')
    sub.add_argument('positional', nargs='+', metavar='ARG', help='[config] param start:stop:count')
    sub.add_argument('--config', help='simulation document')
    sub.add_argument('--threads', type=int, default=settings.THREADS, help='worker processes')
    _add_run_flags(sub)
    return parser


def _add_run_flags(sub):
    sub.add_argument('--out', help='output directory (default CROSSDIFF_OUTPUT_DIR)')
    sub.add_argument('--seed', type=int, default=None, help='seed for randomized initial profiles')
    sub.add_argument('--no-plots', action='store_true', help='skip SVG plots')


def _input_path(args):
    path = args.config or args.file
    if path is None:
        raise ConfigError('config', "no input file given")
    return path


def _emit(document, stream=None):
    stream = stream or sys.stdout
    stream.write(json.dumps(document, indent=2))
    stream.write('\n')


# check / verify

def _matrix_dict(f1, f2, f3):
    return {'origin': f1.tolist(), 'u1_vertex': f2.tolist(), 'u2_vertex': f3.tolist()}


def check_command(args):
    c, skt = load_coefficients(_input_path(args))
    symmetry = check_symmetry(c)
    document = {'command': 'check', 'coefficients': c.to_dict(), 'reports': [symmetry.to_dict()]}
    if skt is not None:
        document['skt'] = skt.to_dict()
        document['reports'].append(check_skt_corollary(skt).to_dict())
    if not symmetry.passed:
        document['skipped'] = 'coefficients are not in the symmetric family'
        _emit(document)
        return EXIT_OK

    psd = check_psd_iff(c)
    for report in (psd, check_theorem_conditions(c), check_remark_case(c)):
        document['reports'].append(report.to_dict())
    document['epsilon_max'] = epsilon_max(c) if psd.passed else None
    document['vertex_limits'] = _matrix_dict(*vertex_limits(c))
    document['det_hessian'] = {
        'closed_form': det_hessian_certificate(c),
        'assembled': float(np.linalg.det(hessian_det_A(c))),
    }
    _emit(document)
    return EXIT_OK


def compare_with_oracle(c, resolutions=ORACLE_RESOLUTIONS):
    """Run the spectral scan at each resolution and compare with the closed-form criterion"""
    psd = check_psd_iff(c)
    degenerate = bool(min(abs(value) for value in psd.margins.values()) <= DEGENERATE_MARGIN)
    slack = ORACLE_SLACK * max(1.0, float(np.max(np.abs(np.concatenate(
        [c.alpha.ravel(), c.beta.ravel(), c.gamma.ravel()])))))
    scans = []
    agree = True
    for n in resolutions:
        scan = spectral_oracle_scan(c, n)
        oracle_passed = bool(scan.unweighted_min >= -slack)
        entry = scan.to_dict()
        entry['oracle_passed'] = oracle_passed
        entry['agrees'] = oracle_passed == bool(psd.passed)
        scans.append(entry)
        agree = agree and entry['agrees']
    details = {'psd_iff': psd.to_dict(), 'scans': scans, 'agree': agree, 'degenerate': degenerate}
    if not agree and degenerate:
        logger.info(f"Criterion and oracle differ on a degenerate set (|margin| <= {DEGENERATE_MARGIN:g}); not failing")
    return details


def verify_command(args):
    c, _ = load_coefficients(_input_path(args))
    details = compare_with_oracle(c)
    document = {'command': 'verify', **details}
    if not details['agree'] and not details['degenerate']:
        raise OracleDisagreementError("check_psd_iff and the spectral scan disagree", document)
    _emit(document)
    return EXIT_OK


# simulate / sweep

def _output_dir(args, config):
    if args.out is not None:
        return Path(args.out)
    if config.output_dir is not None:
        return Path(config.output_dir)
    return settings.OUTPUT_DIR


def _write_outputs(directory, config, result):
    files = write_run(directory, config, result)
    with open(directory / 'config.json', 'w', encoding='utf-8') as fh:
        fh.write(serialize_config(config))
        fh.write('\n')
    return files


def simulate_config(config, directory):
    """Run one configuration and write its artifacts; returns the summary entry.

    A run that aborts on tau underflow still writes what it reached before
    the error propagates.
    """
    directory = Path(directory)
    try:
        result = run(config)
    except TimeStepUnderflowError as exc:
        partial = RunResult(initial=exc.initial, final=exc.state, trajectory=exc.trajectory,
                            initial_diagnostics=diagnostics(exc.initial, config.coefficients, config.reaction))
        _write_outputs(directory, config, partial)
        logger.warning(f"Wrote partial results of {len(exc.trajectory)} steps to {directory}")
        raise
    files = _write_outputs(directory, config, result)
    final = result.trajectory[-1] if result.trajectory else result.initial_diagnostics
    return {
        'directory': str(directory),
        'steps': len(result.trajectory),
        't': result.final.t,
        'entropy_normalized': final.entropy_normalized,
        'min_u3': final.min_u3,
        'files': [path.name for path in files],
    }


def simulate_command(args):
    config = load_config(_input_path(args))
    config = config.with_overrides(seed=args.seed, plots=False if args.no_plots else None)
    summary = simulate_config(config, _output_dir(args, config))
    _emit({'command': 'simulate', **summary})
    return EXIT_OK


def _sweep_point(document, directory, seed, no_plots):
    try:
        config = parse_config(document).with_overrides(seed=seed, plots=False if no_plots else None)
        entry = simulate_config(config, directory)
        entry['exit_code'] = EXIT_OK
    except CrossDiffusionError as exc:
        logger.warning(f"Sweep point {directory} failed: {exc}")
        entry = {'directory': str(directory), 'exit_code': exc.exit_code, 'error': exc.to_record()}
    logger.info(f"Finished sweep point {directory}")
    return entry


def sweep_command(args):
    positional = list(args.positional)
    if args.config is None:
        if len(positional) != 3:
            raise ConfigError('sweep', "expected <config> <param> <start:stop:count>")
        path, parameter, span = positional
    else:
        if len(positional) != 2:
            raise ConfigError('sweep', "expected <param> <start:stop:count> with --config")
        path, (parameter, span) = args.config, positional
    if args.threads < 1:
        raise ConfigError('threads', "must be at least 1")

    document = load_document(path)
    values = parse_range(span)
    points = [apply_override(document, parameter, value) for value in values]
    for point in points:
        parse_config(point)

    root = Path(args.out) if args.out is not None else settings.OUTPUT_DIR
    tasks = [(point, root / f'point_{index:03d}', args.seed, args.no_plots) for index, point in enumerate(points)]
    if args.threads == 1:
        entries = [_sweep_point(*task) for task in tasks]
    else:
        with mp.Pool(processes=min(args.threads, len(tasks))) as pool:
            entries = pool.starmap(_sweep_point, tasks)

    for value, entry in zip(values, entries):
        entry['value'] = value
    summary = {'command': 'sweep', 'parameter': parameter, 'points': entries}
    root.mkdir(parents=True, exist_ok=True)
    write_summary(root / 'summary.json', summary)
    _emit(summary)
    failures = [entry['exit_code'] for entry in entries if entry['exit_code'] != EXIT_OK]
    return failures[0] if failures else EXIT_OK


COMMANDS = {
    'check': check_command,
    'verify': verify_command,
    'simulate': simulate_command,
    'sweep': sweep_command,
}


def configure_logging(level=None):
    logging.config.dictConfig(settings.LOGGING)
    if level is not None:
        logging.getLogger('crossdiff').setLevel(level.upper())


def execute(argv=None):
    """Parse argv, run the command and return its exit status"""
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except CrossDiffusionError as exc:
        _emit(exc.to_record(), sys.stderr)
        return exc.exit_code
    except OSError as exc:
        _emit({'error': type(exc).__name__, 'message': str(exc), 'exit_code': EXIT_VALIDATION}, sys.stderr)
        return EXIT_VALIDATION


def main(argv=None):
    sys.exit(execute(argv))


if __name__ == '__main__':
    main()
