import csv
import io
import json
import tempfile
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path
from unittest import TestCase, mock

import pytest

from . import solver
from .cli import execute
from .coeff_conditions import CoeffSet, OracleScan, segregation_matrix
from .config import parse_config, serialize_config
from .entropy_geometry import StatePoint
from .exceptions import EXIT_NUMERICAL, EXIT_OK, EXIT_ORACLE, EXIT_VALIDATION, NewtonConvergenceError
from .test_factories import SimDocumentFactory, reseed


def read_rows(path):
    with open(path, 'r', newline='', encoding='utf-8') as fh:
        return list(csv.DictReader(fh))


@pytest.mark.integration
class CommandLineTest(TestCase):
    def setUp(self):
        reseed('cli')
        self.workdir = tempfile.TemporaryDirectory()
        self.root = Path(self.workdir.name)

    def tearDown(self):
        self.workdir.cleanup()

    def write_json(self, name, document):
        path = self.root / name
        path.write_text(json.dumps(document), encoding='utf-8')
        return str(path)

    def invoke(self, *argv):
        out, err = io.StringIO(), io.StringIO()
        with redirect_stdout(out), redirect_stderr(err):
            code = execute(['--log-level', 'error', *argv])
        return code, out.getvalue(), err.getvalue()

    def test_check_segregation_matrix(self):
        """Test check on P reports the strict conditions and epsilon_max = 1"""
        path = self.write_json('p.json', segregation_matrix().to_dict())
        code, out, _ = self.invoke('check', path)
        self.assertEqual(code, EXIT_OK)
        document = json.loads(out)
        reports = {report['label']: report for report in document['reports']}
        self.assertTrue(reports['symmetry']['passed'])
        self.assertTrue(reports['psd_iff']['passed'])
        self.assertTrue(reports['theorem_strict']['passed'])
        self.assertAlmostEqual(document['epsilon_max'], 1.0, places=12)
        self.assertEqual(document['vertex_limits']['origin'], [[1.0, 0.0], [0.0, 1.0]])

    def test_check_skips_non_symmetric_sets(self):
        """Test check stops after the symmetry report"""
        c = CoeffSet(alpha=[[1.0, 0.0], [0.0, 1.0]], beta=[[1.0, 0.3], [0.0, 0.0]], gamma=[[0.0, 0.0], [0.0, 1.0]])
        code, out, _ = self.invoke('check', '--config', self.write_json('c.json', c.to_dict()))
        self.assertEqual(code, EXIT_OK)
        document = json.loads(out)
        self.assertIn('skipped', document)
        self.assertEqual([report['label'] for report in document['reports']], ['symmetry'])

    def test_verify_failing_set(self):
        """Test verify agrees with the spectral scan on a set that is not PSD"""
        c = CoeffSet.symmetric(alpha11=1.0, alpha22=1.0, beta11=0.0, beta12=2.0, gamma22=0.0)
        code, out, _ = self.invoke('verify', self.write_json('c.json', c.to_dict()))
        self.assertEqual(code, EXIT_OK)
        document = json.loads(out)
        self.assertTrue(document['agree'])
        self.assertFalse(document['psd_iff']['passed'])
        self.assertEqual([scan['n'] for scan in document['scans']], [32, 64, 128])

    def test_verify_non_symmetric_set_is_error(self):
        """Test verify refuses sets outside the symmetric family"""
        c = CoeffSet(alpha=[[1.0, 0.0], [0.0, 1.0]], beta=[[1.0, 0.3], [0.0, 0.0]], gamma=[[0.0, 0.0], [0.0, 1.0]])
        code, _, err = self.invoke('verify', self.write_json('c.json', c.to_dict()))
        self.assertEqual(code, EXIT_VALIDATION)
        self.assertEqual(json.loads(err)['error'], 'PreconditionError')

    def test_simulate_writes_artifacts(self):
        """Test simulate writes diagnostics, snapshots and the resolved config"""
        path = self.write_json('sim.json', SimDocumentFactory())
        out_dir = self.root / 'run'
        code, out, _ = self.invoke('simulate', path, '--out', str(out_dir))
        self.assertEqual(code, EXIT_OK)
        summary = json.loads(out)
        self.assertEqual(summary['steps'], 10)
        for name in ('diagnostics.csv', 'initial.csv', 'final.csv', 'config.json'):
            self.assertTrue((out_dir / name).exists(), name)
        self.assertFalse((out_dir / 'entropy.svg').exists())
        rows = read_rows(out_dir / 'diagnostics.csv')
        self.assertEqual(len(rows), 11)
        self.assertEqual(rows[0]['step'], '0')
        entropies = [float(row['entropy_raw']) for row in rows]
        self.assertTrue(all(b <= a + 1e-10 for a, b in zip(entropies, entropies[1:])))

    def test_simulate_cadence_keeps_last_row(self):
        """Test that thinned diagnostics still end with the last step"""
        path = self.write_json('sim.json', SimDocumentFactory(output__cadence=4))
        out_dir = self.root / 'run'
        self.invoke('simulate', path, '--out', str(out_dir))
        rows = read_rows(out_dir / 'diagnostics.csv')
        self.assertEqual([row['step'] for row in rows], ['0', '4', '8', '10'])

    def test_simulate_zero_duration(self):
        """Test t_end = 0 writes the initial snapshot only"""
        path = self.write_json('sim.json', SimDocumentFactory(time__t_end=0.0))
        out_dir = self.root / 'run'
        code, _, _ = self.invoke('simulate', path, '--out', str(out_dir))
        self.assertEqual(code, EXIT_OK)
        self.assertTrue((out_dir / 'initial.csv').exists())
        self.assertFalse((out_dir / 'final.csv').exists())
        self.assertEqual(len(read_rows(out_dir / 'diagnostics.csv')), 1)

    def test_simulate_writes_plots(self):
        """Test the SVG plots when they are enabled"""
        path = self.write_json('sim.json', SimDocumentFactory(output__plots=True, time__t_end=0.002))
        out_dir = self.root / 'run'
        code, _, _ = self.invoke('simulate', path, '--out', str(out_dir))
        self.assertEqual(code, EXIT_OK)
        self.assertTrue((out_dir / 'entropy.svg').read_text(encoding='utf-8').lstrip().startswith('<?xml'))
        self.assertTrue((out_dir / 'profiles.svg').exists())

    def test_simulate_is_deterministic(self):
        """Test two runs of the same document give byte-identical files"""
        path = self.write_json('sim.json', SimDocumentFactory(initial__profile='random', output__plots=True, seed=7))
        for name in ('a', 'b'):
            self.invoke('simulate', path, '--out', str(self.root / name))
        for name in ('diagnostics.csv', 'final.csv', 'entropy.svg', 'profiles.svg'):
            self.assertEqual((self.root / 'a' / name).read_bytes(), (self.root / 'b' / name).read_bytes(), name)

    def test_seed_flag_changes_random_profile(self):
        """Test --seed overrides the document seed"""
        path = self.write_json('sim.json', SimDocumentFactory(initial__profile='random', time__t_end=0.0))
        self.invoke('simulate', path, '--out', str(self.root / 'a'), '--seed', '1')
        self.invoke('simulate', path, '--out', str(self.root / 'b'), '--seed', '2')
        self.assertNotEqual((self.root / 'a' / 'initial.csv').read_bytes(),
                            (self.root / 'b' / 'initial.csv').read_bytes())

    def test_validation_errors(self):
        """Test schema and admissibility failures exit with the validation code"""
        document = SimDocumentFactory()
        del document['time']['tau']
        code, _, err = self.invoke('simulate', self.write_json('no_tau.json', document))
        self.assertEqual(code, EXIT_VALIDATION)
        record = json.loads(err)
        self.assertEqual(record['error'], 'ConfigError')
        self.assertEqual(record['key'], 'tau')

        document = SimDocumentFactory(coefficients__skt__a10=0.0, coefficients__skt__a20=0.0)
        code, _, err = self.invoke('simulate', self.write_json('a10.json', document))
        self.assertEqual(code, EXIT_VALIDATION)
        self.assertEqual(json.loads(err)['error'], 'AdmissibilityError')

        code, _, err = self.invoke('simulate', str(self.root / 'missing.json'))
        self.assertEqual(code, EXIT_VALIDATION)
        self.assertEqual(json.loads(err)['error'], 'FileNotFoundError')

    def test_numerical_failure_keeps_partial_results(self):
        """Test a run that stops on tau underflow exits with the numerical code and keeps its steps"""
        path = self.write_json('sim.json', SimDocumentFactory(time__tau_min=4e-4))
        out_dir = self.root / 'run'
        real = solver.step_implicit
        calls = []

        def failing_after_five(state, c, r, tau, step=1):
            calls.append(tau)
            if len(calls) > 5:
                raise NewtonConvergenceError("forced", iterate=state.w, residual=1.0, iterations=50)
            return real(state, c, r, tau, step=step)

        with mock.patch.object(solver, 'step_implicit', side_effect=failing_after_five):
            code, _, err = self.invoke('simulate', path, '--out', str(out_dir))
        self.assertEqual(code, EXIT_NUMERICAL)
        record = json.loads(err)
        self.assertEqual(record['error'], 'TimeStepUnderflowError')
        self.assertEqual(record['steps'], 5)
        rows = read_rows(out_dir / 'diagnostics.csv')
        self.assertEqual([row['step'] for row in rows], ['0', '1', '2', '3', '4', '5'])
        final = read_rows(out_dir / 'final.csv')
        self.assertEqual(len(final), 16)
        self.assertTrue((out_dir / 'config.json').exists())

    def test_underflow_before_first_step(self):
        """Test an immediate underflow still writes the initial state"""
        path = self.write_json('sim.json', SimDocumentFactory(time__tau_min=9e-4))
        out_dir = self.root / 'run'
        failure = NewtonConvergenceError("forced", iterate=None, residual=1.0, iterations=50)
        with mock.patch.object(solver, 'step_implicit', side_effect=failure):
            code, _, err = self.invoke('simulate', path, '--out', str(out_dir))
        self.assertEqual(code, EXIT_NUMERICAL)
        self.assertEqual(json.loads(err)['steps'], 0)
        self.assertEqual(len(read_rows(out_dir / 'diagnostics.csv')), 1)
        self.assertTrue((out_dir / 'initial.csv').exists())
        self.assertFalse((out_dir / 'final.csv').exists())

    def test_verify_reports_oracle_disagreement(self):
        """Test verify exits with the oracle code when the scan contradicts the criterion"""
        c = CoeffSet.symmetric(alpha11=1.0, alpha22=1.0, beta11=1.0, beta12=0.5, gamma22=1.0)
        barycenter = StatePoint(1.0 / 3.0, 1.0 / 3.0)

        def negative_scan(c, n=64):
            return OracleScan(n=n, unweighted_min=-1.0, unweighted_witness=barycenter,
                              weighted_min=-1.0, weighted_witness=barycenter, points=1)

        with mock.patch('crossdiff.cli.spectral_oracle_scan', side_effect=negative_scan):
            code, out, err = self.invoke('verify', self.write_json('c.json', c.to_dict()))
        self.assertEqual(code, EXIT_ORACLE)
        self.assertEqual(out, '')
        record = json.loads(err)
        self.assertEqual(record['error'], 'OracleDisagreementError')
        self.assertFalse(record['details']['agree'])
        self.assertFalse(record['details']['degenerate'])
        self.assertTrue(record['details']['psd_iff']['passed'])
        self.assertEqual([scan['oracle_passed'] for scan in record['details']['scans']], [False, False, False])

    def test_sweep_writes_summary(self):
        """Test a sweep over an integer field runs every point"""
        path = self.write_json('sim.json', SimDocumentFactory(time__t_end=0.002))
        out_dir = self.root / 'sweep'
        code, out, _ = self.invoke('sweep', path, 'grid.n_cells', '8:16:3', '--out', str(out_dir))
        self.assertEqual(code, EXIT_OK)
        summary = json.loads((out_dir / 'summary.json').read_text(encoding='utf-8'))
        self.assertEqual(summary, json.loads(out))
        self.assertEqual([point['value'] for point in summary['points']], [8, 12, 16])
        for index, n_cells in enumerate((8, 12, 16)):
            config = json.loads((out_dir / f'point_{index:03d}' / 'config.json').read_text(encoding='utf-8'))
            self.assertEqual(config['grid']['n_cells'], n_cells)

    def test_sweep_rejects_invalid_points_up_front(self):
        """Test no point runs when one of them is invalid"""
        path = self.write_json('sim.json', SimDocumentFactory())
        out_dir = self.root / 'sweep'
        code, _, err = self.invoke('sweep', '--config', path, 'time.tau', '0.001:-0.001:3', '--out', str(out_dir))
        self.assertEqual(code, EXIT_VALIDATION)
        self.assertEqual(json.loads(err)['key'], 'time.tau')
        self.assertFalse(out_dir.exists())

    @pytest.mark.slow
    def test_sweep_with_worker_processes(self):
        """Test a pooled sweep matches the serial one"""
        path = self.write_json('sim.json', SimDocumentFactory(time__t_end=0.002))
        self.invoke('sweep', path, 'time.tau', '0.0005:0.001:2', '--out', str(self.root / 'serial'))
        self.invoke('sweep', path, 'time.tau', '0.0005:0.001:2', '--out', str(self.root / 'pooled'), '--threads', '2')
        for index in range(2):
            name = Path(f'point_{index:03d}') / 'diagnostics.csv'
            self.assertEqual((self.root / 'serial' / name).read_bytes(), (self.root / 'pooled' / name).read_bytes())


class ConfigRoundTripTest(TestCase):
    def test_serialized_config_parses_back(self):
        """Test that a serialized configuration parses to an equal one"""
        for document in (SimDocumentFactory(),
                         SimDocumentFactory(coefficients=segregation_matrix().to_dict(), seed=3,
                                            reaction={'kind': 'lotka_volterra', 'b': [[1.0, 2.0, 2.0], [1.0, 2.0, 2.0]]})):
            config = parse_config(document)
            self.assertEqual(parse_config(serialize_config(config)), config)
