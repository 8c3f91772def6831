import math
from unittest import TestCase, mock

import numpy as np
import pytest
from numpy.testing import assert_allclose

from crossdiff_project import settings
from . import solver
from .coeff_conditions import CoeffSet, SktParams, check_psd_iff, from_skt, segregation_matrix
from .config import InitialProfile, Profile, SimConfig
from .entropy_geometry import gradient_values
from .exceptions import (
    AdmissibilityError, DomainError, InvalidInitialDataError, NewtonConvergenceError,
    PreconditionError, TimeStepUnderflowError,
)
from .reactions import CustomReaction, LotkaVolterra, NoReaction
from .solver import (
    Grid1D, GridState, ImplicitEulerStep, assemble_mobility, diagnostics, mobility_values,
    newton_jacobian, prepare_initial_densities, run, step_implicit, step_residual,
)
from .test_factories import CoeffSetFactory, LotkaVolterraFactory, SktParamsFactory, reseed

SKT = from_skt(SktParams(a10=1.0, a20=1.0, a11=0.5, a12=0.5, a21=0.5, a22=0.5))
LV = LotkaVolterra(1.0, 2.0, 2.0, 1.0, 2.0, 2.0)


def cosine_state(n_cells, modes=1, length=1.0):
    grid = Grid1D(n_cells, length)
    x = grid.centers / length
    return GridState.from_densities(grid, 0.2 + 0.1 * np.cos(modes * math.pi * x), np.full(n_cells, 0.3))


def simulation(c=SKT, reaction=None, n_cells=16, initial=None, tau=1e-3, t_end=0.01, **kwargs):
    initial = initial or InitialProfile(profile=Profile.COSINE, base=(0.2, 0.3), amplitude=(0.1, 0.0))
    return SimConfig(coefficients=c, reaction=reaction or NoReaction(), grid=Grid1D(n_cells),
                     initial=initial, tau=tau, t_end=t_end, **kwargs)


def explicit_reference(c, grid, u1, u2, t_end, dt):
    """Forward Euler on the same semi-discrete system, written directly in u"""
    u = np.stack([u1, u2], axis=-1).astype(float)
    dx = grid.dx
    for _ in range(int(round(t_end / dt))):
        u3 = 1.0 - u[:, 0] - u[:, 1]
        w = np.stack(gradient_values(u[:, 0], u[:, 1], u3), axis=-1)
        mean = 0.5 * (u[:-1] + u[1:])
        faces = mobility_values(c, mean[:, 0], mean[:, 1], 0.5 * (u3[:-1] + u3[1:]))
        flux = np.einsum('fij,fj->fi', faces, w[1:] - w[:-1]) / dx
        divergence = np.zeros_like(u)
        divergence[:-1] += flux
        divergence[1:] -= flux
        u = u + dt * divergence / dx
    return u


class GridTest(TestCase):
    def test_grid_geometry(self):
        """Test spacing and cell centres"""
        grid = Grid1D(4, 2.0)
        self.assertEqual(grid.dx, 0.5)
        assert_allclose(grid.centers, [0.25, 0.75, 1.25, 1.75])

    def test_grid_validation(self):
        """Test that degenerate grids are rejected"""
        with self.assertRaises(ValueError):
            Grid1D(1)
        with self.assertRaises(ValueError):
            Grid1D(8, 0.0)

    def test_state_reconstructs_interior_densities(self):
        """Test that any finite w gives interior densities"""
        grid = Grid1D(5)
        state = GridState(grid, np.array([[-300.0, 300.0], [0.0, 0.0], [40.0, -40.0], [1.0, 2.0], [-5.0, -5.0]]))
        self.assertTrue(np.all(state.u1 > 0) and np.all(state.u2 > 0) and np.all(state.u3 > 0))
        assert_allclose(state.u1[1], 1.0 / 3.0)
        with self.assertRaises(ValueError):
            state.w[0, 0] = 1.0

    def test_state_from_boundary_densities_is_error(self):
        """Test that boundary densities have no entropy variable"""
        with self.assertRaises(DomainError):
            GridState.from_densities(Grid1D(2), [0.0, 0.2], [0.3, 0.3])


class MobilityTest(TestCase):
    def setUp(self):
        reseed('mobility')

    def test_mobility_examples(self):
        """Test B = A (D^2h)^-1 on the worked sets"""
        barycenter = (1.0 / 3.0, 1.0 / 3.0)
        assert_allclose(assemble_mobility(SKT, barycenter), np.array([[8.5, -3.5], [-3.5, 8.5]]) / 27.0, rtol=1e-13)
        assert_allclose(assemble_mobility(segregation_matrix(), barycenter),
                        np.array([[5.0, -4.0], [-4.0, 5.0]]) / 27.0, rtol=1e-13)
        assert_allclose(assemble_mobility(CoeffSet.zero(), barycenter), np.zeros((2, 2)))

    def test_mobility_preconditions(self):
        """Test boundary points and non-symmetric sets are refused"""
        with self.assertRaises(DomainError):
            assemble_mobility(SKT, (0.5, 0.5))
        with self.assertRaises(PreconditionError):
            assemble_mobility(from_skt(SktParams(a10=1.0, a20=1.0, a11=1.0, a21=0.3)), (0.2, 0.2))

    def test_mobility_symmetric_and_psd(self):
        """Test the mobility is symmetric and positive semidefinite for PSD sets"""
        rng = np.random.default_rng(5)
        checked = 0
        while checked < 100:
            c = CoeffSetFactory(nonnegative_alpha=True)
            if not check_psd_iff(c).passed:
                continue
            checked += 1
            weights = rng.dirichlet(np.ones(3), size=20)
            b = mobility_values(c, weights[:, 0], weights[:, 1], weights[:, 2])
            scale = np.max(np.abs(b)) + 1e-300
            assert_allclose(b, np.swapaxes(b, -1, -2), atol=1e-12 * scale)
            self.assertGreaterEqual(float(np.min(np.linalg.eigvalsh(b))), -1e-12 * scale)


class DiagnosticsTest(TestCase):
    def test_constant_state(self):
        """Test a constant state has no dissipation"""
        grid = Grid1D(10, 2.0)
        state = GridState.from_densities(grid, np.full(10, 0.2), np.full(10, 0.5))
        record = diagnostics(state, SKT, None)
        self.assertEqual(record.dissipation, 0.0)
        self.assertAlmostEqual(record.mass1, 0.4, places=14)
        self.assertAlmostEqual(record.mass2, 1.0, places=14)
        self.assertAlmostEqual(record.min_u3, 0.3, places=14)

    def test_barycenter_entropy(self):
        """Test entropy of the barycenter state scales with the length"""
        grid = Grid1D(8, 3.0)
        state = GridState.from_densities(grid, np.full(8, 1.0 / 3.0), np.full(8, 1.0 / 3.0))
        record = diagnostics(state, SKT, None)
        self.assertAlmostEqual(record.entropy_total, (-1.0 - math.log(3.0)) * 3.0, places=13)
        self.assertLessEqual(abs(record.entropy_normalized), 1e-13)

    def test_dissipation_nonnegative(self):
        """Test the discrete dissipation is nonnegative for PSD sets"""
        rng = np.random.default_rng(9)
        for c in (SKT, segregation_matrix()):
            for _ in range(50):
                state = GridState(Grid1D(12), rng.normal(scale=3.0, size=(12, 2)))
                self.assertGreaterEqual(diagnostics(state, c, None).dissipation, -1e-12)


class ImplicitStepTest(TestCase):
    def setUp(self):
        reseed('implicit')
        self.rng = np.random.default_rng(17)

    def test_constant_state_is_steady(self):
        """Test that a constant state is returned unchanged"""
        grid = Grid1D(8)
        state = GridState.from_densities(grid, np.full(8, 0.25), np.full(8, 0.4))
        new_state, record = step_implicit(state, SKT, None, 1e-3)
        assert_allclose(new_state.w, state.w, atol=1e-12)
        self.assertEqual(record.newton_iters, 0)
        self.assertAlmostEqual(new_state.t, 1e-3)

    def test_mirror_symmetry(self):
        """Test that reflected data stay reflected"""
        state = cosine_state(16, modes=2)
        assert_allclose(state.w, state.w[::-1], atol=1e-14)
        for _ in range(5):
            state, _ = step_implicit(state, SKT, LV, 1e-2)
        assert_allclose(state.w, state.w[::-1], atol=1e-10)

    def test_matches_explicit_reference(self):
        """Test one implicit step against a fine-step explicit solution"""
        state = cosine_state(8)
        reference = explicit_reference(SKT, state.grid, state.u1, state.u2, 1e-3, 1e-7)
        new_state, _ = step_implicit(state, SKT, None, 1e-3)
        self.assertLessEqual(float(np.max(np.abs(new_state.u - reference))), 5e-3)

    def test_residual_is_small_after_step(self):
        """Test the Newton tolerance on the returned state"""
        state = cosine_state(16)
        new_state, _ = step_implicit(state, SKT, LV, 1e-2)
        residual = step_residual(state, SKT, LV, 1e-2, new_state.w)
        self.assertLessEqual(float(np.max(np.abs(residual))), settings.NEWTON_TOL)

    def test_jacobian_matches_finite_differences(self):
        """Test the analytic Newton Jacobian against central differences"""
        h = 1e-6
        cases = [(SKT, None), (SKT, LV), (segregation_matrix(), None), (from_skt(SktParamsFactory()), LotkaVolterraFactory())]
        for c, r in cases:
            for _ in range(5):
                state = GridState(Grid1D(8), self.rng.normal(scale=1.0, size=(8, 2)))
                w = state.w + self.rng.normal(scale=0.3, size=(8, 2))
                jacobian = newton_jacobian(state, c, r, 1e-2, w)
                numeric = np.zeros_like(jacobian)
                for k in range(16):
                    shift = np.zeros(16)
                    shift[k] = h
                    shift = shift.reshape(8, 2)
                    numeric[:, k] = (step_residual(state, c, r, 1e-2, w + shift)
                                     - step_residual(state, c, r, 1e-2, w - shift)).ravel() / (2 * h)
                self.assertLessEqual(np.linalg.norm(jacobian - numeric), 1e-5 * np.linalg.norm(jacobian))

    def test_newton_failure_carries_iterate(self):
        """Test the error raised when Newton runs out of iterations"""
        state = cosine_state(8)
        with self.assertRaises(NewtonConvergenceError) as caught:
            ImplicitEulerStep(state, SKT, None, 1e-2).solve(state.w, max_iter=0)
        self.assertEqual(caught.exception.iterations, 0)
        assert_allclose(caught.exception.iterate, state.w)
        self.assertEqual(caught.exception.exit_code, 3)

    def test_step_preconditions(self):
        """Test tau and admissibility checks"""
        state = cosine_state(8)
        with self.assertRaises(ValueError):
            step_implicit(state, SKT, None, 0.0)
        failing = CoeffSet.symmetric(alpha11=1.0, alpha22=1.0, beta11=0.0, beta12=2.0, gamma22=0.0)
        with self.assertRaises(AdmissibilityError):
            step_implicit(state, failing, None, 1e-3)
        with self.assertRaises(AdmissibilityError):
            step_implicit(state, SKT, LotkaVolterra(2.0, 1.0, 1.0, 1.0, 1.0, 1.0), 1e-3)
        growing = CustomReaction(g1=lambda u1, u2: 1.0, g2=lambda u1, u2: 1.0, eps_band=0.5)
        with self.assertRaises(AdmissibilityError) as caught:
            step_implicit(state, SKT, growing, 1e-2)
        self.assertEqual(caught.exception.to_record()['report']['label'], 'lv_band')
        decaying = CustomReaction(g1=lambda u1, u2: -u1 - u2, g2=lambda u1, u2: -2.0 * u2, eps_band=0.5)
        new_state, _ = step_implicit(state, SKT, decaying, 1e-2)
        self.assertTrue(np.all(new_state.u3 > 0))


class InitialDataTest(TestCase):
    def test_interior_data_unchanged(self):
        """Test interior data pass through untouched"""
        u1, u2 = prepare_initial_densities([0.2, 0.3], [0.3, 0.1], rescale=False)
        assert_allclose(u1, [0.2, 0.3])
        assert_allclose(u2, [0.3, 0.1])

    def test_boundary_cells_are_nudged(self):
        """Test zero cells move inward when rescaling is on"""
        with self.assertLogs('crossdiff.solver', level='WARNING'):
            u1, u2 = prepare_initial_densities([0.0, 0.3], [0.5, 0.3], rescale=True)
        self.assertEqual(u1[0], settings.BOUNDARY_NUDGE)
        self.assertTrue(np.all(1.0 - u1 - u2 > 0))
        with self.assertRaises(InvalidInitialDataError):
            prepare_initial_densities([0.0, 0.3], [0.5, 0.3], rescale=False)

    def test_overfull_data_are_scaled(self):
        """Test data above the capacity line are scaled into the triangle"""
        u1, u2 = prepare_initial_densities([0.6, 0.2], [0.6, 0.2], rescale=True)
        self.assertTrue(np.all(u1 + u2 < 1.0))
        assert_allclose(u1[1] / u2[1], 1.0)
        with self.assertRaises(InvalidInitialDataError):
            prepare_initial_densities([-0.1, 0.2], [0.3, 0.3], rescale=True)
        with self.assertRaises(InvalidInitialDataError):
            prepare_initial_densities([math.nan, 0.2], [0.3, 0.3], rescale=True)


class RunTest(TestCase):
    def setUp(self):
        reseed('run')

    def test_zero_duration(self):
        """Test a run with t_end = 0 takes no steps"""
        result = run(simulation(t_end=0.0))
        self.assertEqual(result.trajectory, [])
        self.assertIs(result.final, result.initial)
        self.assertEqual(result.initial_diagnostics.step, 0)

    def test_reaches_end_time(self):
        """Test the last step lands on t_end"""
        result = run(simulation(tau=3e-3, t_end=0.01))
        self.assertAlmostEqual(result.final.t, 0.01, places=14)
        self.assertEqual(len(result.trajectory), 4)
        self.assertAlmostEqual(result.trajectory[-1].tau, 1e-3, places=14)

    def test_tau_halves_and_recovers(self):
        """Test adaptive step control after a forced Newton failure"""
        real = solver.step_implicit
        calls = []

        def flaky(state, c, r, tau, step=1):
            calls.append(tau)
            if len(calls) == 1:
                raise NewtonConvergenceError("forced", iterate=state.w, residual=1.0, iterations=50)
            return real(state, c, r, tau, step=step)

        config = simulation(tau=1e-2, t_end=0.1)
        with mock.patch.object(solver, 'step_implicit', side_effect=flaky), \
                mock.patch.object(settings, 'EASY_STEP_ITERS', 50):
            result = run(config)
        self.assertEqual(result.trajectory[0].tau, 5e-3)
        self.assertIn(1e-2, [record.tau for record in result.trajectory])
        self.assertAlmostEqual(result.final.t, 0.1, places=12)

    def test_tau_underflow_aborts(self):
        """Test the run stops once tau falls below tau_min"""
        def failing(state, c, r, tau, step=1):
            raise NewtonConvergenceError("forced", iterate=state.w, residual=1.0, iterations=50)

        config = simulation(tau=1e-2, t_end=0.1, tau_min=1e-2 / 3.0)
        with mock.patch.object(solver, 'step_implicit', side_effect=failing):
            with self.assertRaises(TimeStepUnderflowError) as caught:
                run(config)
        self.assertEqual(caught.exception.trajectory, [])
        self.assertEqual(caught.exception.state.t, 0.0)
        self.assertEqual(caught.exception.exit_code, 3)

    def test_rejects_boundary_initial_data_without_rescale(self):
        """Test that boundary initial data need rescaling"""
        initial = InitialProfile(profile=Profile.STEP, base=(0.0, 0.3), amplitude=(0.3, 0.0), position=0.5)
        with self.assertRaises(InvalidInitialDataError):
            run(simulation(initial=initial))
        result = run(simulation(initial=initial, rescale_initial=True, t_end=2e-3))
        self.assertTrue(np.all(result.final.u1 > 0))

    def test_near_extinction_stays_in_triangle(self):
        """Test Lotka-Volterra growth from small densities stays bounded"""
        seen = []
        initial = InitialProfile(profile=Profile.CONSTANT, base=(0.01, 0.01))
        config = simulation(reaction=LV, initial=initial, tau=1e-2, t_end=6.0)
        result = run(config, observer=lambda state, record: seen.append(
            (float(np.min(state.u1)), float(np.min(state.u2)), float(np.min(state.u3)))))
        self.assertTrue(all(min(values) > 0 for values in seen))
        self.assertGreater(float(np.mean(result.final.u1 + result.final.u2)), 0.4)

    def test_converges_to_mean(self):
        """Test reaction-free runs settle at the average of the initial data"""
        initial = InitialProfile(profile=Profile.TWO_BUMP, base=(0.2, 0.2), amplitude=(0.3, 0.3), position=0.25)
        config = simulation(n_cells=32, initial=initial, tau=0.05, t_end=5.0)
        result = run(config)
        for initial_values, final_values in ((result.initial.u1, result.final.u1), (result.initial.u2, result.final.u2)):
            self.assertLessEqual(float(np.max(np.abs(final_values - np.mean(initial_values)))), 1e-6)

    @pytest.mark.slow
    def test_entropy_decay_and_conservation(self):
        """Test entropy decay, the dissipation balance and mass conservation over 1000 steps"""
        result = run(simulation(n_cells=32, tau=1e-3, t_end=1.0))
        self.assertEqual(len(result.trajectory), 1000)
        records = [result.initial_diagnostics] + result.trajectory
        for before, after in zip(records, records[1:]):
            change = after.entropy_total - before.entropy_total
            self.assertLessEqual(change, 1e-10)
            self.assertLessEqual(change / after.tau + after.dissipation, 1e-8)
        first, last = records[0], records[-1]
        self.assertLessEqual(abs(last.mass1 - first.mass1), 1e-8 * first.mass1)
        self.assertLessEqual(abs(last.mass2 - first.mass2), 1e-8 * first.mass2)

    @pytest.mark.slow
    def test_spatial_self_convergence(self):
        """Test the error against a fine-grid solution shrinks when the grid doubles"""
        initial = InitialProfile(profile=Profile.COSINE, base=(0.3, 0.3), amplitude=(0.1, -0.1))
        fine = run(simulation(n_cells=512, initial=initial, tau=1e-3, t_end=0.02)).final
        errors = []
        for n in (16, 32):
            coarse = run(simulation(n_cells=n, initial=initial, tau=1e-3, t_end=0.02)).final
            averaged = fine.u.reshape(n, 512 // n, 2).mean(axis=1)
            errors.append(float(np.max(np.abs(coarse.u - averaged))))
        self.assertLess(errors[1], errors[0] / 1.8)

    @pytest.mark.slow
    def test_invariant_region_randomized(self):
        """Test every reconstructed density stays inside the triangle over randomized runs"""
        violations = 0
        for seed in range(20):
            params = SktParamsFactory()
            initial = InitialProfile(profile=Profile.RANDOM, base=(0.25, 0.25), amplitude=(0.2, 0.2))
            config = simulation(c=from_skt(params), reaction=LotkaVolterraFactory(), n_cells=64,
                                initial=initial, tau=1e-3, t_end=1.0, seed=seed)

            def check(state, record):
                nonlocal violations
                inside = np.all(state.u1 > 0) and np.all(state.u2 > 0) and np.all(state.u3 > 0)
                violations += 0 if inside and record.min_u3 > 0 else 1

            result = run(config, observer=check)
            self.assertEqual(len(result.trajectory), 1000)
        self.assertEqual(violations, 0)
