import math
from unittest import TestCase

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from .coeff_conditions import (
    CoeffSet, Criterion, SktParams, boundary_det_A, boundary_polynomials, check_psd_iff,
    check_remark_case, check_skt_corollary, check_symmetry, check_theorem_conditions, det_A,
    det_A_values, det_hessian_certificate, epsilon_max, eval_diffusion_matrix, f1_polynomial,
    f2_polynomial, from_skt, ha_min_eigenvalues, ha_values, hessian_det_A, laplacian_identity,
    psd_margins, remark_shift, segregation_matrix, shift_coefficients, spectral_oracle_scan,
    vertex_limits, vertex_path_products,
)
from .entropy_geometry import (
    ENTROPY_OFFSET, Membership, StatePoint, classify, density_values, entropy_density,
    entropy_gradient, entropy_gradient_inverse, entropy_hessian, entropy_hessian_inverse,
    inverse_gradient_values,
)
from .exceptions import DomainError, InvalidStateError, PreconditionError
from .reactions import (
    CustomReaction, LotkaVolterra, NoReaction, eval_reaction, h3_bound_scan, lv_band, verify_band,
)
from .test_factories import CoeffSetFactory, LotkaVolterraFactory, SktParamsFactory, reseed

BARYCENTER = (1.0 / 3.0, 1.0 / 3.0)
SKT_EXAMPLE = SktParams(a10=1.0, a20=1.0, a11=0.5, a12=0.5, a21=0.5, a22=0.5)


def strict_example():
    return CoeffSet.symmetric(alpha11=1.0, alpha22=1.0, beta11=1.0, beta12=0.5, gamma22=1.0)


def failing_example():
    return CoeffSet.symmetric(alpha11=1.0, alpha22=1.0, beta11=0.0, beta12=2.0, gamma22=0.0)


def interior_samples(rng, count, margin):
    """Uniform points of the triangle with every coordinate at least margin"""
    weights = rng.dirichlet(np.ones(3), size=count)
    weights = margin + (1.0 - 3.0 * margin) * weights
    return weights[:, 0], weights[:, 1], weights[:, 2]


class EntropyGeometryTest(TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(20240611)

    def test_classify_examples(self):
        """Test interior, boundary and outside classification"""
        self.assertIs(classify(BARYCENTER, tol=0.0), Membership.INTERIOR)
        self.assertIs(classify((0.5, 0.5), tol=0.0), Membership.BOUNDARY)
        self.assertIs(classify((0.8, 0.3), tol=0.0), Membership.OUTSIDE)

    def test_classify_rejects_non_finite(self):
        """Test that NaN and infinite states are invalid"""
        with self.assertRaises(InvalidStateError):
            classify((math.nan, 0.2))
        with self.assertRaises(InvalidStateError):
            classify((math.inf, 0.2))

    def test_state_point_carries_u3(self):
        """Test that an explicit u3 is kept and a missing one derived"""
        self.assertAlmostEqual(StatePoint(0.2, 0.3).u3, 0.5)
        self.assertEqual(StatePoint(0.5, 0.5, 1e-300).u3, 1e-300)
        self.assertIs(StatePoint(0.5, 0.5, 1e-3).membership(), Membership.INTERIOR)

    def test_entropy_density_examples(self):
        """Test raw and normalized entropy values"""
        value = entropy_density(BARYCENTER)
        self.assertAlmostEqual(value.raw, -1.0 - math.log(3.0), places=14)
        self.assertLessEqual(abs(value.normalized), 1e-14)
        self.assertAlmostEqual(entropy_density((0.5, 0.25)).raw, -2.039721, places=6)
        self.assertEqual(entropy_density((1.0, 0.0)).raw, -1.0)

    def test_entropy_density_outside_is_error(self):
        """Test that the density refuses points outside the closed triangle"""
        with self.assertRaises(DomainError):
            entropy_density((0.8, 0.3))

    def test_normalized_entropy_is_nonnegative_on_closure(self):
        """Test the offset makes the density nonnegative on the closed triangle"""
        weights = self.rng.dirichlet(np.ones(3), size=10_000)
        weights[:100, 2] = 0.0
        weights[:100, :2] /= weights[:100, :2].sum(axis=1, keepdims=True)
        values = density_values(weights[:, 0], weights[:, 1], weights[:, 2]) + ENTROPY_OFFSET
        self.assertGreaterEqual(float(np.min(values)), -1e-14)

    def test_entropy_gradient_examples(self):
        """Test the entropy variable at known points"""
        assert_allclose(tuple(entropy_gradient(BARYCENTER)), (0.0, 0.0), atol=1e-15)
        assert_allclose(tuple(entropy_gradient((0.5, 0.25))), (math.log(2.0), 0.0), atol=1e-15)
        assert_allclose(tuple(entropy_gradient((0.25, 0.5))), (0.0, math.log(2.0)), atol=1e-15)

    def test_gradient_and_hessian_need_interior(self):
        """Test that boundary points raise a domain error"""
        for operation in (entropy_gradient, entropy_hessian, entropy_hessian_inverse):
            with self.assertRaises(DomainError):
                operation((0.5, 0.5))
            with self.assertRaises(DomainError):
                operation((0.0, 0.3))

    def test_entropy_hessian_examples(self):
        """Test Hessian entries and determinant"""
        assert_allclose(entropy_hessian(BARYCENTER), [[6.0, 3.0], [3.0, 6.0]], rtol=1e-14)
        assert_allclose(entropy_hessian((0.5, 0.25)), [[6.0, 4.0], [4.0, 8.0]], rtol=1e-14)
        u1, u2, u3 = 0.2, 0.7, 0.1
        self.assertAlmostEqual(np.linalg.det(entropy_hessian((u1, u2))) * u1 * u2 * u3, 1.0, places=10)

    def test_hessian_inverse_is_inverse(self):
        """Test the closed-form inverse against the Hessian"""
        u1, u2, u3 = interior_samples(self.rng, 50, 1e-2)
        for point in zip(u1, u2):
            product = entropy_hessian(point) @ entropy_hessian_inverse(point)
            assert_allclose(product, np.eye(2), atol=1e-12)

    def test_hessian_matches_finite_differences(self):
        """Test Hessian entries against central differences of the gradient"""
        step = 1e-6
        u1, u2, _ = interior_samples(self.rng, 100, 1e-2)
        for a, b in zip(u1, u2):
            hessian = entropy_hessian((a, b))
            column1 = (np.array(tuple(entropy_gradient((a + step, b))))
                       - np.array(tuple(entropy_gradient((a - step, b))))) / (2 * step)
            column2 = (np.array(tuple(entropy_gradient((a, b + step))))
                       - np.array(tuple(entropy_gradient((a, b - step))))) / (2 * step)
            assert_allclose(np.column_stack([column1, column2]), hessian, rtol=1e-5)

    def test_hessian_is_positive_definite(self):
        """Test convexity at sampled interior points"""
        u1, u2, _ = interior_samples(self.rng, 200, 1e-4)
        for point in zip(u1, u2):
            self.assertGreater(np.linalg.eigvalsh(entropy_hessian(point))[0], 0.0)

    def test_gradient_inverse_examples(self):
        """Test the inverse map at known entropy variables"""
        point = entropy_gradient_inverse((0.0, 0.0))
        assert_allclose((point.u1, point.u2), BARYCENTER, rtol=1e-14)
        point = entropy_gradient_inverse((math.log(2.0), 0.0))
        assert_allclose((point.u1, point.u2), (0.5, 0.25), rtol=1e-14)
        point = entropy_gradient_inverse((700.0, 0.0))
        self.assertLessEqual(abs(point.u1 - 1.0), 1e-12)
        self.assertGreater(point.u3, 0.0)
        with self.assertRaises(InvalidStateError):
            entropy_gradient_inverse((math.inf, 0.0))

    def test_round_trip(self):
        """Test that the inverse map undoes the gradient"""
        u1, u2, _ = interior_samples(self.rng, 1000, 1e-9)
        for point in zip(u1, u2):
            back = entropy_gradient_inverse(entropy_gradient(point))
            assert_allclose((back.u1, back.u2), point, rtol=1e-10)

    def test_inverse_confines_to_triangle(self):
        """Test every finite entropy variable maps strictly inside the triangle"""
        w = self.rng.uniform(-350.0, 350.0, size=(1_000_000, 2))
        u1, u2, u3 = inverse_gradient_values(w[:, 0], w[:, 1])
        self.assertTrue(np.all(u1 > 0))
        self.assertTrue(np.all(u2 > 0))
        self.assertTrue(np.all(u3 > 0))
        assert_allclose(u1 + u2 + u3, 1.0, atol=1e-15)


class CoefficientTest(TestCase):
    def setUp(self):
        reseed()
        self.strict = strict_example()
        self.failing = failing_example()
        self.p = segregation_matrix()

    def test_eval_diffusion_matrix_examples(self):
        """Test entrywise evaluation of A(u)"""
        assert_array_equal(eval_diffusion_matrix(self.strict, (0.0, 0.0)), self.strict.alpha)
        assert_allclose(eval_diffusion_matrix(from_skt(SKT_EXAMPLE), BARYCENTER),
                        [[1.5, 1.0 / 6.0], [1.0 / 6.0, 1.5]], rtol=1e-14)
        assert_allclose(eval_diffusion_matrix(self.p, (0.25, 0.25)), [[0.75, -0.25], [-0.25, 0.75]])

    def test_eval_diffusion_matrix_outside_is_error(self):
        """Test that points outside the closed triangle are rejected"""
        with self.assertRaises(DomainError):
            eval_diffusion_matrix(self.strict, (0.9, 0.9))

    def test_from_skt_examples(self):
        """Test the SKT coefficient mapping"""
        c = from_skt(SKT_EXAMPLE)
        assert_array_equal(c.alpha, np.eye(2))
        assert_array_equal(c.beta, [[1.0, 0.5], [0.0, 0.5]])
        assert_array_equal(c.gamma, [[0.5, 0.0], [0.5, 1.0]])
        self.assertEqual(from_skt(SktParams()), CoeffSet.zero())
        c = from_skt(SktParams(a10=1.0, a20=2.0, a11=1.0, a21=1.0))
        assert_array_equal(c.alpha, np.diag([1.0, 2.0]))
        assert_array_equal(c.beta, [[2.0, 0.0], [0.0, 1.0]])
        assert_array_equal(c.gamma, [[0.0, 0.0], [1.0, 0.0]])

    def test_skt_params_reject_negative(self):
        """Test that SKT constants must be nonnegative"""
        with self.assertRaises(InvalidStateError):
            SktParams(a10=-1.0)

    def test_coeff_set_is_read_only(self):
        """Test that coefficient matrices cannot be mutated"""
        with self.assertRaises(ValueError):
            self.strict.alpha[0, 0] = 5.0

    def test_symmetry_examples(self):
        """Test the symmetry relations and their residuals"""
        report = check_symmetry(self.p)
        self.assertTrue(report.passed)
        self.assertTrue(all(value == 0.0 for value in report.margins.values()))
        self.assertTrue(check_symmetry(from_skt(SKT_EXAMPLE)).passed)
        report = check_symmetry(from_skt(SktParams(a10=1.0, a20=1.0, a11=1.0, a12=0.5, a21=0.3)))
        self.assertFalse(report.passed)
        self.assertAlmostEqual(report.margins['beta22'], -1.4, places=14)

    def test_symmetry_matches_symmetric_product(self):
        """Test that symmetric sets give a symmetric D^2h A and others do not"""
        rng = np.random.default_rng(7)
        u1, u2, u3 = interior_samples(rng, 100, 1e-2)
        for _ in range(1000):
            c = CoeffSetFactory()
            m11, m12, m21, m22 = ha_values(c, u1, u2, u3)
            self.assertLessEqual(float(np.max(np.abs(m12 - m21))), 1e-10)
        for _ in range(1000):
            c = CoeffSet(*rng.uniform(-3.0, 3.0, size=(3, 2, 2)))
            self.assertFalse(check_symmetry(c).passed)
            m11, m12, m21, m22 = ha_values(c, u1, u2, u3)
            self.assertGreater(float(np.max(np.abs(m12 - m21))), 1e-6)

    def test_psd_iff_examples(self):
        """Test the five PSD margins on the worked sets"""
        report = check_psd_iff(self.strict)
        self.assertTrue(report.passed)
        self.assertEqual(report.label, Criterion.PSD_IFF)
        assert_allclose(list(report.margins.values()), [1.0, 1.0, 1.5, 2.0, 2.0])
        self.assertIsNone(report.witness)

        report = check_psd_iff(self.failing)
        self.assertFalse(report.passed)
        self.assertEqual(report.failing(), ['beta12_slack'])
        self.assertIsNotNone(report.witness)
        w = report.witness
        self.assertLess(float(ha_min_eigenvalues(self.failing, w.u1, w.u2, w.u3)), 0.0)

        report = check_psd_iff(self.p)
        self.assertTrue(report.passed)
        assert_allclose(list(report.margins.values()), [1.0, 1.0, 1.0, 0.0, 0.0])
        self.assertIn('degenerate', report.flags)

    def test_criteria_need_symmetry(self):
        """Test that non-symmetric sets violate the precondition"""
        c = from_skt(SktParams(a10=1.0, a20=1.0, a11=1.0, a12=0.5, a21=0.3))
        for criterion in (check_psd_iff, check_theorem_conditions, check_remark_case, det_hessian_certificate):
            with self.assertRaises(PreconditionError):
                criterion(c)

    def test_theorem_conditions_examples(self):
        """Test the strict conditions"""
        self.assertTrue(check_theorem_conditions(self.strict).passed)
        self.assertTrue(check_theorem_conditions(self.p).passed)
        c = CoeffSet.symmetric(alpha11=0.0, alpha22=1.0, beta11=1.0, beta12=0.0, gamma22=1.0)
        report = check_theorem_conditions(c)
        self.assertFalse(report.passed)
        self.assertEqual(report.margins['alpha11'], 0.0)

    def test_remark_case_examples(self):
        """Test the vanishing constant part regime"""
        c = CoeffSet.symmetric(alpha11=0.0, alpha22=0.0, beta11=1.0, beta12=0.0, gamma22=1.0)
        report = check_remark_case(c)
        self.assertTrue(report.passed)
        self.assertEqual(report.details['epsilon'], 1.0)
        c = CoeffSet.symmetric(alpha11=0.0, alpha22=0.0, beta11=1.0, beta12=0.0, gamma22=0.0)
        self.assertFalse(check_remark_case(c).passed)
        self.assertFalse(check_remark_case(self.strict).passed)

    def test_remark_case_is_uniformly_elliptic(self):
        """Test that the remark example bounds D^2h A below by its epsilon"""
        c = CoeffSet.symmetric(alpha11=0.0, alpha22=0.0, beta11=1.0, beta12=0.0, gamma22=1.0)
        scan = spectral_oracle_scan(c, 64)
        self.assertGreaterEqual(scan.unweighted_min, 1.0 - 1e-9)

    def test_remark_shift_removes_rank_one_part(self):
        """Test that the removed part contributes eps/u3 in every entry"""
        c = CoeffSet.symmetric(alpha11=0.0, alpha22=0.0, beta11=1.0, beta12=0.0, gamma22=1.0)
        removed = CoeffSet(c.alpha - remark_shift(c, 0.5).alpha, c.beta - remark_shift(c, 0.5).beta,
                           c.gamma - remark_shift(c, 0.5).gamma)
        u1, u2, u3 = 0.2, 0.3, 0.5
        assert_allclose(ha_values(removed, u1, u2, u3), [0.5 / u3] * 4, rtol=1e-14)

    def test_epsilon_max_examples(self):
        """Test the closed-form weighted coercivity constant"""
        self.assertEqual(epsilon_max(self.strict), 1.0)
        self.assertEqual(epsilon_max(self.p), 1.0)
        c = CoeffSet.symmetric(alpha11=2.0, alpha22=3.0, beta11=0.0, beta12=-1.0, gamma22=0.0)
        self.assertEqual(epsilon_max(c), 2.0)
        with self.assertRaises(PreconditionError):
            epsilon_max(self.failing)

    def test_epsilon_shift_is_sharp(self):
        """Test that shifting past epsilon_max breaks the PSD conditions"""
        checked = 0
        while checked < 100:
            c = CoeffSetFactory(nonnegative_alpha=True)
            if not check_theorem_conditions(c).passed:
                continue
            checked += 1
            eps = epsilon_max(c)
            self.assertTrue(check_psd_iff(shift_coefficients(c, eps)).passed)
            beyond = shift_coefficients(c, 1.05 * eps + 1e-6)
            margins = psd_margins(*beyond.free_parameters)
            self.assertLess(min(margins.values()), 0.0)

    def test_skt_corollary_examples(self):
        """Test the SKT admissibility conditions"""
        params = SktParams(a10=1.0, a20=1.0, a11=0.5, a12=0.5, a21=0.5, a22=0.5,
                           b10=1.0, b11=2.0, b12=2.0, b20=1.0, b21=2.0, b22=2.0)
        self.assertTrue(check_skt_corollary(params).passed)
        params = SktParams(a10=1.0, a20=2.0, a11=1.5, a22=0.5, a12=0.5, a21=1.5, b11=1.0, b12=1.0)
        self.assertTrue(check_skt_corollary(params).passed)
        report = check_skt_corollary(SktParams(a10=0.0, a20=1.0, a11=0.5, a12=0.5, a21=0.5, a22=0.5))
        self.assertFalse(report.passed)
        self.assertEqual(report.label, Criterion.SKT_COROLLARY)

    def test_skt_corollary_implies_theorem_conditions(self):
        """Test that admissible SKT draws map to strictly admissible sets"""
        for _ in range(1000):
            params = SktParamsFactory()
            self.assertTrue(check_skt_corollary(params).passed, params)
            c = from_skt(params)
            self.assertTrue(check_symmetry(c).passed)
            self.assertTrue(check_theorem_conditions(c).passed)

    def test_report_serialises(self):
        """Test the structured form of a report"""
        record = check_psd_iff(self.failing).to_dict()
        self.assertEqual(record['label'], 'psd_iff')
        self.assertFalse(record['passed'])
        self.assertEqual(len(record['margins']), 5)
        self.assertEqual(record['margins'][2]['name'], 'beta12_slack')
        self.assertIsNotNone(record['witness'])


class CertificateTest(TestCase):
    def setUp(self):
        reseed('certificates')
        self.strict = strict_example()
        self.p = segregation_matrix()

    def test_vertex_limit_examples(self):
        """Test the three vertex limit matrices"""
        f1, f2, f3 = vertex_limits(self.strict)
        assert_allclose(f1, np.eye(2))
        assert_allclose(f2, [[2.0, 2.0], [2.0, 3.5]])
        assert_allclose(f3, [[3.5, 2.0], [2.0, 2.0]])
        for limit in vertex_limits(CoeffSet.zero()):
            assert_array_equal(limit, np.zeros((2, 2)))
        f1, f2, f3 = vertex_limits(self.p)
        assert_allclose(f1, np.eye(2))
        assert_allclose(f2, [[0.0, 0.0], [0.0, 1.0]])
        assert_allclose(f3, [[1.0, 0.0], [0.0, 0.0]])

    def test_vertex_paths_converge_first_order(self):
        """Test s D^2h A approaches the vertex limits linearly in s"""
        for c in [self.strict, self.p] + [CoeffSetFactory() for _ in range(20)]:
            limits = vertex_limits(c)
            scale = 1.0 + max(np.max(np.abs(c.alpha)), np.max(np.abs(c.beta)), np.max(np.abs(c.gamma)))
            for s in (1e-2, 1e-3, 1e-4):
                for product, limit in zip(vertex_path_products(c, s), limits):
                    self.assertLessEqual(float(np.max(np.abs(product - limit))), 20.0 * scale * s)

    def test_det_a_examples(self):
        """Test det A at known points"""
        self.assertEqual(det_A(self.strict, (0.0, 0.0)), 1.0)
        self.assertAlmostEqual(det_A(self.strict, (0.0, 0.5)), 1.875, places=14)
        self.assertAlmostEqual(boundary_det_A(self.strict, 'u1=0', 0.5), 1.875, places=14)
        self.assertAlmostEqual(det_A(self.p, (0.25, 0.25)), 0.5, places=14)

    def test_boundary_det_a_matches_direct_evaluation(self):
        """Test the factored edge forms of det A"""
        t = np.linspace(0.0, 1.0, 101)
        for c in [self.strict, self.p] + [CoeffSetFactory() for _ in range(50)]:
            assert_allclose(boundary_det_A(c, 'u1=0', t), det_A_values(c, 0.0, t), rtol=1e-12, atol=1e-12)
            assert_allclose(boundary_det_A(c, 'u2=0', t), det_A_values(c, t, 0.0), rtol=1e-12, atol=1e-12)
            assert_allclose(boundary_det_A(c, 'u3=0', t), det_A_values(c, t, 1.0 - t), rtol=1e-12, atol=1e-12)
        with self.assertRaises(ValueError):
            boundary_det_A(self.strict, 'u4=0', t)

    def test_boundary_det_a_nonnegative_when_psd(self):
        """Test det A >= 0 on the boundary of the triangle for PSD sets"""
        t = np.linspace(0.0, 1.0, 201)
        checked = 0
        while checked < 100:
            c = CoeffSetFactory(nonnegative_alpha=True)
            if not check_psd_iff(c).passed:
                continue
            checked += 1
            for edge in ('u1=0', 'u2=0', 'u3=0'):
                self.assertGreaterEqual(float(np.min(boundary_det_A(c, edge, t))), -1e-12)

    def test_det_hessian_examples(self):
        """Test the closed-form determinant of the Hessian of det A"""
        c = CoeffSet.symmetric(alpha11=1.0, alpha22=1.0, beta11=1.0, beta12=1.0, gamma22=0.0)
        self.assertEqual(det_hessian_certificate(c), -1.0)
        c = CoeffSet.symmetric(alpha11=1.0, alpha22=2.0, beta11=0.0, beta12=0.0, gamma22=0.0)
        self.assertEqual(det_hessian_certificate(c), 0.0)
        self.assertEqual(det_hessian_certificate(self.strict), 0.0)

    def test_det_hessian_matches_assembled_hessian(self):
        """Test the closed form against the assembled and the finite-difference Hessian"""
        h = 0.5
        for _ in range(200):
            c = CoeffSetFactory()
            assembled = hessian_det_A(c)
            f = lambda a, b: float(det_A_values(c, a, b))  # noqa: E731
            x, y = 0.2, 0.3
            d11 = (f(x + h, y) - 2 * f(x, y) + f(x - h, y)) / h ** 2
            d22 = (f(x, y + h) - 2 * f(x, y) + f(x, y - h)) / h ** 2
            d12 = (f(x + h, y + h) - f(x + h, y - h) - f(x - h, y + h) + f(x - h, y - h)) / (4 * h ** 2)
            assert_allclose(assembled, [[d11, d12], [d12, d22]], atol=1e-10)
            certificate = det_hessian_certificate(c)
            self.assertLessEqual(certificate, 0.0)
            assert_allclose(np.linalg.det(assembled), certificate, rtol=1e-10, atol=1e-12)

    def test_edge_polynomials_match_direct_evaluation(self):
        """Test the closed forms of f1 and f2 on their coordinate edges"""
        t = np.linspace(0.0, 1.0, 100)
        for c in [self.strict, self.p] + [CoeffSetFactory() for _ in range(50)]:
            cases = {
                'f1:u1=0': f1_polynomial(c, t, 1.0 - t),
                'f1:u2=0': f1_polynomial(c, 0.0, t),
                'f1:u3=0': f1_polynomial(c, t, 0.0),
                'f2:u1=0': f2_polynomial(c, 0.0, t),
                'f2:u2=0': f2_polynomial(c, t, 1.0 - t),
                'f2:u3=0': f2_polynomial(c, t, 0.0),
            }
            for edge, direct in cases.items():
                assert_allclose(boundary_polynomials(c, edge, t), direct, rtol=1e-12, atol=1e-12, err_msg=edge)

    def test_laplacian_identity(self):
        """Test that the Laplacians of f1 and f2 are opposite constants"""
        h = 1e-4
        x, y = 0.3, 0.3
        for c in [self.strict, self.p] + [CoeffSetFactory() for _ in range(50)]:
            expected = laplacian_identity(c)
            lap1 = (f1_polynomial(c, x + h, y) + f1_polynomial(c, x - h, y) + f1_polynomial(c, x, y + h)
                    + f1_polynomial(c, x, y - h) - 4 * f1_polynomial(c, x, y)) / h ** 2
            lap2 = (f2_polynomial(c, x + h, y) + f2_polynomial(c, x - h, y) + f2_polynomial(c, x, y + h)
                    + f2_polynomial(c, x, y - h) - 4 * f2_polynomial(c, x, y)) / h ** 2
            assert_allclose(lap1, expected, rtol=1e-6, atol=1e-5)
            assert_allclose(lap2, -expected, rtol=1e-6, atol=1e-5)


class SpectralOracleTest(TestCase):
    def setUp(self):
        reseed('oracle')

    def test_oracle_examples(self):
        """Test the scan on the worked sets"""
        scan = spectral_oracle_scan(strict_example(), 64)
        self.assertGreaterEqual(scan.weighted_min, 1.0 - 1e-9)
        scan = spectral_oracle_scan(failing_example(), 64)
        self.assertLess(scan.unweighted_min, -1e-6)
        self.assertIsInstance(scan.unweighted_witness, StatePoint)
        scan = spectral_oracle_scan(segregation_matrix(), 64)
        self.assertGreaterEqual(scan.unweighted_min, -1e-9)

    def test_oracle_needs_resolution(self):
        """Test that coarse scans are refused"""
        with self.assertRaises(ValueError):
            spectral_oracle_scan(strict_example(), 4)

    def test_min_eigenvalue_matches_numpy(self):
        """Test the stable eigenvalue formula against a dense solver"""
        rng = np.random.default_rng(3)
        u1, u2, u3 = interior_samples(rng, 200, 1e-3)
        for _ in range(20):
            c = CoeffSetFactory()
            values = ha_min_eigenvalues(c, u1, u2, u3)
            m11, m12, m21, m22 = ha_values(c, u1, u2, u3)
            for k in range(0, 200, 17):
                m = np.array([[m11[k], m12[k]], [m21[k], m22[k]]])
                expected = np.linalg.eigvalsh(0.5 * (m + m.T))[0]
                assert_allclose(values[k], expected, rtol=1e-8, atol=1e-8 * np.max(np.abs(m)))

    @pytest.mark.slow
    def test_criterion_agrees_with_oracle(self):
        """Test soundness and completeness of the PSD criterion on random sets"""
        for index in range(500):
            c = CoeffSetFactory(nonnegative_alpha=index % 2 == 0)
            report = check_psd_iff(c)
            scan = spectral_oracle_scan(c, 128)
            if report.passed:
                self.assertGreaterEqual(scan.unweighted_min, -1e-8, c)
            elif scan.unweighted_min >= -1e-8:
                failing = [abs(report.margins[name]) for name in report.failing()]
                self.assertLessEqual(min(failing), 1e-6, c)

    @pytest.mark.slow
    def test_weighted_minimum_bounded_by_epsilon(self):
        """Test the weighted coercivity bound on strictly admissible sets"""
        checked = 0
        while checked < 100:
            c = CoeffSetFactory(nonnegative_alpha=True)
            if not check_theorem_conditions(c).passed:
                continue
            checked += 1
            scan = spectral_oracle_scan(c, 64)
            self.assertGreaterEqual(scan.weighted_min, epsilon_max(c) - 1e-8, c)


class ReactionTest(TestCase):
    def setUp(self):
        reseed('reactions')
        self.lv = LotkaVolterra(1.0, 2.0, 2.0, 1.0, 2.0, 2.0)

    def test_eval_reaction_examples(self):
        """Test reaction values at known points"""
        for r in (NoReaction(), self.lv):
            self.assertEqual(eval_reaction(r, (0.0, 0.5))[0], 0.0)
        assert_allclose(eval_reaction(self.lv, (0.25, 0.25)), [0.0, 0.0], atol=1e-16)
        assert_allclose(eval_reaction(self.lv, (0.1, 0.1)), [0.06, 0.06], rtol=1e-14)
        assert_array_equal(eval_reaction(NoReaction(), BARYCENTER), [0.0, 0.0])
        with self.assertRaises(DomainError):
            eval_reaction(self.lv, (0.9, 0.9))

    def test_lotka_volterra_rejects_negative_rates(self):
        """Test rate validation"""
        with self.assertRaises(InvalidStateError):
            LotkaVolterra(-1.0, 1.0, 1.0, 1.0, 1.0, 1.0)

    def test_lotka_volterra_jacobian_matches_differences(self):
        """Test the analytic reaction Jacobian"""
        r = LotkaVolterraFactory()
        u1, u2, step = 0.3, 0.2, 1e-6
        j11, j12, j21, j22 = r.jacobian(u1, u2)
        plus1, minus1 = r.rates(u1 + step, u2), r.rates(u1 - step, u2)
        plus2, minus2 = r.rates(u1, u2 + step), r.rates(u1, u2 - step)
        assert_allclose([j11, j21], [(p - m) / (2 * step) for p, m in zip(plus1, minus1)], rtol=1e-6, atol=1e-9)
        assert_allclose([j12, j22], [(p - m) / (2 * step) for p, m in zip(plus2, minus2)], rtol=1e-6, atol=1e-9)

    def test_lv_band_examples(self):
        """Test band widths and failures"""
        eps, report = lv_band(self.lv)
        self.assertEqual(eps, 0.5)
        self.assertTrue(report.passed)
        eps, report = lv_band(LotkaVolterra(1.0, 1.0, 1.0, 1.0, 1.0, 1.0))
        self.assertEqual(eps, 0.0)
        self.assertTrue(report.passed)
        self.assertIn('degenerate', report.flags)
        eps, report = lv_band(LotkaVolterra(2.0, 1.0, 1.0, 1.0, 1.0, 1.0))
        self.assertFalse(report.passed)
        self.assertEqual(report.failing(), ['b10_slack'])
        _, report = lv_band(LotkaVolterra(1.0, 0.0, 1.0, 1.0, 1.0, 1.0))
        self.assertFalse(report.passed)
        self.assertIn('infinite_growth', report.flags)

    def test_growth_nonpositive_in_band(self):
        """Test the sign of g_i above 1 - eps"""
        rng = np.random.default_rng(11)
        for _ in range(200):
            r = LotkaVolterraFactory()
            eps, report = lv_band(r)
            self.assertTrue(report.passed)
            total = 1.0 - eps * rng.random(100)
            split = rng.random(100)
            g1, g2 = r.growth(total * split, total * (1.0 - split))
            self.assertLessEqual(float(np.max(g1)), 1e-12)
            self.assertLessEqual(float(np.max(g2)), 1e-12)

    def test_zero_preservation(self):
        """Test f_i vanishes where u_i does"""
        for r in (self.lv, LotkaVolterraFactory(), NoReaction()):
            f1, _ = r.rates(0.0, 0.4)
            _, f2 = r.rates(0.4, 0.0)
            self.assertEqual(float(f1), 0.0)
            self.assertEqual(float(f2), 0.0)

    def test_custom_reaction_band_check(self):
        """Test sampled verification of a declared band"""
        good = CustomReaction(lambda a, b: 1.0 - 2.0 * (a + b), lambda a, b: 0.5 - a - b, eps_band=0.5)
        self.assertTrue(verify_band(good).passed)
        bad = CustomReaction(lambda a, b: np.ones_like(a), lambda a, b: np.zeros_like(a), eps_band=0.5)
        report = verify_band(bad)
        self.assertFalse(report.passed)
        self.assertIsNotNone(report.witness)
        with self.assertRaises(ValueError):
            CustomReaction(lambda a, b: a, lambda a, b: b, eps_band=1.5)
        with self.assertRaises(TypeError):
            good.to_dict()

    def test_h3_scan_examples(self):
        """Test the entropy production bound scan"""
        scan = h3_bound_scan(NoReaction())
        self.assertEqual(scan.c_f, 0.0)
        self.assertTrue(scan.report.passed)
        scan = h3_bound_scan(self.lv)
        self.assertTrue(math.isfinite(scan.c_f))
        self.assertTrue(scan.report.passed)
        values = [value for _, value in scan.approach]
        self.assertTrue(all(b <= a + 1e-12 for a, b in zip(values, values[1:])))
        bad = CustomReaction(lambda a, b: np.ones_like(a), lambda a, b: np.zeros_like(a), eps_band=0.5)
        scan = h3_bound_scan(bad)
        self.assertFalse(scan.report.passed)
        self.assertIn('divergent', scan.report.flags)
        self.assertIsNotNone(scan.report.witness)
        with self.assertRaises(ValueError):
            h3_bound_scan(self.lv, n=8)

    def test_h3_scan_is_stable_under_refinement(self):
        """Test the c_f estimate changes little when the grid doubles"""
        for _ in range(10):
            r = LotkaVolterraFactory()
            coarse = h3_bound_scan(r, 64).c_f
            fine = h3_bound_scan(r, 128).c_f
            self.assertLessEqual(abs(fine - coarse), 0.05 * max(abs(fine), abs(coarse)) + 1e-4)
