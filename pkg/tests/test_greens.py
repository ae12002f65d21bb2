import math
import unittest

import numpy as np

from core.errors import GeometryError
from core.model import DomainSpec
from discretize import assemble
from geometry import make_domain
from greens import (
    axis_nodes,
    boundary_kernel,
    estimate_constants,
    fundamental_kernel,
    greens_solve,
    halfspace_green,
    nearest_axis_node,
    parametrix_terms,
)


def half_ball(samples=8, n=3):
    spec = DomainSpec(n=n, s=1.0, family="perturbed-half-ball", kappa=0.0, radius=1.0, meridian_samples=samples)
    mesh, _, _ = make_domain(spec)
    return mesh


class KernelTest(unittest.TestCase):
    def test_fundamental_kernel_in_three_dimensions(self):
        value = fundamental_kernel([0.0, 0.0], [-0.5, 0.0], 3)
        self.assertAlmostEqual(float(value), 1.0 / (4.0 * math.pi * 0.5))
        with self.assertRaises(ValueError):
            fundamental_kernel([-0.1, 0.2], [-0.1, 0.2], 3)

    def test_halfspace_green_vanishes_on_flat_face(self):
        y = np.array([-0.4, 0.0])
        self.assertEqual(float(halfspace_green(np.array([0.0, 0.3]), y, 3)), 0.0)
        self.assertGreater(float(halfspace_green(np.array([-0.2, 0.1]), y, 3)), 0.0)

    def test_axis_nodes_sorted(self):
        mesh = half_ball()
        axis = axis_nodes(mesh)
        radii = np.linalg.norm(mesh.nodes[axis], axis=1)
        self.assertTrue(np.all(np.diff(radii) > 0))
        self.assertNotIn(mesh.origin, axis)
        node = nearest_axis_node(mesh, 0.5)
        self.assertIn(node, axis)
        self.assertLess(abs(mesh.nodes[node, 0] + 0.5), 0.15)


class ParametrixTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.mesh = half_ball()

    def test_first_term_has_fundamental_decay(self):
        term = parametrix_terms(2.0, self.mesh, 1)[0]
        self.assertEqual(term.target_exponent, -1.0)
        self.assertAlmostEqual(term.fitted_exponent, -1.0, places=8)
        self.assertAlmostEqual(term.bound_constant, 2.0 / (4.0 * math.pi))
        self.assertTrue(term.bound_holds)

    def test_second_term_is_bounded_and_positive(self):
        terms = parametrix_terms(1.0, self.mesh, 2)
        second = terms[1]
        self.assertEqual(second.order, 2)
        self.assertEqual(second.target_exponent, 0.0)
        self.assertTrue(np.all(second.values > 0))
        self.assertTrue(np.isfinite(second.bound_constant))

    def test_third_term_for_three_dimensions(self):
        terms = parametrix_terms(1.0, self.mesh, 3)
        self.assertEqual([term.order for term in terms], [1, 2, 3])

    def test_zero_coefficient(self):
        term = parametrix_terms(0.0, self.mesh, 1)[0]
        self.assertEqual(term.bound_constant, 0.0)
        self.assertEqual(term.fitted_exponent, float("inf"))

    def test_depth_checks(self):
        with self.assertRaises(ValueError):
            parametrix_terms(1.0, self.mesh, 0)
        with self.assertRaises(ValueError):
            parametrix_terms(1.0, self.mesh, 4)
        with self.assertRaises(ValueError):
            parametrix_terms(1.0, half_ball(n=4), 3)


class DiscreteGreenTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.mesh = half_ball(samples=16)
        cls.op = assemble(cls.mesh)
        cls.x = nearest_axis_node(cls.mesh, 0.5)
        cls.y = nearest_axis_node(cls.mesh, 0.25)
        cls.gx = greens_solve(cls.mesh, pole=cls.x, op=cls.op)
        cls.gy = greens_solve(cls.mesh, pole=cls.y, op=cls.op)

    def test_symmetric(self):
        self.assertAlmostEqual(self.gx.values[self.y] / self.gy.values[self.x], 1.0, places=10)
        self.assertGreater(self.gx.values[self.x], 0.0)

    def test_reproduces_point_values(self):
        self.assertTrue(self.gx.on_axis)
        self.assertTrue(np.isfinite(self.gx.reproduction_error))
        self.assertLess(self.gx.reproduction_error, 0.2)

    def test_off_axis_pole_has_no_reproduction_error(self):
        nodes = self.mesh.nodes
        free = np.asarray(self.mesh.free)
        off_axis = free[nodes[free, 1] > 0.2]
        pole = int(off_axis[np.argmin(np.linalg.norm(nodes[off_axis] - [-0.4, 0.4], axis=1))])
        kernel = greens_solve(self.mesh, pole=pole, op=self.op)
        self.assertFalse(kernel.on_axis)
        self.assertTrue(math.isnan(kernel.reproduction_error))
        self.assertGreater(kernel.values[pole], 0.0)

    def test_pole_checks(self):
        with self.assertRaises(ValueError):
            greens_solve(self.mesh, op=self.op)
        with self.assertRaises(GeometryError):
            greens_solve(self.mesh, pole=self.mesh.origin, op=self.op)

    def test_estimate_constants(self):
        constants = estimate_constants([self.gx, self.gy])
        self.assertEqual(constants.h, self.mesh.h)
        # 半空间中 G ≤ 1/(4π|x − y|)
        self.assertGreater(constants.g5, 0.0)
        self.assertLess(constants.g5, 0.12)
        for value in (constants.g6, constants.g7, constants.g8):
            self.assertTrue(np.isfinite(value))
            self.assertGreater(value, 0.0)
        with self.assertRaises(ValueError):
            estimate_constants([])

    def test_kernels_must_share_mesh(self):
        other = half_ball(samples=8)
        kernel = greens_solve(other, pole=nearest_axis_node(other, 0.5))
        with self.assertRaises(ValueError):
            estimate_constants([self.gx, kernel])

    def test_boundary_kernel_matches_flat_poisson_kernel(self):
        kernel = boundary_kernel(self.mesh, op=self.op)
        # 平坦边界：H(x) = |x₁| / (2π|x|³)
        expected = 1.0 / (2.0 * math.pi)
        self.assertGreater(kernel.rigidity_alpha, 0.5 * expected)
        self.assertLess(kernel.rigidity_alpha, 2.0 * expected)
        self.assertLess(kernel.rigidity_residual, 0.5)
        self.assertGreater(kernel.upper, 0.0)
        with self.assertRaises(ValueError):
            boundary_kernel(self.mesh, poles=(int(axis_nodes(self.mesh)[2]), int(axis_nodes(self.mesh)[1])), op=self.op)


if __name__ == "__main__":
    unittest.main()
