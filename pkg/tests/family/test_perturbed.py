import unittest

import numpy as np

from core.errors import GeometryError
from core.model import DomainSpec
from family import get_family
from family.perturbed import PerturbedHalfBall, smooth_cutoff, smooth_cutoff_derivative


class SmoothCutoffTest(unittest.TestCase):
    def test_plateau_and_support(self):
        np.testing.assert_allclose(smooth_cutoff([0.0, 0.25, 0.5]), 1.0)
        np.testing.assert_allclose(smooth_cutoff([1.0, 1.5]), 0.0)

    def test_derivative_matches_difference_quotient(self):
        t = np.linspace(0.55, 0.95, 9)
        step = 1e-6
        numeric = (smooth_cutoff(t + step) - smooth_cutoff(t - step)) / (2 * step)
        np.testing.assert_allclose(smooth_cutoff_derivative(t), numeric, rtol=1e-5, atol=1e-8)


class PerturbedHalfBallTest(unittest.TestCase):
    def setUp(self):
        self.spec = DomainSpec(n=3, s=1.0, family="perturbed-half-ball", kappa=-1.0, radius=1.0)
        self.family = PerturbedHalfBall()

    def test_parabola_near_origin(self):
        chart = self.family.chart(self.spec)
        r = np.linspace(0.0, 0.2, 5)
        np.testing.assert_allclose(chart.phi0(r), 0.5 * r ** 2)
        self.assertEqual(chart.hessian_at_0, 1.0)

    def test_flat_beyond_cutoff(self):
        chart = self.family.chart(self.spec)
        np.testing.assert_allclose(chart.phi0([0.5, 0.8, 1.0]), 0.0)

    def test_curvature_data(self):
        curv = self.family.curvature(self.spec)
        self.assertEqual(curv.alphas, (-1.0, -1.0))
        self.assertAlmostEqual(curv.mean_curvature_trace, -2.0)
        np.testing.assert_allclose(curv.second_form(np.array([[1.0, 0.0], [0.6, 0.8]])), [-1.0, -1.0])

    def test_aperture_rejected(self):
        spec = DomainSpec(family="perturbed-half-ball", aperture=1.0)
        with self.assertRaises(GeometryError):
            self.family.validate(spec)

    def test_registry(self):
        self.assertIsInstance(get_family("perturbed-half-ball"), PerturbedHalfBall)
        with self.assertRaises(GeometryError):
            get_family("torus")


if __name__ == "__main__":
    unittest.main()
