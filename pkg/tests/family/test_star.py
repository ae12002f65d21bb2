import unittest

import numpy as np

from core.errors import GeometryError
from core.model import DomainSpec
from family.star import StarShapedHalfBall


class StarShapedHalfBallTest(unittest.TestCase):
    def test_cap_has_no_cutoff(self):
        spec = DomainSpec(family="star-shaped-half-ball", kappa=0.5, radius=1.0)
        chart = StarShapedHalfBall().chart(spec)
        r = np.array([0.0, 0.5, 1.0])
        np.testing.assert_allclose(chart.phi0(r), -0.25 * r ** 2)
        np.testing.assert_allclose(chart.dphi0(r), -0.5 * r)

    def test_negative_curvature_rejected(self):
        with self.assertRaises(GeometryError):
            StarShapedHalfBall().validate(DomainSpec(family="star-shaped-half-ball", kappa=-0.5))

    def test_marked_star_shaped(self):
        self.assertTrue(StarShapedHalfBall.star_shaped)
        curv = StarShapedHalfBall().curvature(DomainSpec(family="star-shaped-half-ball", kappa=0.5))
        self.assertAlmostEqual(curv.mean_curvature_trace, 1.0)


if __name__ == "__main__":
    unittest.main()
