import math
import unittest

from core.errors import GeometryError
from core.model import DomainSpec
from family.cone import Cone


class ConeTest(unittest.TestCase):
    def test_requires_aperture(self):
        with self.assertRaises(GeometryError):
            Cone().validate(DomainSpec(family="cone"))
        with self.assertRaises(GeometryError):
            Cone().validate(DomainSpec(family="cone", aperture=4.0))

    def test_no_chart_or_curvature(self):
        spec = DomainSpec(family="cone", aperture=math.pi / 3)
        Cone().validate(spec)
        self.assertIsNone(Cone().chart(spec))
        self.assertIsNone(Cone().curvature(spec))
        self.assertAlmostEqual(Cone().aperture(spec), math.pi / 3)


if __name__ == "__main__":
    unittest.main()
