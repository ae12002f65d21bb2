import math
import unittest

import numpy as np
import sympy as sym

from core.errors import GeometryError
from core.model import BubbleDecomposition, BubbleProfile, BubbleScale, CurvatureData, DomainSpec
from family.perturbed import axisymmetric_curvature
from geometry import make_domain
from pohozaev import boundary_gradient_integral, pohozaev_defect, ratio_prediction, trace_integral


def domain(samples=8, **kwargs):
    values = dict(n=3, s=1.0, family="perturbed-half-ball", radius=1.0, meridian_samples=samples)
    values.update(kwargs)
    return make_domain(DomainSpec(**values))


def manufactured(p=3, s=1):
    """u = −x₁(1 − |x|²) 与对应的源项（n = 3）"""
    x1, r = sym.symbols("x1 r", real=True)
    u = -x1 * (1 - x1 ** 2 - r ** 2)
    laplacian = sym.diff(u, x1, 2) + sym.diff(u, r, 2) + sym.diff(u, r) / r
    f = -laplacian - u ** (p - 1) / sym.sqrt(x1 ** 2 + r ** 2) ** s
    exact = sym.lambdify((x1, r), u, "numpy")
    source = sym.lambdify((x1, r), f, "numpy")
    return exact, lambda points: source(points[:, 0], points[:, 1])


class PohozaevIdentityTest(unittest.TestCase):
    def test_exact_solution_has_small_defect(self):
        mesh, _, _ = domain(samples=16)
        exact, source = manufactured()
        u = exact(mesh.nodes[:, 0], mesh.nodes[:, 1])
        report = pohozaev_defect(mesh, u, p=3.0, r=0.5, source=source)
        scale = max(abs(report.lhs_volume), abs(report.rhs_boundary))
        self.assertGreater(scale, 0.0)
        self.assertLess(abs(report.defect) / scale, 0.1)
        self.assertAlmostEqual(report.defect, report.lhs_volume - report.rhs_boundary)
        self.assertNotEqual(report.source_term, 0.0)

    def test_flat_face_has_no_boundary_term(self):
        mesh, _, _ = domain()
        u = mesh.nodes[:, 0] * (1.0 - np.sum(mesh.nodes ** 2, axis=1))
        report = pohozaev_defect(mesh, u, r=0.5)
        self.assertLess(abs(report.boundary_term), 1e-14)
        self.assertEqual(report.source_term, 0.0)

    def test_boundary_term_sign_follows_curvature(self):
        for kappa, sign in ((-1.0, -1.0), (1.0, 1.0)):
            mesh, _, _ = domain(kappa=kappa)
            u = -mesh.nodes[:, 0] + 0.5 * mesh.nodes[:, 1]
            value = boundary_gradient_integral(mesh, u, region=0.25)
            self.assertGreater(sign * value, 0.0, msg=f"κ={kappa}")

    def test_radius_checks(self):
        mesh, _, _ = domain(kappa=-1.0)
        u = np.zeros(mesh.num_nodes)
        with self.assertRaises(ValueError):
            pohozaev_defect(mesh, u, r=0.0)
        with self.assertRaises(GeometryError):
            pohozaev_defect(mesh, u, r=1.5)


class TraceIntegralTest(unittest.TestCase):
    def test_unit_gradient_on_flat_disk(self):
        mesh, _, _ = domain()
        value = trace_integral(mesh, mesh.nodes[:, 0], lambda points: np.ones(len(points)))
        self.assertAlmostEqual(value, math.pi, places=10)

    def test_whole_boundary_of_flat_half_ball(self):
        mesh, _, _ = domain(samples=16)
        value = boundary_gradient_integral(mesh, mesh.nodes[:, 0])
        # ½ · R · |半球面| = π
        self.assertAlmostEqual(value / math.pi, 1.0, delta=0.02)

    def test_cone_has_no_flat_face(self):
        mesh, _, _ = domain(family="cone", aperture=math.pi / 3)
        with self.assertRaises(ValueError):
            trace_integral(mesh, mesh.nodes[:, 0], lambda points: np.ones(len(points)))


class RatioPredictionTest(unittest.TestCase):
    def setUp(self):
        self.mesh, _, _ = domain(samples=16)
        x = self.mesh.nodes
        values = -x[:, 0] * np.exp(-np.sum(x ** 2, axis=1))
        self.trace_r2 = trace_integral(self.mesh, values, lambda points: np.sum(points ** 2, axis=1))
        self.profile = self.make_profile(values, self.trace_r2)
        self.scale = BubbleScale(mu=0.01, k=1.0, center=(0.0, 0.0), alpha_measured=1.0, p_eps=0.002, exponent=0.99)

    def make_profile(self, values, trace_r2):
        return BubbleProfile(mesh=self.mesh, values=values, energy=2.0, trace_r2=trace_r2, outside_fraction=0.0)

    def decomposition(self, scales, profiles):
        return BubbleDecomposition(
            scales=scales,
            weak_limit=np.zeros(self.mesh.num_nodes),
            profiles=profiles,
            residual_sup=0.0,
            threshold=1.0,
            capped=False,
            cut_radius=1.0,
        )

    def test_umbilic_boundary_forms_agree(self):
        curv = axisymmetric_curvature(3, -1.0)
        prediction = ratio_prediction(self.decomposition((self.scale,), (self.profile,)), curv)
        self.assertGreater(self.trace_r2, 0.0)
        # (n − s) · κ · ∫|x|²|∇ũ|² / 能量
        self.assertAlmostEqual(prediction.general / (2.0 * -1.0 * self.trace_r2 / 2.0), 1.0, places=10)
        self.assertAlmostEqual(prediction.mean_curvature / prediction.general, 1.0, delta=5e-3)
        self.assertAlmostEqual(prediction.boundary_integral_II / -self.trace_r2, 1.0, places=10)
        self.assertAlmostEqual(prediction.measured, 0.2)
        self.assertTrue(prediction.asymptotic_only)

    def test_general_form_reads_the_profile_field(self):
        curv = axisymmetric_curvature(3, 1.0)
        # 记录的迹数据与场不一致时两种形式分开
        stale = self.make_profile(self.profile.values, 2.0 * self.trace_r2)
        prediction = ratio_prediction(self.decomposition((self.scale,), (stale,)), curv)
        self.assertAlmostEqual(prediction.mean_curvature / prediction.general, 2.0, places=8)
        # 场加倍，一般形式按平方变化
        doubled = self.make_profile(2.0 * self.profile.values, self.trace_r2)
        prediction = ratio_prediction(self.decomposition((self.scale,), (doubled,)), curv)
        self.assertAlmostEqual(prediction.general / prediction.mean_curvature, 4.0, places=8)

    def test_traceless_second_form_averages_out(self):
        curv = CurvatureData(alphas=(1.0, -1.0), mean_curvature_trace=0.0, II0=np.diag([1.0, -1.0]))
        prediction = ratio_prediction(self.decomposition((self.scale,), (self.profile,)), curv)
        self.assertAlmostEqual(prediction.general, 0.0, places=12)
        self.assertEqual(prediction.mean_curvature, 0.0)

    def test_missing_data(self):
        curv = axisymmetric_curvature(3, 1.0)
        with self.assertRaises(ValueError):
            ratio_prediction(self.decomposition((), ()), curv)
        with self.assertRaises(ValueError):
            ratio_prediction(self.decomposition((self.scale,), (self.profile,)), None)


if __name__ == "__main__":
    unittest.main()
