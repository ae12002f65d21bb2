import math
import unittest

import numpy as np
import scipy.sparse as sp
from scipy.integrate import quad

from core.errors import CoercivityError
from core.model import DomainSpec
from discretize import (
    assemble,
    dual_norm,
    gradient_energy,
    hs_integral,
    hs_quotient,
    interpolation_error_estimate,
    laplace_matrix,
    lowest_eigenpairs,
    require_coercive,
    singular_quadrature,
    solve_free,
    vertex_duffy_rule,
)
from geometry import make_domain

TRIANGLE = np.array([[0.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])


def polar_oracle(s, smooth=lambda x1, r: 1.0):
    """∫_T |x|^{−s} smooth，θ 从 −e₁ 量起，ρ_max = 1/(sin θ + cos θ)"""

    def inner(theta):
        rho_max = 1.0 / (math.sin(theta) + math.cos(theta))
        return quad(
            lambda rho: rho ** (1.0 - s) * smooth(-rho * math.cos(theta), rho * math.sin(theta)),
            0.0,
            rho_max,
        )[0]

    return quad(inner, 0.0, math.pi / 2)[0]


class VertexDuffyRuleTest(unittest.TestCase):
    def test_inverse_distance(self):
        points, _, w = vertex_duffy_rule(TRIANGLE, 0, beta=0.0)
        value = float(np.sum(w / np.linalg.norm(points, axis=1)))
        self.assertAlmostEqual(value, math.sqrt(2.0) * math.log(1.0 + math.sqrt(2.0)), places=10)

    def test_stronger_singularity_with_smooth_factor(self):
        s = 1.5
        points, bary, w = vertex_duffy_rule(TRIANGLE, 0, beta=1.0 - s)
        smooth = (1.0 + points[:, 0] + points[:, 1] ** 2) * np.linalg.norm(points, axis=1) ** -s
        value = float(np.sum(w * smooth))
        expected = polar_oracle(s, lambda x1, r: 1.0 + x1 + r ** 2)
        self.assertAlmostEqual(value, expected, places=7)
        np.testing.assert_allclose(bary.sum(axis=1), 1.0)

    def test_area_when_regular(self):
        _, _, w = vertex_duffy_rule(TRIANGLE, 1, beta=1.0)
        self.assertAlmostEqual(float(np.sum(w)), 0.5, places=12)

    def test_rejects_non_integrable_exponent(self):
        with self.assertRaises(ValueError):
            vertex_duffy_rule(TRIANGLE, 0, beta=-1.0)


class WeightedIntegralsTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        spec = DomainSpec(n=3, s=1.0, family="perturbed-half-ball", kappa=0.0, radius=1.0, meridian_samples=12)
        cls.mesh, _, _ = make_domain(spec)

    def test_volume_of_half_ball(self):
        quadrature = singular_quadrature(self.mesh, s=0.0)
        self.assertAlmostEqual(float(np.sum(quadrature.weights)) / (2.0 * math.pi / 3.0), 1.0, delta=1e-2)

    def test_singular_integral_of_constant(self):
        # ∫_{B⁻} |x|^{−1} = ∫_0^1 ρ^{−1} 2πρ² dρ = π
        value = hs_integral(self.mesh, np.ones(self.mesh.num_nodes), p=2.0, s=1.0)
        self.assertAlmostEqual(value / math.pi, 1.0, delta=1e-2)

    def test_gradient_energy_of_linear_field(self):
        u = self.mesh.nodes[:, 0]
        self.assertAlmostEqual(gradient_energy(self.mesh, u) / (2.0 * math.pi / 3.0), 1.0, delta=1e-2)

    def test_laplace_matrix_symmetric_with_constant_kernel(self):
        L = laplace_matrix(self.mesh)
        self.assertLess(abs(L - L.T).max(), 1e-14)
        np.testing.assert_allclose(L @ np.ones(self.mesh.num_nodes), 0.0, atol=1e-12)

    def test_quotient_scale_invariant(self):
        nodes = self.mesh.nodes
        u = np.maximum(1.0 - np.sum(nodes ** 2, axis=1), 0.0) * -nodes[:, 0]
        q1 = hs_quotient(self.mesh, u, p=3.0)
        q2 = hs_quotient(self.mesh, 5.0 * u, p=3.0)
        self.assertAlmostEqual(q1, q2, places=10)
        with self.assertRaises(ValueError):
            hs_quotient(self.mesh, np.zeros(self.mesh.num_nodes), p=3.0)

    def test_critical_quotient_same_on_doubled_domain(self):
        spec = DomainSpec(n=3, s=1.0, family="perturbed-half-ball", kappa=0.0, radius=2.0, meridian_samples=12)
        large, _, _ = make_domain(spec)
        np.testing.assert_allclose(large.nodes, 2.0 * self.mesh.nodes, atol=1e-12)
        nodes = self.mesh.nodes
        u = np.maximum(1.0 - np.sum(nodes ** 2, axis=1), 0.0) * -nodes[:, 0] * np.exp(nodes[:, 1])
        critical = spec.critical_exponent
        # u(x/2) 在大区域上的节点值与 u 在单位区域上相同
        q1 = hs_quotient(self.mesh, u, p=critical)
        q2 = hs_quotient(large, u, p=critical)
        self.assertAlmostEqual(q2 / q1, 1.0, places=9)
        # 次临界时商按 R^{(n−2) − 2(n−s)/p} 变化
        p = 3.0
        ratio = hs_quotient(large, u, p=p) / hs_quotient(self.mesh, u, p=p)
        self.assertAlmostEqual(ratio / 2.0 ** (1.0 - 4.0 / p), 1.0, places=9)

    def test_argument_checks(self):
        u = np.ones(self.mesh.num_nodes)
        with self.assertRaises(ValueError):
            hs_integral(self.mesh, u, p=0.5)
        with self.assertRaises(ValueError):
            hs_integral(self.mesh, u, p=2.0, s=2.5)

    def test_linear_field_has_no_edge_jumps(self):
        u = 3.0 * self.mesh.nodes[:, 0] - self.mesh.nodes[:, 1]
        self.assertLess(interpolation_error_estimate(self.mesh, u), 1e-12)


class AssembleTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        spec = DomainSpec(n=3, s=1.0, family="perturbed-half-ball", kappa=-1.0, radius=1.0, meridian_samples=8)
        cls.mesh, _, _ = make_domain(spec)

    def test_laplacian_is_coercive(self):
        op = assemble(self.mesh)
        self.assertTrue(op.coercive)
        self.assertGreater(op.lambda_min, 0.0)
        require_coercive(op)

    def test_large_negative_potential_not_coercive(self):
        op = assemble(self.mesh, a=-1000.0)
        self.assertFalse(op.coercive)
        with self.assertRaises(CoercivityError):
            require_coercive(op)

    def test_dual_norm_matches_energy_norm(self):
        op = assemble(self.mesh)
        rng = np.random.default_rng(1)
        w = rng.standard_normal(len(op.free))
        K = op.restrict(op.stiffness)
        r = K @ w
        self.assertAlmostEqual(dual_norm(op, r), math.sqrt(float(w @ r)), places=8)
        np.testing.assert_allclose(solve_free(op, r), w, atol=1e-8)


class LowestEigenpairsTest(unittest.TestCase):
    def test_dense_diagonal(self):
        A = sp.diags([3.0, 1.0, 2.0]).tocsc()
        B = sp.identity(3, format="csc")
        values, vectors = lowest_eigenpairs(A, B, k=2)
        np.testing.assert_allclose(values, [1.0, 2.0])
        self.assertEqual(vectors.shape, (3, 2))

    def test_shift_invert_path_matches_dense(self):
        n = 1600
        scale = (n + 1) ** 2
        main = 2.0 * scale * np.ones(n)
        off = -scale * np.ones(n - 1)
        A = sp.diags([off, main, off], [-1, 0, 1]).tocsc()
        B = sp.identity(n, format="csc")
        values, _ = lowest_eigenpairs(A, B, k=3)
        exact = scale * (2.0 - 2.0 * np.cos(np.arange(1, 4) * math.pi / (n + 1)))
        np.testing.assert_allclose(values, exact, rtol=1e-6)

    def test_invalid_k(self):
        with self.assertRaises(ValueError):
            lowest_eigenpairs(sp.identity(3), sp.identity(3), k=0)


if __name__ == "__main__":
    unittest.main()
