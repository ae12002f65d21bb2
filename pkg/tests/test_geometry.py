import math
import tempfile
import unittest
from pathlib import Path

import numpy as np

from core.errors import GeometryError
from core.model import DomainSpec, EdgeTag, NodeTag
from geometry import (
    boundary_distance,
    cell_geometry,
    chart_map,
    export_mesh,
    import_mesh,
    interpolate_at,
    make_domain,
    refine,
    scale_mesh,
    star_shape_check,
)


def flat_spec(**kwargs):
    values = dict(n=3, s=1.0, family="perturbed-half-ball", kappa=0.0, radius=1.0, meridian_samples=12)
    values.update(kwargs)
    return DomainSpec(**values)


class MakeDomainTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.mesh, cls.chart, cls.curv = make_domain(flat_spec())

    def test_origin_is_singular_vertex(self):
        mesh = self.mesh
        np.testing.assert_array_equal(mesh.nodes[mesh.origin], [0.0, 0.0])
        self.assertEqual(mesh.node_tags[mesh.origin], NodeTag.SINGULAR_VERTEX)
        self.assertNotIn(mesh.origin, mesh.free)

    def test_nodes_inside_half_ball(self):
        nodes = self.mesh.nodes
        self.assertTrue(np.all(nodes[:, 0] <= 1e-14))
        self.assertTrue(np.all(nodes[:, 1] >= 0.0))
        self.assertTrue(np.all(np.linalg.norm(nodes, axis=1) <= 1.0 + 1e-12))

    def test_cells_counter_clockwise(self):
        area, _ = cell_geometry(self.mesh.nodes, self.mesh.cells)
        self.assertTrue(np.all(area > 0))
        # 内接多边形面积接近四分之一圆
        self.assertAlmostEqual(float(np.sum(area)), math.pi / 4, delta=0.01)

    def test_axis_and_dirichlet_tags(self):
        mesh = self.mesh
        axis_edges = mesh.edges[mesh.edge_tags == EdgeTag.AXIS]
        self.assertTrue(np.all(mesh.nodes[axis_edges.ravel(), 1] == 0.0))
        free = mesh.free
        self.assertTrue(np.all(np.isin(mesh.node_tags[free], [NodeTag.INTERIOR, NodeTag.AXIS])))
        dirichlet = mesh.dirichlet_edges
        on_face = np.abs(mesh.nodes[dirichlet.ravel(), 0]) <= 1e-14
        on_arc = np.abs(np.linalg.norm(mesh.nodes[dirichlet.ravel()], axis=1) - 1.0) <= 1e-12
        self.assertTrue(np.all(on_face | on_arc))

    def test_flat_curvature(self):
        self.assertEqual(self.curv.mean_curvature_trace, 0.0)
        self.assertEqual(self.chart.hessian_at_0, 0.0)

    def test_curved_boundary_follows_chart(self):
        mesh, chart, curv = make_domain(flat_spec(kappa=-1.0))
        face = mesh.dirichlet_edges[~mesh.edge_on_arc[mesh.edge_tags == EdgeTag.DIRICHLET]]
        nodes = mesh.nodes[np.unique(face)]
        np.testing.assert_allclose(nodes[:, 0], chart.phi0(nodes[:, 1]), atol=1e-14)
        self.assertAlmostEqual(curv.mean_curvature_trace, -2.0)

    def test_folding_meridian_rejected(self):
        with self.assertRaises(GeometryError):
            make_domain(flat_spec(kappa=-10.0))

    def test_star_shaped_family_passes_check(self):
        mesh, _, _ = make_domain(flat_spec(family="star-shaped-half-ball", kappa=0.5))
        ok, worst = star_shape_check(mesh)
        self.assertTrue(ok)
        self.assertGreaterEqual(worst, -1e-10)

    def test_cone_has_no_chart(self):
        mesh, chart, curv = make_domain(flat_spec(family="cone", aperture=math.pi / 3))
        self.assertIsNone(chart)
        self.assertIsNone(curv)
        angles = np.arctan2(mesh.nodes[:, 1], -mesh.nodes[:, 0])
        self.assertTrue(np.all(angles <= math.pi / 3 + 1e-12))


class MeshToolsTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.mesh, _, _ = make_domain(flat_spec(meridian_samples=8))

    def test_refine_quadruples_cells(self):
        fine = refine(self.mesh)
        self.assertEqual(len(fine.cells), 4 * len(self.mesh.cells))
        self.assertLess(fine.h, 0.6 * self.mesh.h)
        arc = np.unique(fine.edges[fine.edge_on_arc])
        np.testing.assert_allclose(np.linalg.norm(fine.nodes[arc], axis=1), 1.0, atol=1e-12)
        with self.assertRaises(ValueError):
            refine(self.mesh, 0)

    def test_scale_mesh(self):
        big = scale_mesh(self.mesh, 2.0)
        np.testing.assert_allclose(big.nodes, 2.0 * self.mesh.nodes)
        self.assertAlmostEqual(big.h, 2.0 * self.mesh.h)
        self.assertAlmostEqual(big.spec.radius, 2.0)

    def test_boundary_distance(self):
        d = boundary_distance(self.mesh, [[-0.5, 0.0], [-0.1, 0.2]])
        self.assertAlmostEqual(d[0], 0.5, delta=0.02)
        self.assertAlmostEqual(d[1], 0.1, delta=1e-12)

    def test_linear_field_interpolates_exactly(self):
        u = self.mesh.nodes[:, 0] + 2.0 * self.mesh.nodes[:, 1]
        values, inside = interpolate_at(self.mesh, u, [[-0.3, 0.4], [0.5, 0.5]])
        self.assertTrue(inside[0])
        self.assertFalse(inside[1])
        self.assertAlmostEqual(values[0], 0.5, places=12)
        self.assertEqual(values[1], 0.0)

    def test_chart_map(self):
        mesh, chart, _ = make_domain(flat_spec(kappa=-1.0, meridian_samples=8))
        local = np.array([[-0.1, 0.2]])
        np.testing.assert_allclose(chart_map(None, local), local)
        np.testing.assert_allclose(chart_map(chart, local), [[-0.1 + 0.02, 0.2]])
        with self.assertRaises(GeometryError):
            chart_map(chart, [[-1.5, 0.0]])

    def test_export_import_round_trip(self):
        values = np.arange(self.mesh.num_nodes, dtype=float) / 7.0
        with tempfile.TemporaryDirectory() as temp_dir:
            path = export_mesh(self.mesh, Path(temp_dir) / "mesh.txt", values)
            mesh, loaded = import_mesh(path)
        np.testing.assert_array_equal(mesh.nodes, self.mesh.nodes)
        np.testing.assert_array_equal(mesh.cells, self.mesh.cells)
        np.testing.assert_array_equal(mesh.edge_on_arc, self.mesh.edge_on_arc)
        np.testing.assert_array_equal(loaded, values)
        self.assertEqual(mesh.spec, self.mesh.spec)

    def test_import_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            import_mesh("/nonexistent/mesh.txt")


if __name__ == "__main__":
    unittest.main()
