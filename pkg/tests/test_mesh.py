import tempfile
import unittest
from pathlib import Path

import numpy as np

from src.core.enums import BoundaryTag, Region
from src.core.errors import ParameterError
from src.core.mesh import (REGION_CODES, GeometrySpec, _finalize_mesh, build_decomposed_mesh, interface_frames,
                           read_mesh, validate_mesh, write_mesh)


def unit_layers() -> GeometrySpec:
    return GeometrySpec(width=1.0, porous_height=0.5, free_height=0.5)


class TestGeometrySpec(unittest.TestCase):
    def test_rejects_non_positive_dimensions(self):
        with self.assertRaises(ParameterError):
            GeometrySpec(width=0.0, porous_height=0.5, free_height=0.5)
        with self.assertRaises(ParameterError):
            GeometrySpec(width=1.0, porous_height=-1.0, free_height=0.5)

    def test_rejects_non_unit_gravity(self):
        with self.assertRaises(ParameterError):
            GeometrySpec(width=1.0, porous_height=0.5, free_height=0.5, gravity_direction=(0.0, 2.0))

    def test_derived_quantities(self):
        geom = GeometrySpec(width=2.0, porous_height=0.5, free_height=1.5)
        self.assertAlmostEqual(geom.total_height, 2.0)
        self.assertAlmostEqual(geom.area, 4.0)
        np.testing.assert_array_equal(geom.k, [0.0, 1.0])


class TestBuildDecomposedMesh(unittest.TestCase):
    def test_smallest_mesh_counts(self):
        mesh = build_decomposed_mesh(unit_layers(), 1, 1, 1)
        self.assertEqual(mesh.n_vertices, 6)
        self.assertEqual(mesh.n_triangles, 4)
        self.assertEqual(len(mesh.triangles_in(Region.FREE)), 2)
        self.assertEqual(len(mesh.triangles_in(Region.MATRIX)), 2)
        self.assertEqual(len(mesh.interface_edge_ids), 1)

    def test_structured_counts(self):
        mesh = build_decomposed_mesh(unit_layers(), 4, 3, 2)
        self.assertEqual(mesh.n_vertices, 30)
        self.assertEqual(mesh.n_triangles, 40)
        self.assertEqual(len(mesh.interface_edge_ids), 4)
        self.assertEqual(len(mesh.triangles_in(Region.MATRIX)), 2 * 4 * 2)

    def test_rejects_bad_counts(self):
        for counts in ((0, 1, 1), (1, -2, 1), (1, 1, 0), (1.5, 1, 1)):
            with self.assertRaises(ParameterError):
                build_decomposed_mesh(unit_layers(), *counts)

    def test_interface_frames_point_down(self):
        mesh = build_decomposed_mesh(GeometrySpec(width=3.0, porous_height=0.7, free_height=1.1), 5, 2, 3)
        for frame in interface_frames(mesh):
            np.testing.assert_allclose(frame.normal, [0.0, -1.0], atol=1e-15)
            np.testing.assert_allclose(frame.tangent, [1.0, 0.0], atol=1e-15)

    def test_interface_frames_unit_square(self):
        frames = interface_frames(build_decomposed_mesh(unit_layers(), 2, 2, 2))
        self.assertEqual(len(frames), 2)
        for frame in frames:
            self.assertAlmostEqual(frame.length, 0.5)

    def test_interface_edges_sorted_along_x(self):
        mesh = build_decomposed_mesh(unit_layers(), 6, 2, 2)
        mids = mesh.vertices[mesh.edges[mesh.interface_edge_ids]].mean(axis=1)
        self.assertTrue(np.all(np.diff(mids[:, 0]) > 0.0))
        np.testing.assert_allclose(mids[:, 1], 0.5)

    def test_boundary_measures(self):
        geom = GeometrySpec(width=2.0, porous_height=0.5, free_height=1.0)
        mesh = build_decomposed_mesh(geom, 4, 4, 2)
        self.assertAlmostEqual(mesh.boundary_measure(BoundaryTag.GAMMA_I), 2.0)
        self.assertAlmostEqual(mesh.boundary_measure(BoundaryTag.GAMMA_M), 2.0 + 2 * 0.5)
        self.assertAlmostEqual(mesh.boundary_measure(BoundaryTag.GAMMA_F), 2.0 + 2 * 1.0)

    def test_areas_positive_and_sum_to_domain(self):
        mesh = build_decomposed_mesh(unit_layers(), 3, 2, 4)
        areas = mesh.signed_areas()
        self.assertTrue(np.all(areas > 0.0))
        self.assertAlmostEqual(areas.sum(), 1.0, places=14)

    def test_arrays_are_read_only(self):
        mesh = build_decomposed_mesh(unit_layers(), 2, 1, 1)
        with self.assertRaises(ValueError):
            mesh.vertices[0, 0] = 5.0


class TestValidateMesh(unittest.TestCase):
    def setUp(self):
        self.mesh = build_decomposed_mesh(unit_layers(), 2, 2, 2)

    def rebuild(self, vertices=None, triangles=None, regions=None):
        m = self.mesh
        return _finalize_mesh(m.geometry,
                              m.vertices if vertices is None else vertices,
                              m.triangles if triangles is None else triangles,
                              m.regions if regions is None else regions,
                              m.boundary_edges, m.boundary_tags)

    def test_built_mesh_is_valid(self):
        for counts in ((1, 1, 1), (2, 2, 2), (4, 3, 2), (8, 4, 4)):
            self.assertEqual(validate_mesh(build_decomposed_mesh(unit_layers(), *counts)), [])

    def test_reversed_triangle_is_reported(self):
        triangles = self.mesh.triangles.copy()
        triangles[0] = triangles[0, [0, 2, 1]]
        kinds = {v.kind for v in validate_mesh(self.rebuild(triangles=triangles))}
        self.assertIn("negative-area", kinds)

    def test_region_flip_is_reported(self):
        regions = self.mesh.regions.copy()
        free = self.mesh.triangles_in(Region.FREE)
        regions[free[0]] = REGION_CODES[Region.MATRIX]
        kinds = {v.kind for v in validate_mesh(self.rebuild(regions=regions))}
        self.assertIn("straddle", kinds)

    def test_interface_vertex_split_on_matrix_side_is_reported(self):
        # give the matrix triangles their own copy of one interface vertex, moved down
        vertices = np.vstack([self.mesh.vertices, [[0.5, 0.45]]])
        new_id = len(vertices) - 1
        hm = self.mesh.geometry.porous_height
        target = int(np.flatnonzero((np.abs(vertices[:, 0] - 0.5) < 1e-12) & (np.abs(vertices[:, 1] - hm) < 1e-12))[0])
        triangles = self.mesh.triangles.copy()
        matrix = self.mesh.triangles_in(Region.MATRIX)
        rows = triangles[matrix]
        rows[rows == target] = new_id
        triangles[matrix] = rows
        kinds = {v.kind for v in validate_mesh(self.rebuild(vertices=vertices, triangles=triangles))}
        self.assertIn("nonconforming-interface", kinds)


class TestMeshFiles(unittest.TestCase):
    def test_write_then_read(self):
        geom = GeometrySpec(width=2.0, porous_height=0.25, free_height=0.75)
        mesh = build_decomposed_mesh(geom, 3, 2, 1)
        with tempfile.TemporaryDirectory() as tmp:
            path = write_mesh(mesh, Path(tmp) / "mesh.txt")
            loaded = read_mesh(path)
        np.testing.assert_array_equal(loaded.vertices, mesh.vertices)
        np.testing.assert_array_equal(loaded.triangles, mesh.triangles)
        np.testing.assert_array_equal(loaded.regions, mesh.regions)
        self.assertEqual(loaded.boundary_tags, mesh.boundary_tags)
        self.assertAlmostEqual(loaded.geometry.porous_height, 0.25)
        self.assertAlmostEqual(loaded.geometry.total_height, 1.0)
        self.assertEqual(validate_mesh(loaded), [])

    def test_missing_header(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bad.txt"
            path.write_text("not a mesh\n")
            with self.assertRaises(ParameterError):
                read_mesh(path)

    def test_truncated_file(self):
        mesh = build_decomposed_mesh(GeometrySpec(width=1.0, porous_height=0.5, free_height=0.5), 2, 1, 1)
        with tempfile.TemporaryDirectory() as tmp:
            path = write_mesh(mesh, Path(tmp) / "mesh.txt")
            lines = path.read_text().splitlines()
            for keep in (1 + 1 + mesh.n_vertices, len(lines) - 1):
                path.write_text("\n".join(lines[:keep]) + "\n")
                with self.assertRaises(ParameterError):
                    read_mesh(path)


if __name__ == "__main__":
    unittest.main()
