import numpy as np
import pytest

from setpose import (DegenerateInput, EmptyMesh, ModelPoints, ParseError, Pose,
                     allocentric_to_egocentric, compose,
                     egocentric_to_allocentric, load_ply_vertices,
                     matrix_to_rot6d, points_diameter, random_rotation,
                     rot6d_to_matrix, subsample_points, transform_points)


def brute_force_diameter(points):
    best = 0.0
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            best = max(best, float(np.linalg.norm(points[i] - points[j])))
    return best


class TestRot6d:
    def test_identity_axes(self):
        r6 = np.array([1.0, 0, 0, 0, 1.0, 0])
        assert np.allclose(rot6d_to_matrix(r6), np.eye(3), atol=1e-15)

    def test_scaled_axes_decode_to_identity(self):
        r6 = np.array([2.0, 0, 0, 0, 3.0, 0])
        assert np.allclose(rot6d_to_matrix(r6), np.eye(3), atol=1e-15)

    def test_encode_identity(self):
        assert np.array_equal(matrix_to_rot6d(np.eye(3)),
                              np.array([1.0, 0, 0, 0, 1.0, 0]))

    def test_encode_z_rotation(self):
        # 90 degrees about z: columns are (0,1,0) and (-1,0,0)
        rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        assert np.allclose(matrix_to_rot6d(rot), [0, 1, 0, -1, 0, 0], atol=1e-15)

    def test_roundtrip_1000_random_rotations(self, rng):
        worst = 0.0
        for _ in range(1000):
            rot = random_rotation(rng)
            back = rot6d_to_matrix(matrix_to_rot6d(rot))
            worst = max(worst, np.abs(back - rot).max())
        assert worst < 1e-9

    def test_decode_scale_invariance(self, rng):
        for _ in range(200):
            r6 = matrix_to_rot6d(random_rotation(rng))
            scaled = r6.copy()
            scaled[:3] *= rng.uniform(0.1, 10.0)
            scaled[3:] *= rng.uniform(0.1, 10.0)
            assert np.abs(rot6d_to_matrix(scaled) - rot6d_to_matrix(r6)).max() < 1e-9

    def test_decode_output_is_rotation(self, rng):
        r6 = rng.normal(size=6)
        rot = rot6d_to_matrix(r6)
        assert np.abs(rot.T @ rot - np.eye(3)).max() < 1e-12
        assert abs(np.linalg.det(rot) - 1.0) < 1e-12

    def test_batched_decode_matches_scalar(self, rng):
        r6 = rng.normal(size=(5, 6))
        batched = rot6d_to_matrix(r6)
        for i in range(5):
            assert np.array_equal(batched[i], rot6d_to_matrix(r6[i]))

    def test_zero_first_axis_rejected(self):
        with pytest.raises(DegenerateInput):
            rot6d_to_matrix(np.array([0.0, 0, 0, 0, 1.0, 0]))

    def test_parallel_axes_rejected(self):
        with pytest.raises(DegenerateInput):
            rot6d_to_matrix(np.array([1.0, 0, 0, 2.0, 0, 0]))


class TestEgoAllocentric:
    def test_on_optical_axis_is_identity_map(self, rng):
        pose = Pose(random_rotation(rng), [0.0, 0.0, 1.0])
        allo = egocentric_to_allocentric(pose)
        assert np.abs(allo.rotation - pose.rotation).max() < 1e-12

    def test_direction_only_dependence(self, rng):
        rot = random_rotation(rng)
        a1 = egocentric_to_allocentric(Pose(rot, [1.0, 0.0, 1.0]))
        a2 = egocentric_to_allocentric(Pose(rot, [3.5, 0.0, 3.5]))
        assert np.abs(a1.rotation - a2.rotation).max() < 1e-12

    def test_roundtrip_1000(self, rng):
        worst = 0.0
        for _ in range(1000):
            t = rng.uniform(-1.0, 1.0, size=3)
            t[2] = rng.uniform(0.2, 3.0)
            pose = Pose(random_rotation(rng), t)
            back = allocentric_to_egocentric(egocentric_to_allocentric(pose))
            worst = max(worst, np.abs(back.rotation - pose.rotation).max())
        assert worst < 1e-9

    def test_behind_camera_direction_still_bijective(self, rng):
        pose = Pose(random_rotation(rng), [0.0, 0.0, -1.0])
        back = allocentric_to_egocentric(egocentric_to_allocentric(pose))
        assert np.abs(back.rotation - pose.rotation).max() < 1e-9

    def test_object_at_origin_rejected(self, rng):
        pose = Pose(random_rotation(rng), [0.0, 0.0, 1.0])
        object.__setattr__(pose, "translation", np.zeros(3))
        with pytest.raises(DegenerateInput):
            egocentric_to_allocentric(pose)


class TestPoseValidation:
    def test_non_orthonormal_rejected(self):
        with pytest.raises(DegenerateInput):
            Pose(np.eye(3) * 1.1, np.zeros(3))

    def test_reflection_rejected(self):
        with pytest.raises(DegenerateInput):
            Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_non_finite_translation_rejected(self):
        with pytest.raises(DegenerateInput):
            Pose(np.eye(3), [0.0, np.nan, 1.0])


class TestModelPoints:
    def test_subsample_returns_all_when_fewer(self, rng):
        verts = rng.normal(size=(10, 3))
        mp = subsample_points(verts, 1500, seed=0)
        assert np.array_equal(np.sort(mp.points, axis=0), np.sort(verts, axis=0))

    def test_unit_cube_diameter(self):
        corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)],
                           dtype=float)
        mp = subsample_points(corners, 8, seed=0)
        assert abs(mp.diameter - np.sqrt(3.0)) < 1e-12

    def test_subsample_deterministic(self, rng):
        verts = rng.normal(size=(500, 3))
        a = subsample_points(verts, 64, seed=7)
        b = subsample_points(verts, 64, seed=7)
        assert np.array_equal(a.points, b.points)

    def test_subsample_distinct_vertices(self, rng):
        verts = rng.normal(size=(100, 3))
        mp = subsample_points(verts, 50, seed=3)
        assert len(np.unique(mp.points, axis=0)) == 50

    def test_empty_rejected(self):
        with pytest.raises(EmptyMesh):
            subsample_points(np.zeros((0, 3)), 10, seed=0)
        with pytest.raises(EmptyMesh):
            subsample_points(np.ones((4, 3)), 0, seed=0)

    def test_diameter_matches_brute_force(self, rng):
        pts = rng.normal(size=(150, 3))
        assert abs(points_diameter(pts) - brute_force_diameter(pts)) < 1e-12


class TestTransformPoints:
    def test_identity(self, rng):
        pts = rng.normal(size=(20, 3))
        out = transform_points(pts, Pose.identity())
        assert np.array_equal(out, pts)

    def test_pure_translation(self, rng):
        pts = rng.normal(size=(20, 3))
        out = transform_points(pts, Pose(np.eye(3), [0.0, 0.0, 0.5]))
        assert np.allclose(out - pts, [0.0, 0.0, 0.5], atol=1e-15)

    def test_composition(self, rng):
        pts = rng.normal(size=(15, 3))
        p1 = Pose(random_rotation(rng), rng.normal(size=3))
        p2 = Pose(random_rotation(rng), rng.normal(size=3))
        two_steps = transform_points(transform_points(pts, p1), p2)
        one_step = transform_points(pts, compose(p2, p1))
        assert np.abs(two_steps - one_step).max() < 1e-12

    def test_diameter_invariant_under_rigid_transform(self, rng):
        mp = ModelPoints(rng.normal(size=(50, 3)))
        pose = Pose(random_rotation(rng), rng.normal(size=3))
        moved = transform_points(mp, pose)
        assert abs(points_diameter(moved) - mp.diameter) < 1e-9


class TestPlyReader:
    def _write(self, tmp_path, text, name="mesh.ply"):
        path = tmp_path / name
        path.write_text(text)
        return path

    def test_reads_vertices_ignores_faces(self, tmp_path):
        path = self._write(tmp_path, "\n".join([
            "ply", "format ascii 1.0", "comment synthetic",
            "element vertex 3",
            "property float x", "property float y", "property float z",
            "property uchar red",
            "element face 1", "property list uchar int vertex_indices",
            "end_header",
            "0 0 0 255", "1 0 0 10", "0 2 0 20",
            "3 0 1 2", ""]))
        verts = load_ply_vertices(path)
        assert np.array_equal(verts, [[0, 0, 0], [1, 0, 0], [0, 2, 0]])

    def test_millimeter_scale(self, tmp_path):
        path = self._write(tmp_path, "\n".join([
            "ply", "format ascii 1.0", "element vertex 1",
            "property float x", "property float y", "property float z",
            "end_header", "1000 0 500", ""]))
        assert np.allclose(load_ply_vertices(path, scale=1e-3), [[1.0, 0.0, 0.5]])

    def test_reorders_xyz_properties(self, tmp_path):
        path = self._write(tmp_path, "\n".join([
            "ply", "format ascii 1.0", "element vertex 1",
            "property float z", "property float x", "property float y",
            "end_header", "3 1 2", ""]))
        assert np.array_equal(load_ply_vertices(path), [[1, 2, 3]])

    def test_binary_format_rejected(self, tmp_path):
        path = self._write(tmp_path, "ply\nformat binary_little_endian 1.0\nend_header\n")
        with pytest.raises(ParseError):
            load_ply_vertices(path)

    def test_missing_magic_rejected(self, tmp_path):
        path = self._write(tmp_path, "nope\n")
        with pytest.raises(ParseError):
            load_ply_vertices(path)

    def test_truncated_vertex_data(self, tmp_path):
        path = self._write(tmp_path, "\n".join([
            "ply", "format ascii 1.0", "element vertex 2",
            "property float x", "property float y", "property float z",
            "end_header", "0 0 0", ""]))
        with pytest.raises(ParseError):
            load_ply_vertices(path)

    def test_bad_vertex_row(self, tmp_path):
        path = self._write(tmp_path, "\n".join([
            "ply", "format ascii 1.0", "element vertex 1",
            "property float x", "property float y", "property float z",
            "end_header", "0 zero 0", ""]))
        with pytest.raises(ParseError):
            load_ply_vertices(path)
