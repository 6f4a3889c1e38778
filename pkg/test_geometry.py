"""
Tests for core.geometry: value types, projection, visibility, k-NN graphs
and camera helpers.
"""

import numpy as np
import pytest

from core.errors import InsufficientPoints, InvalidGeometry
from core.geometry import (
    CameraIntrinsics,
    PointCloud,
    PoseSE3,
    VisibilityMode,
    build_knn_graph,
    compute_visibility,
    denormalize,
    flatten_pose,
    hemisphere_ring_poses,
    look_at,
    normalize_to_unit_cube,
    project_point,
    project_points,
    random_hemisphere_pose,
    relative_pose,
    select_visible,
)


@pytest.fixture
def intr():
    return CameraIntrinsics.centered(64, 64.0)


def random_pose(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return PoseSE3(q, rng.normal(size=3))


# ── Value types ─────────────────────────────────────────────────────

class TestPointCloud:
    def test_rejects_wrong_shape(self):
        with pytest.raises(InvalidGeometry):
            PointCloud(np.zeros((4, 2)))

    def test_rejects_empty(self):
        with pytest.raises(InvalidGeometry):
            PointCloud(np.zeros((0, 3)))

    def test_rejects_non_finite(self):
        pts = np.zeros((3, 3))
        pts[1, 2] = np.nan
        with pytest.raises(InvalidGeometry):
            PointCloud(pts)

    def test_points_are_read_only_copies(self):
        src = np.ones((2, 3))
        cloud = PointCloud(src)
        src[0, 0] = 5.0
        assert cloud.points[0, 0] == 1.0
        with pytest.raises(ValueError):
            cloud.points[0, 0] = 2.0

    def test_invalid_geometry_is_value_error(self):
        assert issubclass(InvalidGeometry, ValueError)


class TestPose:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(InvalidGeometry):
            PoseSE3(np.diag([1.0, 2.0, 1.0]), np.zeros(3))

    def test_rejects_reflection(self):
        with pytest.raises(InvalidGeometry):
            PoseSE3(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_inverse_composes_to_identity(self, rng):
        pose = random_pose(rng)
        ident = pose.compose(pose.inverse())
        np.testing.assert_allclose(ident.matrix(), np.eye(4), atol=1e-12)

    def test_matrix_round_trip(self, rng):
        pose = random_pose(rng)
        again = PoseSE3.from_matrix(pose.matrix())
        np.testing.assert_array_equal(again.rotation, pose.rotation)
        np.testing.assert_array_equal(again.translation, pose.translation)

    def test_relative_pose_recovers_aux(self, rng):
        primary, aux = random_pose(rng), random_pose(rng)
        rel = relative_pose(primary, aux)
        np.testing.assert_allclose(primary.compose(rel).matrix(), aux.matrix(), atol=1e-12)

    def test_relative_pose_to_self_is_identity(self, rng):
        pose = random_pose(rng)
        np.testing.assert_allclose(relative_pose(pose, pose).matrix(), np.eye(4), atol=1e-12)

    def test_flatten_pose_layout(self):
        rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        flat = flatten_pose(PoseSE3(rot, [1.0, 2.0, 3.0]))
        assert flat.shape == (12,)
        np.testing.assert_array_equal(flat[:9], rot.reshape(-1))
        np.testing.assert_array_equal(flat[9:], [1.0, 2.0, 3.0])


# ── Projection ──────────────────────────────────────────────────────

class TestProjection:
    def test_point_on_axis_hits_principal_point(self, intr):
        u, v, depth = project_point([0.0, 0.0, 2.0], PoseSE3.identity(), intr)
        assert (u, v, depth) == (32.0, 32.0, 2.0)

    def test_offset_point(self, intr):
        u, v, _ = project_point([0.5, -0.25, 2.0], PoseSE3.identity(), intr)
        assert u == pytest.approx(64.0 * 0.25 + 32.0)
        assert v == pytest.approx(64.0 * -0.125 + 32.0)

    def test_point_behind_camera(self, intr):
        u, v, depth = project_point([0.0, 0.0, -1.0], PoseSE3.identity(), intr)
        assert depth < 0
        assert np.isnan(u) and np.isnan(v)

    def test_look_at_centres_target(self, intr):
        pose = look_at([2.2, 0.0, 0.0])
        u, v, depth = project_point([0.0, 0.0, 0.0], pose, intr)
        assert u == pytest.approx(32.0)
        assert v == pytest.approx(32.0)
        assert depth == pytest.approx(2.2)

    def test_look_at_world_up_is_image_up(self, intr):
        pose = look_at([2.2, 0.0, 0.0])
        _, v, _ = project_point([0.0, 0.0, 0.5], pose, intr)
        assert v < 32.0

    def test_look_at_along_up_uses_fallback(self):
        pose = look_at([0.0, 0.0, 2.0])
        np.testing.assert_allclose(pose.rotation[:, 2], [0.0, 0.0, -1.0])

    def test_look_at_rejects_coincident_eye(self):
        with pytest.raises(InvalidGeometry):
            look_at([0.0, 0.0, 0.0])

    def test_rigid_motion_of_world_and_camera_keeps_projection(self, rng, intr):
        pts = rng.uniform(-0.5, 0.5, size=(20, 3))
        cam = look_at([0.3, -2.0, 0.7])
        motion = random_pose(rng)
        a = project_points(pts, cam, intr)
        b = project_points(motion.apply(pts), motion.compose(cam), intr)
        np.testing.assert_allclose(a, b, atol=1e-9)


# ── Normalization ───────────────────────────────────────────────────

class TestNormalization:
    def test_unit_cube(self, random_cloud):
        cloud = random_cloud(50, scale=3.0)
        norm, scale, center = normalize_to_unit_cube(cloud)
        extent = norm.points.max(axis=0) - norm.points.min(axis=0)
        assert extent.max() == pytest.approx(1.0)
        np.testing.assert_allclose((norm.points.max(axis=0) + norm.points.min(axis=0)) / 2, 0.0, atol=1e-12)
        np.testing.assert_allclose(denormalize(norm, scale, center).points, cloud.points, atol=1e-12)

    def test_single_point_keeps_unit_scale(self):
        norm, scale, _ = normalize_to_unit_cube(PointCloud([[1.0, 2.0, 3.0]]))
        assert scale == 1.0
        np.testing.assert_array_equal(norm.points, [[0.0, 0.0, 0.0]])


# ── Visibility ──────────────────────────────────────────────────────

class TestVisibility:
    def test_occluded_point_is_hidden(self, intr):
        pts = np.array([[0.0, 0.0, 2.0], [0.0, 0.0, 3.0]])
        vis = compute_visibility(pts, PoseSE3.identity(), intr)
        assert vis.tolist() == [True, False]

    def test_tolerance_keeps_near_equal_depths(self, intr):
        pts = np.array([[0.0, 0.0, 2.0], [0.0, 0.0, 2.005]])
        vis = compute_visibility(pts, PoseSE3.identity(), intr, depth_tolerance=0.01)
        assert vis.tolist() == [True, True]

    def test_out_of_frame_and_behind_are_invisible(self, intr):
        pts = np.array([[0.0, 0.0, -2.0], [10.0, 0.0, 1.0], [0.0, 0.0, 2.0]])
        vis = compute_visibility(pts, PoseSE3.identity(), intr)
        assert vis.tolist() == [False, False, True]

    def test_top_m_keeps_nearest(self, intr):
        pts = np.array([[-0.5, 0.0, 3.0], [0.0, 0.0, 2.0], [0.5, 0.0, 2.5]])
        vis = select_visible(pts, PoseSE3.identity(), intr, max_points=2, mode=VisibilityMode.TOP_M)
        assert vis.tolist() == [False, True, True]

    def test_zbuffer_mode_is_uncapped(self, intr):
        pts = np.array([[-0.5, 0.0, 3.0], [0.0, 0.0, 2.0], [0.5, 0.0, 2.5]])
        vis = select_visible(pts, PoseSE3.identity(), intr, max_points=1, mode="zbuffer")
        assert vis.sum() == 3

    def test_default_mode_caps_after_zbuffer(self, intr):
        pts = np.array([[-0.5, 0.0, 3.0], [0.0, 0.0, 2.0], [0.5, 0.0, 2.5], [0.0, 0.0, 4.0]])
        vis = select_visible(pts, PoseSE3.identity(), intr, max_points=2)
        assert vis.tolist() == [False, True, True, False]

    def test_equal_depth_prefers_lower_index(self, intr):
        pts = np.array([[-0.5, 0.0, 2.0], [0.5, 0.0, 2.0]])
        vis = select_visible(pts, PoseSE3.identity(), intr, max_points=1, mode="top_m")
        assert vis.tolist() == [True, False]

    def test_removing_occluders_never_hides_a_point(self, rng, intr):
        pts = rng.uniform(-0.5, 0.5, size=(200, 3))
        pose = look_at([0.0, -2.2, 0.8])
        before = compute_visibility(pts, pose, intr)
        assert 0 < before.sum() < len(pts)
        for _ in range(20):
            keep = np.sort(rng.choice(len(pts), size=int(rng.integers(1, len(pts))), replace=False))
            after = compute_visibility(pts[keep], pose, intr)
            assert np.all(after[before[keep]])
        # dropping exactly the visible points uncovers some hidden ones
        hidden = np.flatnonzero(~before)
        assert compute_visibility(pts[hidden], pose, intr).any()


# ── k-NN ────────────────────────────────────────────────────────────

class TestKnnGraph:
    def test_line_neighbours_and_ties(self):
        pts = np.array([[float(i), 0.0, 0.0] for i in range(4)])
        graph = build_knn_graph(pts, 1)
        # point 1 is equidistant from 0 and 2: lower index wins
        assert graph.neighbors[:, 0].tolist() == [1, 0, 1, 2]
        np.testing.assert_array_equal(graph.weights, np.ones((4, 1)))

    def test_self_excluded(self, random_cloud):
        graph = build_knn_graph(random_cloud(40), 6)
        assert graph.neighbors.shape == (40, 6)
        assert not np.any(graph.neighbors == np.arange(40)[:, None])

    def test_matches_brute_force(self, random_cloud):
        cloud = random_cloud(30)
        graph = build_knn_graph(cloud, 4, chunk_size=7)
        d = np.linalg.norm(cloud.points[:, None] - cloud.points[None], axis=-1)
        np.fill_diagonal(d, np.inf)
        np.testing.assert_array_equal(graph.neighbors, np.argsort(d, axis=1, kind="stable")[:, :4])

    def test_too_few_points(self):
        with pytest.raises(InsufficientPoints):
            build_knn_graph(np.zeros((3, 3)), 3)


# ── Camera rigs ─────────────────────────────────────────────────────

class TestCameraRigs:
    def test_ring_cameras_look_at_origin(self, intr):
        poses = hemisphere_ring_poses(4, elevation_deg=30.0, radius=2.2)
        assert len(poses) == 4
        for pose in poses:
            assert np.linalg.norm(pose.translation) == pytest.approx(2.2)
            assert pose.translation[2] == pytest.approx(2.2 * np.sin(np.deg2rad(30.0)))
            u, v, _ = project_point([0.0, 0.0, 0.0], pose, intr)
            assert (u, v) == pytest.approx((32.0, 32.0))

    def test_random_pose_in_upper_hemisphere(self):
        gen = np.random.default_rng(0)
        for _ in range(50):
            pose = random_hemisphere_pose(gen, radius=2.2)
            assert pose.translation[2] >= 0.0
            assert np.linalg.norm(pose.translation) == pytest.approx(2.2)
