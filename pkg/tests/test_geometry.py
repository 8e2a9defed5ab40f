"""Point-set and mesh algorithms: FPS, kNN, PDS, HPR, noise, resampling, IO."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.spatial import cKDTree

from helpers import (box_mesh, fps_replay_oracle, knn_sort_oracle, save_off,
                     square_mesh, uv_sphere)

from duinnet.geometry import (GeometryError, HPRConfig, PointCloud, TriMesh,
                              add_gaussian_noise, fps, hidden_point_removal, knn,
                              load_cloud_ply, load_off, load_ply, normalize_points,
                              poisson_disk_sample, resample_to, sample_on_mesh,
                              save_cloud_ply)


def _min_pairwise_dist(pts: np.ndarray) -> float:
    d, _ = cKDTree(pts).query(pts, k=2)
    return float(d[:, 1].min())


def _sphere_points(n: int, radius: float, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True) * radius


# -- fps ---------------------------------------------------------------------------


def test_fps_square_diagonal():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=np.float64)
    idx = fps(pts, 2, seed_rule="first_index")
    assert list(idx) == [0, 3]


def test_fps_exhaustion_returns_all_indices():
    pts = np.random.default_rng(0).standard_normal((17, 3))
    idx = fps(pts, 17)
    assert sorted(idx) == list(range(17))


def test_fps_m_out_of_range():
    pts = np.zeros((4, 3))
    with pytest.raises(ValueError):
        fps(pts, 5)
    with pytest.raises(ValueError):
        fps(pts, 0)


def test_fps_unknown_seed_rule():
    with pytest.raises(ValueError):
        fps(np.zeros((4, 3)), 2, seed_rule="bogus")


def test_fps_greedy_replay_oracle():
    rng = np.random.default_rng(1)
    for _ in range(10):
        pts = rng.standard_normal((64, 3))
        m = int(rng.integers(2, 32))
        got = fps(pts, m, seed_rule="first_index")
        expect = fps_replay_oracle(pts, m, seed=0)
        np.testing.assert_array_equal(got, expect)


def test_fps_centroid_seed_permutation_invariant():
    rng = np.random.default_rng(2)
    pts = rng.standard_normal((48, 3))
    base = set(map(tuple, pts[fps(pts, 12, seed_rule="farthest_from_centroid")]))
    for _ in range(10):
        perm = rng.permutation(48)
        sel = set(map(tuple, pts[perm][fps(pts[perm], 12, seed_rule="farthest_from_centroid")]))
        assert sel == base


# -- knn ---------------------------------------------------------------------------


def test_knn_query_on_cloud_point():
    pts = np.random.default_rng(3).standard_normal((20, 3))
    idx = knn(pts, pts[7], 1)
    assert idx[0, 0] == 7


def test_knn_collinear_points():
    pts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], dtype=np.float64)
    idx = knn(pts, pts[0], 2)
    assert list(idx[0]) == [0, 1]


def test_knn_k_too_large():
    with pytest.raises(ValueError):
        knn(np.zeros((3, 3)), np.zeros(3), 4)


def test_knn_full_sort_oracle():
    rng = np.random.default_rng(4)
    pts = rng.standard_normal((128, 3))
    queries = rng.standard_normal((16, 3))
    np.testing.assert_array_equal(knn(pts, queries, 9), knn_sort_oracle(pts, queries, 9))


def test_knn_self_index_property():
    pts = np.random.default_rng(5).standard_normal((40, 3))
    idx = knn(pts, pts, 1)
    np.testing.assert_array_equal(idx[:, 0], np.arange(40))


# -- poisson disk sampling -------------------------------------------------------


def test_pds_single_point_on_surface():
    mesh = square_mesh()
    pc = poisson_disk_sample(mesh, 1, seed=0)
    p = pc.points[0]
    assert abs(p[2]) < 1e-12 and 0 <= p[0] <= 1 and 0 <= p[1] <= 1


def test_pds_square_separation_bound():
    pc = poisson_disk_sample(square_mesh(), 100, seed=0)
    assert len(pc) == 100
    bound = 0.8 * np.sqrt(1.0 / (2 * np.sqrt(3.0) * 100))
    assert _min_pairwise_dist(pc.points) >= bound


def test_pds_sphere_radii_and_blue_noise():
    """On a triangulated sphere, samples sit on the facets (slightly inside the
    true radius) and spread far better than uniform sampling."""
    mesh = uv_sphere(12, 24)
    pc = poisson_disk_sample(mesh, 256, seed=0)
    assert len(pc) == 256
    radii = np.linalg.norm(pc.points, axis=1)
    assert radii.max() <= 1 + 1e-9
    assert radii.min() >= 0.97  # facet sag of the 12x24 tessellation
    pds_sep = _min_pairwise_dist(pc.points)
    uniform_seps = []
    for s in range(20):
        up, _, _ = sample_on_mesh(mesh, 256, np.random.default_rng(s))
        uniform_seps.append(_min_pairwise_dist(up))
    assert pds_sep > np.percentile(uniform_seps, 5)


def test_pds_points_lie_on_triangles():
    mesh = box_mesh()
    pc = poisson_disk_sample(mesh, 64, seed=1)
    tri = mesh.vertices[mesh.faces]
    for p in pc.points:
        # barycentric residual against the best-matching face
        best = np.inf
        for a, b, c in tri:
            n = np.cross(b - a, c - a)
            n = n / np.linalg.norm(n)
            best = min(best, abs(np.dot(p - a, n)))
        assert best < 1e-6


def test_pds_degenerate_mesh_error():
    flat = TriMesh(np.zeros((3, 3)), np.array([[0, 1, 2]]))
    with pytest.raises(GeometryError):
        poisson_disk_sample(flat, 4)


# -- hidden point removal ----------------------------------------------------------


def test_hpr_single_point_visible():
    res = hidden_point_removal(PointCloud(np.array([[0.0, 0.0, 0.0]])), (0, 0, 3))
    assert list(res.indices) == [0]


def test_hpr_sphere_front_facing_oracle():
    pts = _sphere_points(500, radius=0.5)
    res = hidden_point_removal(PointCloud(pts), (0, 0, 3), HPRConfig(2.0))
    visible = np.zeros(500, dtype=bool)
    visible[res.indices] = True
    front = pts[:, 2] > 0  # dot(p - center, view direction)
    iou = (visible & front).sum() / (visible | front).sum()
    assert iou >= 0.9


def test_hpr_occluded_cluster_stays_hidden():
    rng = np.random.default_rng(1)
    near = np.column_stack([rng.uniform(-0.3, 0.3, (60, 2)), np.full(60, 0.5)])
    near = near[near[:, 0] ** 2 + near[:, 1] ** 2 <= 0.09]
    far = np.column_stack([rng.uniform(-0.1, 0.1, (60, 2)), np.full(60, -0.5)])
    far = far[far[:, 0] ** 2 + far[:, 1] ** 2 <= 0.01]
    res = hidden_point_removal(PointCloud(np.vstack([near, far])), (0, 0, 3))
    far_visible = (res.indices >= len(near)).sum()
    assert far_visible <= 0.1 * len(res.indices)


def test_hpr_visible_set_grows_with_radius():
    pts = _sphere_points(500, radius=0.5)
    cloud = PointCloud(pts)
    prev: set[int] = set()
    for gamma in (1.0, 2.0, 3.0):
        cur = set(hidden_point_removal(cloud, (0, 0, 3), HPRConfig(gamma)).indices.tolist())
        assert prev <= cur
        prev = cur


def test_hpr_output_is_index_subset():
    pts = np.random.default_rng(2).uniform(-0.5, 0.5, (100, 3))
    res = hidden_point_removal(PointCloud(pts), (0, 0, 4))
    assert len(set(res.indices)) == len(res.indices)
    assert res.indices.min() >= 0 and res.indices.max() < 100


def test_hpr_viewpoint_inside_bounding_sphere():
    pts = _sphere_points(50, radius=1.0)
    with pytest.raises(GeometryError):
        hidden_point_removal(PointCloud(pts), (0, 0, 0.5))


def test_hpr_collinear_input_jitters_and_reports():
    pts = np.column_stack([np.linspace(-0.4, 0.4, 30), np.zeros(30), np.zeros(30)])
    res = hidden_point_removal(PointCloud(pts), (0, 0, 3))
    assert res.jittered
    assert len(res.indices) >= 1


# -- noise / resampling ------------------------------------------------------------


def test_noise_sigma_zero_is_identity():
    pts = np.random.default_rng(6).standard_normal((30, 3))
    out = add_gaussian_noise(PointCloud(pts), 0.0, seed=1)
    np.testing.assert_array_equal(out.points, pts)
    assert out.noisy


def test_noise_std_matches_bbox_scale():
    pts = np.random.default_rng(7).uniform(0, 1, (2048, 3))
    diag = np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))
    out = add_gaussian_noise(PointCloud(pts), 0.01, seed=2)
    delta = out.points - pts
    for ax in range(3):
        assert abs(delta[:, ax].std() - 0.01 * diag) < 0.1 * 0.01 * diag


def test_noise_deterministic_under_seed():
    pts = np.random.default_rng(8).standard_normal((100, 3))
    a = add_gaussian_noise(PointCloud(pts), 0.05, seed=3).points
    b = add_gaussian_noise(PointCloud(pts), 0.05, seed=3).points
    assert np.array_equal(a, b)


def test_resample_identity_size():
    pts = np.random.default_rng(9).standard_normal((64, 3))
    out = resample_to(PointCloud(pts), 64)
    np.testing.assert_array_equal(out.points, pts)


def test_resample_upsample_duplicates_only():
    pts = np.random.default_rng(10).standard_normal((100, 3))
    out = resample_to(PointCloud(pts), 2048)
    assert len(out) == 2048
    source = set(map(tuple, pts))
    assert all(tuple(p) in source for p in out.points)


def test_resample_downsample_is_fps():
    pts = np.random.default_rng(11).standard_normal((96, 3))
    out = resample_to(PointCloud(pts), 24)
    expect = pts[fps_replay_oracle(pts, 24, seed=0)]
    np.testing.assert_array_equal(out.points, expect)


def test_resample_rejects_nonpositive():
    with pytest.raises(ValueError):
        resample_to(PointCloud(np.zeros((3, 3)) + np.eye(3)), 0)


def test_normalize_points_invariants():
    pts = np.random.default_rng(12).uniform(-3, 9, (200, 3)) * np.array([2.0, 1.0, 0.5])
    out = normalize_points(pts)
    assert np.abs(out.mean(axis=0)).max() < 1e-6
    extent = out.max(axis=0) - out.min(axis=0)
    assert abs(extent.max() - 1.0) < 1e-9


# -- mesh / cloud IO ---------------------------------------------------------------


def test_off_roundtrip(tmp_path):
    mesh = box_mesh()
    path = tmp_path / "box.off"
    save_off(path, mesh)
    loaded = load_off(path)
    np.testing.assert_allclose(loaded.vertices, mesh.vertices)
    assert len(loaded.faces) == len(mesh.faces)


def test_off_glued_header(tmp_path):
    path = tmp_path / "glued.off"
    path.write_text("OFF4 1 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n")
    mesh = load_off(path)
    assert len(mesh.vertices) == 4 and len(mesh.faces) == 1


def test_off_quad_fan_triangulation(tmp_path):
    path = tmp_path / "quad.off"
    path.write_text("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
    mesh = load_off(path)
    assert len(mesh.faces) == 2


def test_off_rejects_missing_header(tmp_path):
    path = tmp_path / "bad.off"
    path.write_text("3 0 0\n0 0 0\n1 0 0\n0 1 0\n")
    with pytest.raises(GeometryError):
        load_off(path)


def test_ply_mesh_parse(tmp_path):
    path = tmp_path / "tri.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 3\n"
        "property float x\nproperty float y\nproperty float z\n"
        "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
        "0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
    mesh = load_ply(path)
    assert len(mesh.vertices) == 3 and len(mesh.faces) == 1


def test_cloud_ply_roundtrip(tmp_path):
    pts = np.random.default_rng(13).standard_normal((50, 3))
    path = tmp_path / "cloud.ply"
    save_cloud_ply(path, PointCloud(pts))
    loaded = load_cloud_ply(path)
    assert len(loaded) == 50
    np.testing.assert_allclose(loaded.points, pts, atol=1e-6)  # float32 emission


def test_mesh_normalized_invariants():
    mesh = TriMesh(np.random.default_rng(14).uniform(-5, 5, (20, 3)) * 3,
                   np.array([[0, 1, 2], [3, 4, 5]]))
    norm = mesh.normalized()
    extent = norm.vertices.max(axis=0) - norm.vertices.min(axis=0)
    assert abs(extent.max() - 1.0) < 1e-12
    assert np.abs(norm.vertices.mean(axis=0)).max() < 1e-12


def test_point_cloud_validation():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        PointCloud(np.array([[np.inf, 0, 0]]))
