import numpy as np
import pytest

from turnscan import errors
from turnscan.cloud import (
    Aabb,
    KdIndex,
    crop,
    estimate_normals,
    fuse,
    remove_statistical_outliers,
    voxel_downsample,
)
from turnscan.geometry import PointCloud, RigidTransform, axis_angle, transform_points


def grid_cloud(n=5, spacing=1.0):
    axes = np.arange(n) * spacing
    x, y, z = np.meshgrid(axes, axes, axes, indexing="ij")
    return PointCloud(np.column_stack([x.ravel(), y.ravel(), z.ravel()]))


# ------------------------------------------------------------------- Aabb


def test_aabb_rejects_inverted_bounds():
    with pytest.raises(errors.ValidationError):
        Aabb([0, 0, 0], [-1, 1, 1])


# ---------------------------------------------------------------- KdIndex


def test_kdindex_returns_sorted_distinct_neighbors():
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 10, size=(200, 3))
    index = KdIndex(pts)
    dist, idx = index.query(pts[17], 10)
    assert len(np.unique(idx)) == 10
    assert np.all(np.diff(dist) >= 0)
    # brute force oracle
    d_all = np.linalg.norm(pts - pts[17], axis=1)
    expected = np.argsort(d_all)[:10]
    assert set(idx) == set(expected)


def test_kdindex_caps_k_at_point_count():
    index = KdIndex(np.zeros((3, 3)) + np.arange(3)[:, None])
    dist, idx = index.query(np.zeros(3), 10)
    assert len(idx) == 3


def test_kdindex_tie_break_by_index():
    # four points equidistant from the origin
    pts = np.array(
        [[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [0, -1.0, 0], [5.0, 5.0, 5.0]]
    )
    _, idx = KdIndex(pts).query(np.zeros(3), 4)
    assert list(idx) == [0, 1, 2, 3]


# ------------------------------------------------------------------- crop


def test_crop_keeps_everything_with_containing_box():
    cloud = grid_cloud(4)
    out = crop(cloud, Aabb([-1, -1, -1], [10, 10, 10]))
    np.testing.assert_array_equal(out.positions, cloud.positions)


def test_crop_excludes_everything_with_disjoint_box():
    cloud = grid_cloud(4)
    assert len(crop(cloud, Aabb([100, 100, 100], [200, 200, 200]))) == 0


def test_crop_unit_box_predicate():
    cloud = PointCloud(np.array([[0.5, 0.5, 0.5], [2.0, 2.0, 2.0]]))
    out = crop(cloud, Aabb([0, 0, 0], [1, 1, 1]))
    np.testing.assert_array_equal(out.positions, [[0.5, 0.5, 0.5]])


def test_crop_idempotent():
    rng = np.random.default_rng(2)
    cloud = PointCloud(rng.uniform(-5, 5, size=(500, 3)))
    box = Aabb([-2, -2, -2], [2, 2, 2])
    once = crop(cloud, box)
    twice = crop(once, box)
    np.testing.assert_array_equal(once.positions, twice.positions)


def test_crop_keeps_attributes_aligned():
    pos = np.array([[0.0, 0, 0], [5.0, 0, 0]])
    cloud = PointCloud(
        pos, colors=np.array([[1.0, 0, 0], [0, 1.0, 0]]),
        normals=np.array([[0.0, 0, 1], [0.0, 1, 0]]),
    )
    out = crop(cloud, Aabb([-1, -1, -1], [1, 1, 1]))
    np.testing.assert_array_equal(out.colors, [[1.0, 0, 0]])
    np.testing.assert_array_equal(out.normals, [[0.0, 0, 1]])


# ------------------------------------------------- statistical outliers


def test_outlier_removal_keeps_uniform_grid():
    cloud = grid_cloud(5)
    out, removed = remove_statistical_outliers(cloud, k=4, std_ratio=2.0)
    assert len(removed) == 0
    assert len(out) == len(cloud)


def test_outlier_removal_drops_lone_far_point():
    cloud = grid_cloud(5)
    positions = np.vstack([cloud.positions, [[500.0, 500.0, 500.0]]])
    out, removed = remove_statistical_outliers(PointCloud(positions), 4, 2.0)
    assert list(removed) == [len(positions) - 1]
    assert len(out) == len(positions) - 1


def test_outlier_removal_needs_enough_points():
    with pytest.raises(errors.TooFewPoints):
        remove_statistical_outliers(PointCloud(np.zeros((3, 3))), k=3, std_ratio=2.0)


# ------------------------------------------------------- estimate normals


def test_normals_on_plane_point_up():
    rng = np.random.default_rng(4)
    xy = rng.uniform(-10, 10, size=(300, 2))
    cloud = PointCloud(np.column_stack([xy, np.zeros(300)]))
    out = estimate_normals(cloud, k=8, viewpoint=[0, 0, 100])
    np.testing.assert_allclose(out.normals, np.tile([0.0, 0.0, 1.0], (300, 1)), atol=1e-6)


def test_normals_on_sphere_are_radial():
    rng = np.random.default_rng(8)
    dirs = rng.normal(size=(10000, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    cloud = PointCloud(50.0 * dirs)
    out = estimate_normals(cloud, k=20, viewpoint=[0.0, 0.0, 0.0])
    # oriented toward the center, so compare with -radial
    cos = np.einsum("ij,ij->i", out.normals, -dirs)
    angles = np.degrees(np.arccos(np.clip(cos, -1, 1)))
    assert np.percentile(angles, 99) < 5.0


def test_normals_unit_and_toward_viewpoint():
    rng = np.random.default_rng(12)
    cloud = PointCloud(rng.uniform(-20, 20, size=(400, 3)))
    viewpoint = np.array([0.0, 0.0, 200.0])
    out = estimate_normals(cloud, k=6, viewpoint=viewpoint)
    np.testing.assert_allclose(np.linalg.norm(out.normals, axis=1), 1.0, atol=1e-9)
    dots = np.einsum("ij,ij->i", out.normals, viewpoint - cloud.positions)
    assert np.all(dots >= 0)


def test_normals_need_enough_points():
    with pytest.raises(errors.TooFewPoints):
        estimate_normals(PointCloud(np.zeros((4, 3))), k=4, viewpoint=[0, 0, 1])


# ------------------------------------------------------------------- fuse


def test_fuse_single_identity_scene():
    cloud = grid_cloud(3)
    out = fuse([(cloud, RigidTransform.identity())])
    np.testing.assert_array_equal(out.positions, cloud.positions)


def test_fuse_two_single_points():
    a = PointCloud(np.array([[1.0, 0, 0]]))
    b = PointCloud(np.array([[0.0, 2.0, 0]]))
    shift = RigidTransform(np.eye(3), [0, 0, 10.0])
    out = fuse([(a, RigidTransform.identity()), (b, shift)])
    np.testing.assert_allclose(out.positions, [[1, 0, 0], [0, 2, 10]])


def test_fuse_empty_scene_list():
    with pytest.raises(errors.EmptyInput):
        fuse([])


def test_fuse_equivariance():
    rng = np.random.default_rng(3)
    clouds = [PointCloud(rng.uniform(-10, 10, size=(30, 3))) for _ in range(3)]
    poses = [
        RigidTransform(axis_angle(rng.normal(size=3), rng.uniform(0, 3)), rng.normal(size=3))
        for _ in range(3)
    ]
    g = RigidTransform(axis_angle([1, 2, 3], 0.7), [4.0, -5.0, 6.0])
    from turnscan.geometry import compose

    fused_then_moved = transform_points(g, fuse(list(zip(clouds, poses))))
    moved_then_fused = fuse([(c, compose(g, p)) for c, p in zip(clouds, poses)])
    np.testing.assert_allclose(
        fused_then_moved.positions, moved_then_fused.positions, atol=1e-9
    )


# ------------------------------------------------------- voxel downsample


def test_voxel_downsample_no_merge_when_voxel_small():
    cloud = grid_cloud(4, spacing=2.0)
    out = voxel_downsample(cloud, 0.5)
    assert len(out) == len(cloud)


def test_voxel_downsample_two_points_one_voxel():
    cloud = PointCloud(np.array([[0.1, 0.1, 0.1], [0.3, 0.3, 0.3]]))
    out = voxel_downsample(cloud, 1.0)
    np.testing.assert_allclose(out.positions, [[0.2, 0.2, 0.2]])


def test_voxel_downsample_members_stay_in_voxel():
    rng = np.random.default_rng(77)
    pts = rng.uniform(0, 10, size=(10000, 3))
    cloud = PointCloud(pts)
    voxel = 1.0
    out = voxel_downsample(cloud, voxel)
    lo = pts.min(axis=0)
    cells = np.floor((out.positions - lo) / voxel)
    frac = (out.positions - lo) / voxel - cells
    assert np.all(frac >= -1e-9) and np.all(frac <= 1 + 1e-9)


def test_voxel_downsample_rejects_bad_voxel():
    with pytest.raises(errors.NonPositiveVoxel):
        voxel_downsample(grid_cloud(2), 0.0)


def test_voxel_downsample_averages_attributes():
    cloud = PointCloud(
        np.array([[0.0, 0, 0], [0.2, 0, 0]]),
        colors=np.array([[0.0, 0, 0], [1.0, 1, 1]]),
        normals=np.array([[1.0, 0, 0], [0.0, 1, 0]]),
    )
    out = voxel_downsample(cloud, 1.0)
    np.testing.assert_allclose(out.colors, [[0.5, 0.5, 0.5]])
    np.testing.assert_allclose(out.normals, [[np.sqrt(0.5), np.sqrt(0.5), 0]])
