"""Point cloud, transform and neighbor-rank behavior."""

import numpy as np
import pytest

from bpmatch.geometry import (NeighborIndex, PointCloud, RigidTransform,
                              apply_transform, build_index, random_transform,
                              rotation_from_axis_angle)

from conftest import exhaustive_rank_matrix


def cloud_of(*pts) -> PointCloud:
    return PointCloud(np.array(pts, dtype=float))


class TestPointCloud:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            cloud_of((0, 0, 0), (np.nan, 0, 0))
        with pytest.raises(ValueError):
            cloud_of((np.inf, 0, 0))

    def test_points_are_immutable(self):
        cloud = cloud_of((0, 0, 0), (1, 1, 1))
        with pytest.raises(ValueError):
            cloud.points[0, 0] = 5.0

    def test_empty_cloud_allowed_but_not_indexable(self):
        cloud = PointCloud(np.empty((0, 3)))
        assert len(cloud) == 0
        with pytest.raises(ValueError, match="empty cloud"):
            build_index(cloud)


class TestRank:
    def test_collinear_analytic_ranks(self):
        # p1=(0,0,0), p2=(1,0,0), p3=(3,0,0)
        index = build_index(cloud_of((0, 0, 0), (1, 0, 0), (3, 0, 0)))
        assert index.rank(0, 1) == 1
        assert index.rank(0, 2) == 2
        assert index.rank(2, 1) == 1
        assert index.rank(2, 0) == 2

    def test_self_rank_is_an_error(self):
        index = build_index(cloud_of((0, 0, 0), (1, 0, 0)))
        with pytest.raises(ValueError, match="self-rank"):
            index.rank(1, 1)

    def test_out_of_range_is_an_error(self):
        index = build_index(cloud_of((0, 0, 0), (1, 0, 0)))
        with pytest.raises(IndexError):
            index.rank(0, 5)

    def test_single_point_cloud_cannot_answer_queries(self):
        index = build_index(cloud_of((1, 2, 3)))
        with pytest.raises(ValueError):
            index.rank(0, 0)
        with pytest.raises(ValueError):
            index.k_nearest(0, 1)

    def test_rank_matches_exhaustive_oracle_random(self, rng):
        pts = rng.uniform(-1, 1, size=(200, 3))
        index = build_index(PointCloud(pts))
        oracle = exhaustive_rank_matrix(pts)
        for _ in range(50):
            x, y = rng.choice(200, size=2, replace=False)
            assert index.rank(int(x), int(y)) == oracle[x, y]

    def test_rank_matches_oracle_on_large_cloud(self, rng):
        pts = rng.normal(size=(1000, 3))
        index = build_index(PointCloud(pts))
        oracle = exhaustive_rank_matrix(pts)
        for _ in range(100):
            x, y = rng.choice(1000, size=2, replace=False)
            assert index.rank(int(x), int(y)) == oracle[x, y]

    def test_rank_is_a_bijection_onto_1_to_n_minus_1(self, rng):
        pts = rng.uniform(0, 1, size=(40, 3))
        index = build_index(PointCloud(pts))
        for x in range(0, 40, 7):
            ranks = sorted(index.rank(x, y) for y in range(40) if y != x)
            assert ranks == list(range(1, 40))

    def test_rank_is_generally_asymmetric(self):
        # 2 is 1's nearest point, but 2 has a much closer companion at 3.
        index = build_index(cloud_of((0, 0, 0), (1, 0, 0), (1.8, 0, 0),
                                     (1.9, 0, 0)))
        assert index.rank(1, 2) == 1
        assert index.rank(2, 1) == 2

    def test_duplicate_points_tie_break_by_index(self):
        pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [1.0, 0, 0], [1.0, 0, 0],
                        [2.0, 0, 0]])
        index = build_index(PointCloud(pts))
        oracle = exhaustive_rank_matrix(pts)
        for x in range(5):
            for y in range(5):
                if x != y:
                    assert index.rank(x, y) == oracle[x, y], (x, y)


class TestKNearest:
    def test_matches_exhaustive_oracle(self, rng):
        pts = rng.normal(size=(150, 3))
        index = build_index(PointCloud(pts))
        oracle = exhaustive_rank_matrix(pts)
        for x in range(0, 150, 11):
            got = index.k_nearest(x, 10)
            want = [y for y in np.argsort(oracle[x]) if y != x][:10]
            assert list(got) == want

    def test_batch_agrees_with_single_queries(self, rng):
        pts = rng.uniform(size=(60, 3))
        index = build_index(PointCloud(pts))
        batch = index.k_nearest_batch(np.arange(60), 7)
        for x in range(60):
            assert list(batch[x]) == list(index.k_nearest(x, 7))

    def test_duplicates_resolved_by_index(self):
        pts = np.zeros((6, 3))
        pts[5] = (9, 9, 9)
        index = build_index(PointCloud(pts))
        assert list(index.k_nearest(3, 4)) == [0, 1, 2, 4]

    def test_k_too_large_errors(self):
        index = build_index(cloud_of((0, 0, 0), (1, 0, 0)))
        with pytest.raises(ValueError):
            index.k_nearest(0, 2)

    def test_within_radius_matches_brute_force(self, rng):
        pts = rng.uniform(size=(80, 3))
        index = build_index(PointCloud(pts))
        for x in (0, 17, 42):
            got = index.within_radius(x, 0.3)
            d = np.linalg.norm(pts - pts[x], axis=1)
            want = np.sort(np.array([y for y in range(80)
                                     if y != x and d[y] <= 0.3]))
            assert np.array_equal(got, want)


class TestRigidTransform:
    def test_identity_apply(self):
        cloud = cloud_of((1, 2, 3), (4, 5, 6))
        out = apply_transform(RigidTransform.identity(), cloud)
        np.testing.assert_array_equal(out.points, cloud.points)

    def test_pure_translation(self):
        t = RigidTransform(np.eye(3), [1, 2, 3])
        np.testing.assert_allclose(t.apply([[0, 0, 0]]), [[1, 2, 3]])

    def test_rotation_90_degrees_about_z(self):
        t = RigidTransform(rotation_from_axis_angle([0, 0, 1], np.pi / 2),
                           np.zeros(3))
        np.testing.assert_allclose(t.apply([[1, 0, 0]]), [[0, 1, 0]],
                                   atol=1e-12)

    def test_compose_with_identity(self, rng):
        t = random_transform(rng)
        for composed in (t.compose(RigidTransform.identity()),
                         RigidTransform.identity().compose(t)):
            np.testing.assert_allclose(composed.rotation, t.rotation,
                                       atol=1e-15)
            np.testing.assert_allclose(composed.translation, t.translation,
                                       atol=1e-15)

    def test_invert_identity(self):
        inv = RigidTransform.identity().inverse()
        np.testing.assert_array_equal(inv.rotation, np.eye(3))
        np.testing.assert_array_equal(inv.translation, np.zeros(3))

    def test_compose_matches_sequential_application(self, rng):
        a, b = random_transform(rng), random_transform(rng)
        pts = rng.normal(size=(50, 3))
        np.testing.assert_allclose(a.compose(b).apply(pts),
                                   a.apply(b.apply(pts)), atol=1e-12)

    def test_round_trip_error_small(self, rng):
        t = random_transform(rng)
        pts = rng.normal(size=(100, 3))
        back = t.inverse().apply(t.apply(pts))
        assert np.max(np.linalg.norm(back - pts, axis=1)) < 1e-9

    def test_apply_preserves_pairwise_distances(self, rng):
        t = random_transform(rng)
        pts = rng.normal(size=(60, 3))
        before = np.linalg.norm(pts[:, None] - pts[None, :], axis=2)
        mapped = t.apply(pts)
        after = np.linalg.norm(mapped[:, None] - mapped[None, :], axis=2)
        np.testing.assert_allclose(after, before, rtol=1e-9, atol=1e-12)

    def test_rejects_non_orthonormal_rotation(self):
        with pytest.raises(ValueError):
            RigidTransform(np.eye(3) * 1.001, np.zeros(3))

    def test_rejects_reflection(self):
        with pytest.raises(ValueError):
            RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
