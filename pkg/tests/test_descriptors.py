"""Stand-in descriptor behavior and descriptor file parsing."""

import io

import numpy as np
import pytest

from bpmatch.descriptors import (STAND_IN_DIM, DescriptorSet, describe_cloud,
                                 load_descriptors, save_descriptors,
                                 stand_in_descriptor)
from bpmatch.fileio import ParseError
from bpmatch.geometry import PointCloud, apply_transform, build_index, \
    random_transform


class TestStandInDescriptor:
    def test_dimension_and_normalization(self, rng):
        cloud = PointCloud(rng.uniform(size=(100, 3)))
        index = build_index(cloud)
        desc = stand_in_descriptor(cloud, index, 0, radius=0.4)
        assert desc.values.shape == (STAND_IN_DIM,)
        assert desc.normalized
        assert abs(np.linalg.norm(desc.values) - 1.0) < 1e-9

    def test_deterministic(self, rng):
        cloud = PointCloud(rng.uniform(size=(80, 3)))
        index = build_index(cloud)
        a = stand_in_descriptor(cloud, index, 5, radius=0.3)
        b = stand_in_descriptor(cloud, index, 5, radius=0.3)
        assert np.array_equal(a.values, b.values)

    def test_rigid_invariance(self, rng):
        cloud = PointCloud(rng.uniform(size=(120, 3)))
        index = build_index(cloud)
        for trial in range(5):
            t = random_transform(rng)
            moved = apply_transform(t, cloud)
            moved_index = build_index(moved)
            point = int(rng.integers(0, len(cloud)))
            before = stand_in_descriptor(cloud, index, point, 0.35)
            after = stand_in_descriptor(moved, moved_index, point, 0.35)
            assert np.linalg.norm(before.values - after.values) < 1e-6

    def test_empty_neighborhood_flags_zero_vector(self):
        pts = np.array([[0.0, 0, 0], [10.0, 0, 0], [0, 10.0, 0], [0, 0, 10.0]])
        index = build_index(PointCloud(pts))
        desc = stand_in_descriptor(PointCloud(pts), index, 0, radius=0.5)
        assert not desc.normalized
        assert np.array_equal(desc.values, np.zeros(STAND_IN_DIM))

    def test_plane_and_corner_patches_are_distinguishable(self, rng):
        # Plane: a flat grid. Corner: three orthogonal half-planes meeting.
        grid = np.stack(np.meshgrid(np.linspace(-1, 1, 9),
                                    np.linspace(-1, 1, 9)), axis=-1).reshape(-1, 2)
        plane = np.column_stack([grid, np.zeros(len(grid))])
        half = grid[(grid[:, 0] >= 0) & (grid[:, 1] >= 0)]
        corner = np.vstack([
            np.column_stack([half, np.zeros(len(half))]),
            np.column_stack([half[:, 0], np.zeros(len(half)), half[:, 1]]),
            np.column_stack([np.zeros(len(half)), half]),
        ])
        plane_cloud = PointCloud(plane)
        corner_cloud = PointCloud(corner)
        d_plane = stand_in_descriptor(plane_cloud, build_index(plane_cloud),
                                      int(np.argmin(np.linalg.norm(plane, axis=1))),
                                      radius=1.0)
        d_corner = stand_in_descriptor(corner_cloud, build_index(corner_cloud),
                                       int(np.argmin(np.linalg.norm(corner, axis=1))),
                                       radius=1.0)
        assert np.linalg.norm(d_plane.values - d_corner.values) > 0.1

    def test_invalid_radius(self, rng):
        cloud = PointCloud(rng.uniform(size=(10, 3)))
        index = build_index(cloud)
        with pytest.raises(ValueError):
            stand_in_descriptor(cloud, index, 0, radius=0.0)

    def test_describe_cloud_covers_every_point(self, rng):
        cloud = PointCloud(rng.uniform(size=(30, 3)))
        descs = describe_cloud(cloud, radius=0.4)
        assert len(descs) == 30
        assert descs.dim == STAND_IN_DIM


class TestDescriptorFiles:
    def test_empty_file_is_empty_set(self):
        descs = load_descriptors(io.StringIO(""))
        assert len(descs) == 0

    def test_three_rows_of_dim_four(self):
        text = "0 1 0 0 0\n1 0 1 0 0\n2 0 0 1 0\n"
        descs = load_descriptors(io.StringIO(text))
        assert len(descs) == 3
        assert descs.dim == 4

    def test_rows_may_be_out_of_order(self):
        text = "2 9 9\n0 1 1\n1 2 2\n"
        descs = load_descriptors(io.StringIO(text))
        np.testing.assert_array_equal(descs.vectors[2], [9, 9])

    def test_dimension_mismatch_names_row(self):
        text = "0 1 0 0 0\n1 0 1 0 0 9\n"
        with pytest.raises(ParseError, match="row 2"):
            load_descriptors(io.StringIO(text))

    def test_negative_index_rejected(self):
        with pytest.raises(ParseError, match="negative"):
            load_descriptors(io.StringIO("-1 1 2\n"))

    def test_duplicate_index_rejected(self):
        with pytest.raises(ParseError, match="duplicate"):
            load_descriptors(io.StringIO("0 1 2\n0 3 4\n"))

    def test_gap_in_indices_rejected(self):
        with pytest.raises(ParseError, match="missing"):
            load_descriptors(io.StringIO("0 1 2\n2 3 4\n"))

    def test_round_trip(self, rng, tmp_path):
        descs = DescriptorSet(rng.normal(size=(7, 5)))
        path = tmp_path / "descs.txt"
        save_descriptors(descs, path)
        again = load_descriptors(path)
        np.testing.assert_array_equal(again.vectors, descs.vectors)
