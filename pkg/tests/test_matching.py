"""Putative matching and observation likelihoods."""

import math

import numpy as np
import pytest

from bpmatch.descriptors import DescriptorSet
from bpmatch.matching import (Correspondence, ObservationMessage,
                              mutual_best_match, observation_from_distance,
                              ratio_test_match, uniform_observation)

from conftest import brute_force_mutual_matches


def descset(rows) -> DescriptorSet:
    return DescriptorSet(np.asarray(rows, dtype=float))


class TestMutualBestMatch:
    def test_identity_basis_sets(self):
        basis = descset([[1, 0], [0, 1]])
        matches = mutual_best_match(basis, basis)
        assert [(m.p, m.q) for m in matches] == [(0, 0), (1, 1)]
        assert all(m.descriptor_distance == 0.0 for m in matches)

    def test_single_query_against_two(self):
        a = descset([[0.0]])
        b = descset([[1.0], [2.0]])
        matches = mutual_best_match(a, b)
        assert [(m.p, m.q) for m in matches] == [(0, 0)]
        assert matches[0].descriptor_distance == 1.0

    def test_matches_brute_force_oracle(self, rng):
        a = rng.normal(size=(300, 32))
        b = rng.normal(size=(300, 32))
        got = mutual_best_match(descset(a), descset(b))
        want = brute_force_mutual_matches(a, b)
        assert [(m.p, m.q) for m in got] == [(p, q) for p, q, _ in want]
        np.testing.assert_allclose([m.descriptor_distance for m in got],
                                   [d for _, _, d in want], rtol=1e-12)

    def test_symmetric_under_swapping_sets(self, rng):
        a = rng.normal(size=(60, 8))
        b = rng.normal(size=(45, 8))
        fwd = {(m.p, m.q) for m in mutual_best_match(descset(a), descset(b))}
        bwd = {(m.q, m.p) for m in mutual_best_match(descset(b), descset(a))}
        assert fwd == bwd

    def test_no_index_repeats_and_sorted(self, rng):
        a = rng.normal(size=(80, 4))
        b = rng.normal(size=(70, 4))
        matches = mutual_best_match(descset(a), descset(b))
        ps = [m.p for m in matches]
        qs = [m.q for m in matches]
        assert len(set(ps)) == len(ps)
        assert len(set(qs)) == len(qs)
        assert sorted(zip(ps, qs)) == list(zip(ps, qs))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            mutual_best_match(descset([[1, 2]]), descset([[1, 2, 3]]))

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            mutual_best_match(DescriptorSet(np.empty((0, 0))),
                              descset([[1.0]]))


class TestRatioTestMatch:
    def test_unique_near_match_kept(self):
        a = descset([[0.0]])
        b = descset([[0.1], [100.0]])
        matches = ratio_test_match(a, b, ratio=0.8)
        assert [(m.p, m.q) for m in matches] == [(0, 0)]

    def test_exact_ratio_boundary_rejected(self):
        # d1/d2 = 0.5 exactly; the test is strict.
        a = descset([[0.0]])
        b = descset([[1.0], [2.0]])
        assert ratio_test_match(a, b, ratio=0.5) == []
        assert len(ratio_test_match(a, b, ratio=0.5000001)) == 1

    def test_matches_brute_force_oracle(self, rng):
        a = rng.normal(size=(120, 16))
        b = rng.normal(size=(90, 16))
        ratio = 0.9
        got = ratio_test_match(descset(a), descset(b), ratio)
        want = []
        for i, row in enumerate(a):
            d = sorted((float(np.linalg.norm(row - t)), j)
                       for j, t in enumerate(b))
            if d[0][0] < ratio * d[1][0]:
                want.append((i, d[0][1], d[0][0]))
        assert [(m.p, m.q) for m in got] == [(p, q) for p, q, _ in want]

    def test_needs_two_targets(self):
        with pytest.raises(ValueError):
            ratio_test_match(descset([[1.0]]), descset([[1.0]]), 0.8)

    def test_ratio_range_validated(self):
        a, b = descset([[0.0]]), descset([[1.0], [2.0]])
        for bad in (0.0, 1.0, -0.5, 2.0):
            with pytest.raises(ValueError):
                ratio_test_match(a, b, bad)


class TestObservationFromDistance:
    def test_zero_distance(self):
        obs = observation_from_distance(Correspondence(0, 0, 0.0), scale=1.0)
        assert obs.outlier == pytest.approx(0.25, abs=1e-12)
        assert obs.inlier == pytest.approx(0.75, abs=1e-12)

    def test_far_distance_approaches_limit(self):
        obs = observation_from_distance(Correspondence(0, 0, 10.0), scale=1.0)
        assert abs(obs.outlier - 0.75) < 1e-6
        assert abs(obs.inlier - 0.25) < 1e-6

    def test_monotone_decreasing_in_distance(self):
        dists = np.linspace(0, 5, 40)
        inliers = [observation_from_distance(Correspondence(0, 0, d), 0.7).inlier
                   for d in dists]
        assert all(a > b for a, b in zip(inliers, inliers[1:]))

    def test_components_sum_to_one_and_stay_in_band(self, rng):
        for _ in range(100):
            d = float(rng.uniform(0, 20))
            s = float(rng.uniform(0.01, 5))
            obs = observation_from_distance(Correspondence(0, 0, d), s)
            assert math.isclose(obs.outlier + obs.inlier, 1.0, abs_tol=1e-12)
            assert 0.25 <= obs.inlier <= 0.75

    def test_uniform_mode_ignores_distance(self):
        assert uniform_observation() == ObservationMessage(0.5, 0.5)

    def test_scale_must_be_positive(self):
        with pytest.raises(ValueError):
            observation_from_distance(Correspondence(0, 0, 1.0), 0.0)


class TestTypes:
    def test_correspondence_validation(self):
        with pytest.raises(ValueError):
            Correspondence(-1, 0, 0.0)
        with pytest.raises(ValueError):
            Correspondence(0, 0, -2.0)

    def test_observation_message_validation(self):
        with pytest.raises(ValueError):
            ObservationMessage(0.7, 0.7)
        with pytest.raises(ValueError):
            ObservationMessage(-0.1, 1.1)
