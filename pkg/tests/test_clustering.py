"""Tests for online spherical k-means."""

import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from lcoa.clustering import SphericalKMeans, assign_clusters, ema_centroid_update
from lcoa.tensor_ops import l2_normalize_rows
from lcoa.validation import ShapeError


class TestAssignClusters:
    def test_nearest_centroid_wins(self):
        centroids = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
        points = np.array([[0.9, 0.1], [0.1, 0.9], [-1.0, 0.0]], dtype=np.float32)
        points = l2_normalize_rows(points)
        labels = assign_clusters(points, centroids)
        np.testing.assert_array_equal(labels, [0, 1, 1])

    def test_ties_resolve_to_lowest_index(self):
        centroids = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
        labels = assign_clusters(np.array([[1.0, 0.0]], dtype=np.float32), centroids)
        assert labels[0] == 0, "duplicate centroids must prefer the lower index"

    def test_max_dot_equals_min_distance_on_sphere(self):
        """On unit vectors, argmax dot and argmin distance agree."""
        rng = np.random.default_rng(0)
        points = l2_normalize_rows(rng.standard_normal((200, 5)).astype(np.float32))
        centroids = l2_normalize_rows(rng.standard_normal((7, 5)).astype(np.float32))
        by_dot = assign_clusters(points, centroids)
        d2 = ((points[:, None, :].astype(np.float64) - centroids[None].astype(np.float64)) ** 2).sum(-1)
        by_dist = np.argmin(d2, axis=1)
        np.testing.assert_array_equal(by_dot, by_dist)


class TestEmaUpdate:
    def test_hand_traced_single_query(self):
        """decay=0.999, centroid [1,0], one query [0,1], no keys."""
        centroids = np.array([[1.0, 0.0]], dtype=np.float32)
        queries = np.array([[0.0, 1.0]], dtype=np.float32)
        raw = ema_centroid_update(centroids, queries, None, np.array([0]), None, 0.999)
        expected = np.array([[0.999, 0.0005]])
        assert np.max(np.abs(raw.astype(np.float64) - expected)) <= 1e-7

    def test_both_families_contribute_half(self):
        centroids = np.array([[1.0, 0.0]], dtype=np.float32)
        q = np.array([[0.0, 1.0]], dtype=np.float32)
        k = np.array([[0.0, -1.0]], dtype=np.float32)
        raw = ema_centroid_update(centroids, q, k, np.array([0]), np.array([0]), 0.999)
        # the query and key contributions cancel in the second coordinate
        np.testing.assert_allclose(raw, [[0.999, 0.0]], atol=1e-9)

    def test_unassigned_centroid_keeps_decayed_value(self):
        centroids = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
        q = np.array([[1.0, 0.0]], dtype=np.float32)
        raw = ema_centroid_update(centroids, q, None, np.array([0]), None, 0.5)
        np.testing.assert_allclose(raw[1], [0.0, 0.5], atol=1e-9)

    def test_sums_not_means(self):
        """Two identical queries contribute twice the single-query mass."""
        centroids = np.array([[1.0, 0.0]], dtype=np.float32)
        one = ema_centroid_update(
            centroids, np.array([[0.0, 1.0]], dtype=np.float32), None, np.array([0]), None, 0.9
        )
        two = ema_centroid_update(
            centroids,
            np.array([[0.0, 1.0], [0.0, 1.0]], dtype=np.float32),
            None,
            np.array([0, 0]),
            None,
            0.9,
        )
        assert two[0, 1] == pytest.approx(2 * one[0, 1], rel=1e-6)

    def test_bad_labels_rejected(self):
        centroids = np.array([[1.0, 0.0]], dtype=np.float32)
        q = np.array([[0.0, 1.0]], dtype=np.float32)
        with pytest.raises(ShapeError):
            ema_centroid_update(centroids, q, None, np.array([1]), None, 0.999)
        with pytest.raises(ShapeError):
            ema_centroid_update(centroids, q, None, np.array([0, 0]), None, 0.999)
        with pytest.raises(ShapeError):
            ema_centroid_update(centroids, q, None, np.array([0]), None, 1.5)


class TestSphericalKMeans:
    @staticmethod
    def two_blob_data(rng, m=60):
        a = rng.standard_normal((m, 4)).astype(np.float32) * 0.05 + np.array(
            [1, 0, 0, 0], dtype=np.float32
        )
        b = rng.standard_normal((m, 4)).astype(np.float32) * 0.05 + np.array(
            [0, 1, 0, 0], dtype=np.float32
        )
        return np.vstack([a, b])

    def test_fit_returns_self_and_sets_attributes(self):
        rng = np.random.default_rng(1)
        km = SphericalKMeans(n_clusters=4, random_state=0)
        out = km.fit(self.two_blob_data(rng))
        assert out is km
        assert km.cluster_centers_.shape == (4, 4)
        assert km.cluster_centers_.dtype == np.float32
        assert km.assignment_counts_.sum() == 120

    def test_centroids_stay_unit_norm(self):
        rng = np.random.default_rng(2)
        km = SphericalKMeans(n_clusters=3, random_state=0)
        data = self.two_blob_data(rng)
        km.fit(data)
        for _ in range(5):
            km.partial_fit(data, data)
        norms = np.sqrt((km.cluster_centers_.astype(np.float64) ** 2).sum(axis=1))
        assert np.max(np.abs(norms - 1.0)) <= 1e-6

    def test_predict_before_fit_raises(self):
        km = SphericalKMeans(n_clusters=2)
        with pytest.raises(NotFittedError):
            km.predict(np.zeros((3, 4), dtype=np.float32))

    def test_get_params_round_trip(self):
        km = SphericalKMeans(n_clusters=7, decay=0.9, random_state=3)
        params = km.get_params()
        assert params == {"n_clusters": 7, "decay": 0.9, "random_state": 3}
        clone = SphericalKMeans(**params)
        assert clone.get_params() == params

    def test_initialization_is_seeded_and_reproducible(self):
        rng = np.random.default_rng(3)
        data = self.two_blob_data(rng)
        a = SphericalKMeans(n_clusters=5, random_state=11).fit(data)
        b = SphericalKMeans(n_clusters=5, random_state=11).fit(data)
        np.testing.assert_array_equal(a.cluster_centers_, b.cluster_centers_)
        c = SphericalKMeans(n_clusters=5, random_state=12).fit(data)
        assert not np.array_equal(a.cluster_centers_, c.cluster_centers_)

    def test_initialization_samples_distinct_rows(self):
        """Initial centroids are distinct normalized rows of the query batch."""
        rng = np.random.default_rng(4)
        data = rng.standard_normal((30, 3)).astype(np.float32)
        km = SphericalKMeans(n_clusters=30, decay=1.0, random_state=0)
        km.partial_fit(data)
        # decay=1.0 makes the update mass-free, leaving the initialization up
        # to one re-normalization rounding step
        unit = l2_normalize_rows(data).astype(np.float64)
        centers = km.cluster_centers_.astype(np.float64)
        dists = np.sqrt(((centers[:, None, :] - unit[None]) ** 2).sum(-1))
        nearest = dists.min(axis=1)
        assert np.max(nearest) <= 1e-6, "every centroid must be one of the normalized rows"
        sources = dists.argmin(axis=1)
        assert len(set(sources.tolist())) == 30, "sampled rows must be distinct"

    def test_too_few_rows_to_initialize_rejected(self):
        km = SphericalKMeans(n_clusters=10)
        with pytest.raises(ShapeError, match="n_clusters"):
            km.fit(np.zeros((4, 3), dtype=np.float32))

    def test_empty_clusters_left_untouched_bit_exactly(self):
        km = SphericalKMeans(n_clusters=2, decay=0.9, random_state=0)
        data = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
        km.fit(data)
        before = km.cluster_centers_.copy()
        counts_before = km.assignment_counts_.copy()
        # every later point sits on centroid 0's side of the sphere
        near = np.array([[0.99, 0.01], [0.98, 0.02]], dtype=np.float32)
        km.partial_fit(near)
        empty = np.flatnonzero(km.assignment_counts_ == 0)
        assert len(empty) >= 1, f"expected an empty cluster, counts={km.assignment_counts_}"
        for idx in empty:
            np.testing.assert_array_equal(km.cluster_centers_[idx], before[idx])
        assert counts_before.sum() == 2

    def test_inference_does_not_move_centroids(self):
        rng = np.random.default_rng(5)
        data = self.two_blob_data(rng)
        km = SphericalKMeans(n_clusters=3, random_state=0).fit(data)
        frozen = km.cluster_centers_.copy()
        km.predict(rng.standard_normal((40, 4)).astype(np.float32))
        np.testing.assert_array_equal(km.cluster_centers_, frozen)

    def test_max_member_distance_bounds_every_member(self):
        rng = np.random.default_rng(6)
        data = self.two_blob_data(rng)
        km = SphericalKMeans(n_clusters=4, random_state=0).fit(data)
        eps = km.max_member_distance(data)
        unit = l2_normalize_rows(data)
        labels = km.predict(data)
        d = np.sqrt(
            ((unit.astype(np.float64) - km.cluster_centers_[labels].astype(np.float64)) ** 2).sum(1)
        )
        assert np.all(d <= eps + 1e-12)


class TestSphereGeometry:
    def test_norm_dot_identity_on_random_pairs(self):
        """||q - k||^2 equals 2 - 2 q.k for unit rows, within 1e-6."""
        rng = np.random.default_rng(7)
        q = l2_normalize_rows(rng.standard_normal((500, 8)).astype(np.float32))
        k = l2_normalize_rows(rng.standard_normal((500, 8)).astype(np.float32))
        lhs = ((q.astype(np.float64) - k.astype(np.float64)) ** 2).sum(axis=1)
        rhs = 2.0 - 2.0 * (q.astype(np.float64) * k.astype(np.float64)).sum(axis=1)
        assert np.max(np.abs(lhs - rhs)) <= 1e-6

    def test_same_cluster_dot_bound(self):
        """Same-cluster query/key pairs satisfy q.k > 1 - 2 eps^2."""
        rng = np.random.default_rng(8)
        base = TestSphericalKMeans.two_blob_data(rng, m=100)
        km = SphericalKMeans(n_clusters=4, random_state=0).fit(base)
        q = l2_normalize_rows(rng.standard_normal((80, 4)).astype(np.float32) * 0.1 + base[:80])
        k = l2_normalize_rows(rng.standard_normal((80, 4)).astype(np.float32) * 0.1 + base[:80])
        labels_q = km.predict(q)
        labels_k = km.predict(k)
        eps = max(km.max_member_distance(q), km.max_member_distance(k))
        bound = 1.0 - 2.0 * eps * eps
        dots = q.astype(np.float64) @ k.astype(np.float64).T
        same = labels_q[:, None] == labels_k[None, :]
        assert same.any(), "test setup must produce same-cluster pairs"
        violations = int(np.count_nonzero(same & (dots <= bound)))
        assert violations == 0, f"{violations} same-cluster pairs violate the dot bound"
