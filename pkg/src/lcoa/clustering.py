"""Online spherical k-means over attention projections.

Queries and keys are L2-normalized onto the unit sphere and assigned to the
centroid with the largest dot product.  Centroids track their members with an
exponential moving average in which the query family and the key family each
contribute half of the new mass:

    u  <-  decay * u  +  (1 - decay) / 2 * (sum of assigned queries)
                      +  (1 - decay) / 2 * (sum of assigned keys)

after which centroids are re-normalized onto the sphere.  One such round runs
per plan construction in calibrate mode.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .tensor_ops import l2_normalize_rows, matmul
from .validation import ShapeError, check_matrix


def assign_clusters(points, centroids) -> np.ndarray:
    """Label each unit-norm row of ``points`` with its nearest centroid.

    Nearness is the largest dot product (equivalently the smallest Euclidean
    distance on the sphere).  Ties resolve to the lowest centroid index.
    """
    points = check_matrix(points, "points")
    centroids = check_matrix(centroids, "centroids", cols=points.shape[1])
    sims = matmul(points, centroids.T)
    return np.argmax(sims, axis=1).astype(np.int64)


def ema_centroid_update(centroids, queries, keys, labels_q, labels_k, decay) -> np.ndarray:
    """One raw EMA round, before re-normalization.

    Returns ``decay * centroids + (1 - decay)/2 * per-centroid query sums
    + (1 - decay)/2 * per-centroid key sums`` accumulated in float64 and
    rounded to float32.  Centroids with no assigned members keep exactly
    ``decay * centroids``.  ``keys`` may be empty (zero rows contribute).
    """
    centroids = check_matrix(centroids, "centroids")
    k, d = centroids.shape
    if not 0.0 <= decay <= 1.0:
        raise ShapeError(f"decay must lie in [0, 1], got {decay}")

    def family_sums(points, labels, name):
        sums = np.zeros((k, d), dtype=np.float64)
        if points is None or len(points) == 0:
            return sums
        points = check_matrix(points, name, cols=d)
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (points.shape[0],):
            raise ShapeError(f"labels for {name} must have one entry per row")
        if labels.size and (labels.min() < 0 or labels.max() >= k):
            raise ShapeError(f"labels for {name} out of range for {k} centroids")
        np.add.at(sums, labels, points.astype(np.float64))
        return sums

    q_sums = family_sums(queries, labels_q, "queries")
    k_sums = family_sums(keys, labels_k, "keys")
    half = (1.0 - decay) / 2.0
    new = decay * centroids.astype(np.float64) + half * q_sums + half * k_sums
    return new.astype(np.float32)


class SphericalKMeans(BaseEstimator):
    """Online spherical k-means estimator for query/key projections.

    Parameters
    ----------
    n_clusters : int, default=128
        Number of centroids.
    decay : float, default=0.999
        EMA decay applied on every update round.
    random_state : int or None, default=None
        Seed for centroid initialization (sampling distinct rows of the
        first normalized query batch).

    Attributes
    ----------
    cluster_centers_ : ndarray of shape (n_clusters, n_features)
        Unit-norm centroids.
    assignment_counts_ : ndarray of shape (n_clusters,)
        Members (queries plus keys) per centroid in the most recent round.
        Zero entries expose empty clusters; they are left untouched by
        updates rather than reseeded.
    """

    def __init__(self, n_clusters: int = 128, decay: float = 0.999, random_state=None):
        self.n_clusters = n_clusters
        self.decay = decay
        self.random_state = random_state

    def _is_fitted(self) -> bool:
        return hasattr(self, "cluster_centers_")

    def _check_fitted(self) -> None:
        if not self._is_fitted():
            raise NotFittedError(
                "This SphericalKMeans instance is not fitted yet; call fit or "
                "partial_fit, or set cluster_centers_ from a weight bundle."
            )

    def _init_centers(self, queries_unit: np.ndarray) -> None:
        m = queries_unit.shape[0]
        if m < self.n_clusters:
            raise ShapeError(
                f"need at least n_clusters={self.n_clusters} query rows to "
                f"initialize, got {m}"
            )
        rng = np.random.default_rng(self.random_state)
        chosen = rng.choice(m, size=self.n_clusters, replace=False)
        self.cluster_centers_ = queries_unit[np.sort(chosen)].copy()
        self.assignment_counts_ = np.zeros(self.n_clusters, dtype=np.int64)

    def fit(self, queries, keys=None):
        """Initialize centroids from ``queries`` and run one update round."""
        if self._is_fitted():
            del self.cluster_centers_, self.assignment_counts_
        return self.partial_fit(queries, keys)

    def partial_fit(self, queries, keys=None):
        """Run one assignment + EMA round (initializing on the first call)."""
        queries = check_matrix(queries, "queries")
        q_unit = l2_normalize_rows(queries)
        if keys is not None and len(keys):
            keys = check_matrix(keys, "keys", cols=queries.shape[1])
            k_unit = l2_normalize_rows(keys)
        else:
            k_unit = np.zeros((0, queries.shape[1]), dtype=np.float32)

        if not self._is_fitted():
            self._init_centers(q_unit)

        labels_q = assign_clusters(q_unit, self.cluster_centers_)
        labels_k = (
            assign_clusters(k_unit, self.cluster_centers_)
            if len(k_unit)
            else np.zeros(0, dtype=np.int64)
        )
        raw = ema_centroid_update(
            self.cluster_centers_, q_unit, k_unit, labels_q, labels_k, self.decay
        )
        counts = np.bincount(labels_q, minlength=self.n_clusters)
        if len(labels_k):
            counts = counts + np.bincount(labels_k, minlength=self.n_clusters)
        new = l2_normalize_rows(raw)
        # an empty cluster's update is decay * u, which re-normalizes back to
        # u in exact arithmetic; keep the old row bit-exactly instead of
        # letting float32 rounding perturb it
        empty = counts == 0
        new[empty] = self.cluster_centers_[empty]
        self.cluster_centers_ = new
        self.assignment_counts_ = counts.astype(np.int64)
        return self

    def predict(self, points) -> np.ndarray:
        """Assign cluster labels to rows of ``points`` (normalized internally)."""
        self._check_fitted()
        points = check_matrix(points, "points", cols=self.cluster_centers_.shape[1])
        return assign_clusters(l2_normalize_rows(points), self.cluster_centers_)

    def max_member_distance(self, points) -> float:
        """Largest Euclidean distance from a normalized row to its centroid."""
        self._check_fitted()
        unit = l2_normalize_rows(check_matrix(points, "points"))
        labels = assign_clusters(unit, self.cluster_centers_)
        diffs = unit.astype(np.float64) - self.cluster_centers_[labels].astype(np.float64)
        return float(np.sqrt((diffs**2).sum(axis=1)).max()) if len(unit) else 0.0
