import numpy as np
import pytest
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from gridreloc.reservoirs import (COVARIANCE_EPSILON, ClustererParams,
                                  Reservoir, quick_shift_labels)


def tau_connectivity_partition(points, tau):
    """Brute-force oracle: connected components of the tau-distance graph,
    as a set of frozensets of point indices."""
    n = len(points)
    diff = points[:, None, :] - points[None, :, :]
    adj = (diff ** 2).sum(-1) <= tau ** 2
    _, labels = connected_components(csr_matrix(adj), directed=False)
    return {frozenset(np.nonzero(labels == c)[0])
            for c in np.unique(labels)}


def quick_shift_partition(points, params):
    roots = quick_shift_labels(points, params)
    return {frozenset(np.nonzero(roots == r)[0]) for r in np.unique(roots)}


def two_blob_instance(rng, n_per_blob=40, blob_sigma=0.01, tau=0.05):
    """Two tight Gaussian blobs separated by 10 tau."""
    c1 = rng.uniform(-1, 1, size=3)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    c2 = c1 + 10.0 * tau * direction
    pts = np.vstack([c1 + blob_sigma * rng.normal(size=(n_per_blob, 3)),
                     c2 + blob_sigma * rng.normal(size=(n_per_blob, 3))])
    return pts


class TestReservoirSampling:
    def test_single_insert(self):
        r = Reservoir(capacity=8)
        r.add_point([1.0, 2.0, 3.0], [0.5, 0.5, 0.5],
                    np.random.default_rng(0))
        assert len(r) == 1
        assert r.seen_count == 1

    def test_fills_to_capacity(self):
        r = Reservoir(capacity=4096)
        rng = np.random.default_rng(1)
        r.add_points(rng.normal(size=(4096, 3)), rng.random((4096, 3)), rng)
        assert len(r) == 4096

    def test_capacity_never_exceeded_and_seen_monotone(self):
        r = Reservoir(capacity=16)
        rng = np.random.default_rng(2)
        prev_seen = 0
        for _ in range(20):
            r.add_points(rng.normal(size=(13, 3)), rng.random((13, 3)), rng)
            assert len(r) <= 16
            assert r.seen_count >= prev_seen
            prev_seen = r.seen_count
        assert r.seen_count == 260

    def test_vectorised_matches_sequential_reference(self):
        """The batched sampler consumes the RNG stream exactly like a
        one-point-at-a-time loop, so contents must match bit for bit."""
        capacity, n = 16, 500
        rng = np.random.default_rng(3)
        points = rng.normal(size=(n, 3))
        colours = rng.random((n, 3))

        r = Reservoir(capacity=capacity)
        r.add_points(points, colours, np.random.default_rng(42))

        ref_rng = np.random.default_rng(42)
        buf = points[:capacity].copy()
        for m in range(capacity + 1, n + 1):
            j = int(ref_rng.random() * m)
            if j < capacity:
                buf[j] = points[m - 1]
        assert np.array_equal(r.positions, buf)

    def test_retention_roughly_uniform(self):
        # Light statistical check; the full 1000-trial version lives in
        # the acceptance suite.
        capacity, n, trials = 16, 1000, 200
        counts = np.zeros(n)
        base = np.zeros((n, 3))
        base[:, 0] = np.arange(n)
        for t in range(trials):
            r = Reservoir(capacity=capacity)
            r.add_points(base, np.zeros((n, 3)), np.random.default_rng(t))
            counts[r.positions[:, 0].astype(int)] += 1
        expected = trials * capacity / n
        # Halves of the stream retained at indistinguishable rates.
        first, second = counts[:n // 2].mean(), counts[n // 2:].mean()
        assert abs(first - second) < 0.5 * expected


class TestQuickShift:
    def test_two_blob_components_match_oracle(self):
        params = ClustererParams(sigma=0.1, tau=0.05, min_cluster_size=1)
        rng = np.random.default_rng(4)
        for _ in range(10):
            pts = two_blob_instance(rng)
            assert (quick_shift_partition(pts, params)
                    == tau_connectivity_partition(pts, params.tau))

    def test_mutually_close_points_single_cluster(self):
        rng = np.random.default_rng(5)
        pts = rng.uniform(-0.02, 0.02, size=(30, 3))  # all within tau
        params = ClustererParams(sigma=0.1, tau=0.05, min_cluster_size=1)
        r = Reservoir(capacity=64, positions=pts, colours=np.zeros((30, 3)))
        clusters = r.recluster(params)
        assert len(clusters) == 1
        assert clusters[0].size == 30
        assert np.allclose(clusters[0].centroid, pts.mean(axis=0),
                           atol=1e-12)

    def test_single_point_cluster(self):
        params = ClustererParams(sigma=0.1, tau=0.05, min_cluster_size=1)
        pts = np.array([[1.0, 2.0, 3.0]])
        r = Reservoir(capacity=8, positions=pts,
                      colours=np.array([[0.2, 0.4, 0.6]]))
        clusters = r.recluster(params)
        assert len(clusters) == 1
        assert np.allclose(clusters[0].centroid, [1, 2, 3])
        assert np.allclose(clusters[0].colour_centroid, [0.2, 0.4, 0.6])

    def test_min_cluster_size_filters(self):
        rng = np.random.default_rng(6)
        pts = np.vstack([rng.normal(0, 0.005, size=(25, 3)),
                         np.array([[5.0, 5.0, 5.0]])])  # lone outlier
        params = ClustererParams(sigma=0.1, tau=0.05, min_cluster_size=5)
        r = Reservoir(capacity=64, positions=pts,
                      colours=np.zeros((26, 3)))
        clusters = r.recluster(params)
        assert len(clusters) == 1
        assert clusters[0].size == 25

    def test_max_cluster_count_keeps_largest(self):
        rng = np.random.default_rng(7)
        blobs = []
        for k in range(5):
            n = 4 + 3 * k  # distinct sizes 4, 7, 10, 13, 16
            blobs.append(np.array([10.0 * k, 0, 0])
                         + rng.normal(0, 0.004, size=(n, 3)))
        pts = np.vstack(blobs)
        params = ClustererParams(sigma=0.1, tau=0.05, min_cluster_size=1,
                                 max_cluster_count=3)
        r = Reservoir(capacity=64, positions=pts,
                      colours=np.zeros((len(pts), 3)))
        clusters = r.recluster(params)
        assert [c.size for c in clusters] == [16, 13, 10]

    def test_recluster_deterministic(self):
        rng = np.random.default_rng(8)
        pts = two_blob_instance(rng)
        params = ClustererParams(sigma=0.1, tau=0.05, min_cluster_size=1)
        r = Reservoir(capacity=128, positions=pts,
                      colours=np.zeros((len(pts), 3)))
        a = r.recluster(params)
        b = r.recluster(params)
        assert len(a) == len(b)
        for ca, cb in zip(a, b):
            assert np.array_equal(ca.centroid, cb.centroid)
            assert np.array_equal(ca.covariance, cb.covariance)


class TestClusterSummaries:
    def test_covariance_two_pass_oracle(self):
        rng = np.random.default_rng(9)
        pts = rng.normal(0, 0.01, size=(50, 3))
        params = ClustererParams(sigma=0.1, tau=0.2, min_cluster_size=1)
        r = Reservoir(capacity=64, positions=pts,
                      colours=rng.random((50, 3)))
        c = r.recluster(params)[0]
        assert c.size == 50
        # Independent two-pass population covariance.
        expected = np.cov(pts.T, ddof=0)
        assert np.allclose(c.covariance, expected, atol=1e-9)
        assert np.allclose(c.inv_covariance @ c.covariance, np.eye(3),
                           atol=1e-6)

    def test_covariance_symmetric_psd(self):
        rng = np.random.default_rng(10)
        pts = two_blob_instance(rng)
        params = ClustererParams(sigma=0.1, tau=0.05, min_cluster_size=1)
        r = Reservoir(capacity=128, positions=pts,
                      colours=np.zeros((len(pts), 3)))
        for c in r.recluster(params):
            assert np.allclose(c.covariance, c.covariance.T)
            assert np.linalg.eigvalsh(c.covariance).min() >= -1e-9

    def test_degenerate_cluster_regularised(self):
        # Three coincident points: raw covariance is singular.
        pts = np.tile(np.array([[0.5, 0.5, 0.5]]), (3, 1))
        params = ClustererParams(sigma=0.1, tau=0.05, min_cluster_size=1)
        r = Reservoir(capacity=8, positions=pts, colours=np.zeros((3, 3)))
        c = r.recluster(params)[0]
        assert np.allclose(c.covariance, COVARIANCE_EPSILON * np.eye(3))
        assert np.isfinite(c.inv_covariance).all()


class TestModes:
    def test_empty_before_recluster(self):
        assert Reservoir(capacity=8).modes() == []

    def test_idempotent_without_inserts(self):
        rng = np.random.default_rng(11)
        pts = two_blob_instance(rng)
        params = ClustererParams(sigma=0.1, tau=0.05, min_cluster_size=1)
        r = Reservoir(capacity=128, positions=pts,
                      colours=np.zeros((len(pts), 3)))
        r.recluster(params)
        assert r.modes() is r.modes()
        assert len(r.modes()) == 2

    def test_ordered_largest_first(self):
        rng = np.random.default_rng(12)
        pts = np.vstack([rng.normal(0, 0.004, size=(30, 3)),
                         np.array([3.0, 0, 0])
                         + rng.normal(0, 0.004, size=(10, 3))])
        params = ClustererParams(sigma=0.1, tau=0.05, min_cluster_size=1)
        r = Reservoir(capacity=64, positions=pts,
                      colours=np.zeros((40, 3)))
        r.recluster(params)
        sizes = [c.size for c in r.modes()]
        assert sizes == sorted(sizes, reverse=True)


def test_clusterer_params_validation():
    with pytest.raises(ValueError):
        ClustererParams(sigma=0.0)
    with pytest.raises(ValueError):
        ClustererParams(min_cluster_size=0)
