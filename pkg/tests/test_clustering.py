"""Constrained k-means, Hungarian solver vs brute force, accuracy metric."""

import itertools

import numpy as np
import pytest

from gcdshift.clustering import AccReport, cluster_acc, hungarian, ss_kmeans


def two_blobs(n_per=100, d=2, sep=10.0, sigma=0.1, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(0, sigma, (n_per, d)) + sep
    b = rng.normal(0, sigma, (n_per, d)) - sep
    return np.vstack([a, b])


def brute_force_cost(cost):
    a = np.asarray(cost, dtype=float)
    n = a.shape[0]
    best = np.inf
    for perm in itertools.permutations(range(n)):
        best = min(best, sum(a[i, perm[i]] for i in range(n)))
    return best


class TestSsKmeans:
    def test_forced_assignments_never_change(self):
        rng = np.random.default_rng(3)
        for trial in range(20):
            pts = rng.normal(size=(40, 3))
            forced = {int(i): int(rng.integers(3)) for i in rng.choice(40, 10, replace=False)}
            res = ss_kmeans(pts, k=3, forced=forced, seed=trial)
            for i, c in forced.items():
                assert res.assignments[i] == c

    def test_two_blob_inertia_near_noise_floor(self):
        pts = two_blobs(n_per=100, d=2, sep=10.0, sigma=0.1)
        res = ss_kmeans(pts, k=2, seed=0)
        # expected inertia about n * d * sigma^2 = 200 * 2 * 0.01 = 4
        assert 2.0 < res.inertia < 6.0
        # the two blobs land in different clusters
        assert len(set(res.assignments[:100])) == 1
        assert res.assignments[0] != res.assignments[-1]

    def test_inertia_non_increasing(self):
        rng = np.random.default_rng(11)
        pts = rng.normal(size=(120, 4))
        res = ss_kmeans(pts, k=5, forced={0: 0, 1: 1}, seed=2)
        h = res.inertia_history
        assert all(h[i + 1] <= h[i] + 1e-9 for i in range(len(h) - 1))

    def test_all_points_forced_one_iteration(self):
        pts = np.array([[0.0, 0], [1, 0], [10, 0], [11, 0]])
        forced = {0: 0, 1: 0, 2: 1, 3: 1}
        res = ss_kmeans(pts, k=2, forced=forced)
        assert res.iterations == 1
        assert np.allclose(res.centroids[0], [0.5, 0])
        assert np.allclose(res.centroids[1], [10.5, 0])

    def test_k_larger_than_n_rejected(self):
        with pytest.raises(ValueError, match="out of range"):
            ss_kmeans(np.zeros((3, 2)), k=4)

    def test_forced_cluster_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="forced cluster"):
            ss_kmeans(np.zeros((5, 2)), k=2, forced={0: 5})

    def test_deterministic_under_seed(self):
        pts = np.random.default_rng(9).normal(size=(60, 3))
        r1 = ss_kmeans(pts, k=4, seed=7)
        r2 = ss_kmeans(pts, k=4, seed=7)
        assert np.array_equal(r1.assignments, r2.assignments)
        assert r1.centroids.tobytes() == r2.centroids.tobytes()

    def test_singleton_clusters_allowed(self):
        pts = np.array([[0.0], [5.0], [10.0]])
        res = ss_kmeans(pts, k=3, seed=0)
        assert sorted(np.bincount(res.assignments, minlength=3)) == [1, 1, 1]
        assert res.inertia < 1e-12


class TestHungarian:
    def test_worked_example(self):
        col = hungarian([[1.0, 2.0], [3.0, 1.0]])
        cost = 1.0 + 1.0
        got = sum([[1.0, 2.0], [3.0, 1.0]][i][col[i]] for i in range(2))
        assert got == cost
        assert list(col) == [0, 1]

    def test_matches_brute_force_on_random_matrices(self):
        rng = np.random.default_rng(41)
        for n in (2, 3, 4, 5, 6):
            for _ in range(20):
                a = rng.normal(size=(n, n))
                col = hungarian(a)
                got = sum(a[i, col[i]] for i in range(n))
                assert abs(got - brute_force_cost(a)) < 1e-9

    def test_rectangular_padded(self):
        a = np.array([[5.0, 1.0, 3.0], [2.0, 7.0, 1.0]])  # 2 rows, 3 cols
        col = hungarian(a)
        assert len(col) == 3
        assert len(set(col)) == 3  # a permutation
        got = a[0, col[0]] + a[1, col[1]]
        # optimum picks 1.0 (row 0, col 1) + 1.0 (row 1, col 2)
        assert abs(got - 2.0) < 1e-12

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            hungarian([[1.0, np.inf], [0.0, 1.0]])

    def test_degenerate_all_equal_costs(self):
        col = hungarian(np.ones((4, 4)))
        assert sorted(col) == [0, 1, 2, 3]


class TestClusterAcc:
    def test_worked_example(self):
        rep = cluster_acc([0, 0, 1, 1], [1, 1, 1, 0], old_classes={0})
        assert abs(rep.acc_all - 0.75) < 1e-12

    def test_perfect_relabelling_scores_one(self):
        rng = np.random.default_rng(5)
        y = rng.integers(0, 6, 300)
        perm = rng.permutation(6)
        rep = cluster_acc(y, perm[y], old_classes={0, 1, 2})
        assert rep.acc_all == 1.0 and rep.acc_old == 1.0 and rep.acc_new == 1.0

    def test_single_permutation_used_for_subsets(self):
        # the permutation maximizing overall matches may be suboptimal for a
        # subset; the subset scores must still come from the overall matching
        y_true = np.array([0] * 10 + [1] * 50 + [1] * 0)
        y_pred = np.array([1] * 10 + [1] * 50)
        rep = cluster_acc(y_true, y_pred, old_classes={0})
        # all predictions are cluster 1 -> mapped to class 1 (majority)
        assert rep.acc_old == 0.0
        assert rep.acc_new == 1.0
        assert abs(rep.acc_all - 50 / 60) < 1e-12

    def test_acc_bounds(self):
        rng = np.random.default_rng(8)
        y = rng.integers(0, 5, 200)
        p = rng.integers(0, 5, 200)
        rep = cluster_acc(y, p, old_classes={0, 1})
        for v in (rep.acc_all, rep.acc_old, rep.acc_new):
            assert 0.0 <= v <= 1.0
        # Hungarian matching on 5 square classes can never do worse than 1/5
        assert rep.acc_all >= 1 / 5 - 1e-12

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ValueError, match="equal-length"):
            cluster_acc([0, 1], [0, 1, 2], old_classes={0})

    def test_negative_labels_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            cluster_acc([0, -1], [0, 1], old_classes={0})

    def test_report_type(self):
        rep = cluster_acc([0, 1], [1, 0], old_classes={0})
        assert isinstance(rep, AccReport)
        assert set(rep.permutation.keys()) == {0, 1}
