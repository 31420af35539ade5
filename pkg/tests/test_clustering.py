import itertools

import numpy as np
import pytest

from temporal_transport.clustering import (EmbeddingCorpus, cluster_corpus,
                                           constrained_assign, hungarian,
                                           kmeans)
from temporal_transport.model import ConfigurationError


def brute_force_assignment(cost):
    """Exhaustive minimum over all injective row -> column maps."""
    m, k = cost.shape
    best = None
    for perm in itertools.permutations(range(k), m):
        total = sum(cost[i, j] for i, j in enumerate(perm))
        if best is None or total < best[0] - 1e-15:
            best = (total, perm)
    return best


def brute_force_kmeans(vectors, k):
    """Exhaustive best objective over all labelings of <= 12 points."""
    n = vectors.shape[0]
    best = np.inf
    for labels in itertools.product(range(k), repeat=n):
        total = 0.0
        for j in range(k):
            members = vectors[[i for i in range(n) if labels[i] == j]]
            if len(members):
                total += float(((members - members.mean(axis=0)) ** 2).sum())
        best = min(best, total)
    return best


class TestKMeans:
    def test_single_cluster_is_mean(self):
        rng = np.random.default_rng(0)
        vectors = rng.normal(size=(9, 3))
        result = kmeans(vectors, 1, seed=0)
        assert result.centroids[0] == pytest.approx(vectors.mean(axis=0), abs=1e-12)

    def test_two_points_two_clusters(self):
        vectors = np.array([[0.0, 0.0], [5.0, 5.0]])
        result = kmeans(vectors, 2, seed=1)
        assert result.objective == pytest.approx(0.0, abs=1e-12)
        assert sorted(result.centroids[:, 0]) == pytest.approx([0.0, 5.0])

    def test_separated_blobs_match_exhaustive_oracle(self):
        rng = np.random.default_rng(7)
        blobs = [rng.normal(loc=center, scale=0.2, size=(4, 2))
                 for center in ((0, 0), (10, 0), (0, 10))]
        vectors = np.vstack(blobs)
        result = kmeans(vectors, 3, seed=5)
        oracle = brute_force_kmeans(vectors, 3)
        assert result.objective == pytest.approx(oracle, abs=1e-9)

    def test_objective_monotone(self):
        rng = np.random.default_rng(3)
        vectors = rng.normal(size=(60, 4))
        result = kmeans(vectors, 6, seed=2)
        hist = result.objective_history
        assert all(a >= b - 1e-9 for a, b in zip(hist, hist[1:]))

    def test_too_few_vectors(self):
        with pytest.raises(ConfigurationError):
            kmeans(np.zeros((2, 2)), 3, seed=0)

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        vectors = rng.normal(size=(40, 3))
        a = kmeans(vectors, 5, seed=9)
        b = kmeans(vectors, 5, seed=9)
        assert np.array_equal(a.centroids, b.centroids)


class TestHungarian:
    def test_diagonal_preference(self):
        assignment, cost = hungarian(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert list(assignment) == [0, 1]
        assert cost == 0.0

    def test_off_diagonal_optimum(self):
        assignment, cost = hungarian(np.array([[1.0, 2.0], [2.0, 4.0]]))
        assert list(assignment) == [1, 0]
        assert cost == pytest.approx(4.0)

    def test_rectangular_instance_matches_brute_force(self):
        rng = np.random.default_rng(11)
        cost = rng.uniform(size=(5, 7))
        assignment, total = hungarian(cost)
        oracle_total, _ = brute_force_assignment(cost)
        assert len(set(assignment)) == 5
        assert total == pytest.approx(oracle_total, abs=1e-12)

    def test_more_rows_than_columns_rejected(self):
        with pytest.raises(ConfigurationError):
            hungarian(np.zeros((3, 2)))


class TestConstrainedAssign:
    def test_matches_brute_force_randomly(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            m = int(rng.integers(2, 6))
            k = int(rng.integers(m, 7))
            vectors = rng.normal(size=(m, 2))
            centroids = rng.normal(size=(k, 2))
            assignment, total = constrained_assign(vectors, centroids)
            cost = ((vectors[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
            oracle_total, _ = brute_force_assignment(cost)
            assert total == pytest.approx(oracle_total, abs=1e-10)
            assert len(set(assignment)) == m

    def test_lexicographic_tie_break(self):
        # two items equidistant from two clusters: many optima, pick the
        # lexicographically smallest assignment vector
        vectors = np.array([[0.0, 0.0], [0.0, 0.0]])
        centroids = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
        assignment, _ = constrained_assign(vectors, centroids)
        assert list(assignment) == [0, 1]

    def test_plain_distance_optimum(self):
        rng = np.random.default_rng(8)
        vectors = rng.normal(size=(4, 2))
        centroids = rng.normal(size=(6, 2))
        assignment, total = constrained_assign(vectors, centroids, squared=False)
        cost = np.sqrt(((vectors[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2))
        oracle_total, _ = brute_force_assignment(cost)
        assert total == pytest.approx(oracle_total, abs=1e-10)


class TestClusterCorpus:
    @staticmethod
    def _corpus():
        rng = np.random.default_rng(2)
        items = {}
        tests = {}
        counter = 0
        for t in range(6):
            members = []
            for _ in range(3):
                items[f"i{counter}"] = rng.normal(size=4)
                members.append(f"i{counter}")
                counter += 1
            tests[f"t{t}"] = tuple(members)
        return EmbeddingCorpus(items, tests)

    def test_injectivity_per_test(self):
        corpus = self._corpus()
        assignment = cluster_corpus(corpus, 8, seed=3)
        for test_id, members in corpus.tests.items():
            labels = [assignment.cluster_of[i] for i in members]
            assert len(set(labels)) == len(labels)

    def test_singleton_tests_equal_nearest_centroid(self):
        rng = np.random.default_rng(6)
        items = {f"i{j}": rng.normal(size=3) for j in range(12)}
        tests = {f"t{j}": (f"i{j}",) for j in range(12)}
        corpus = EmbeddingCorpus(items, tests)
        assignment = cluster_corpus(corpus, 4, seed=1)
        for item, vec in items.items():
            d2 = ((assignment.centroids - vec) ** 2).sum(axis=1)
            assert assignment.cluster_of[item] == int(d2.argmin())

    def test_constrained_cost_at_least_unconstrained(self):
        corpus = self._corpus()
        assignment = cluster_corpus(corpus, 8, seed=3)
        for test_id, members in corpus.tests.items():
            vectors = np.vstack([corpus.items[i] for i in members])
            d2 = ((vectors[:, None, :] - assignment.centroids[None, :, :]) ** 2).sum(axis=2)
            unconstrained = float(d2.min(axis=1).sum())
            assert assignment.per_test_cost[test_id] >= unconstrained - 1e-10

    def test_forced_conflict_matches_exhaustive_optimum(self):
        # all items of one test sit on the same point: the constraint binds
        items = {"a": np.array([0.0, 0.0]), "b": np.array([0.0, 0.0]),
                 "c": np.array([5.0, 5.0]), "d": np.array([5.0, 6.0])}
        tests = {"t0": ("a", "b"), "t1": ("c", "d")}
        corpus = EmbeddingCorpus(items, tests)
        assignment = cluster_corpus(corpus, 3, seed=2)
        for test_id, members in tests.items():
            vectors = np.vstack([items[i] for i in members])
            cost = ((vectors[:, None, :] - assignment.centroids[None, :, :]) ** 2).sum(axis=2)
            oracle_total, _ = brute_force_assignment(cost)
            assert assignment.per_test_cost[test_id] == pytest.approx(oracle_total,
                                                                      abs=1e-10)

    def test_oversized_test_rejected(self):
        items = {f"i{j}": np.array([float(j)]) for j in range(4)}
        corpus = EmbeddingCorpus(items, {"t0": ("i0", "i1", "i2", "i3")})
        with pytest.raises(ConfigurationError):
            cluster_corpus(corpus, 3, seed=0)

    def test_corpus_validation(self):
        items = {"a": np.array([0.0]), "b": np.array([0.0, 1.0])}
        corpus = EmbeddingCorpus(items, {"t": ("a", "a")})
        problems = corpus.validate()
        assert any("dimensions" in p for p in problems)
        assert any("duplicate" in p for p in problems)
