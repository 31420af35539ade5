"""Constrained cluster assignment over precomputed embedding vectors.

Centroids come from seeded k-means++ over the whole corpus; each test's
items are then mapped injectively onto clusters by minimum-cost matching,
so no two items from one test share a cluster and arms stay comparable
across tests.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

from .model import ConfigurationError


@dataclass
class EmbeddingCorpus:
    """Embedding vectors keyed by item, with a test -> items grouping."""

    items: dict[str, np.ndarray]
    tests: dict[str, tuple[str, ...]]

    @property
    def dim(self) -> int:
        first = next(iter(self.items.values()))
        return int(first.shape[0])

    def validate(self) -> list[str]:
        violations = []
        dims = {v.shape[0] for v in self.items.values()}
        if len(dims) > 1:
            violations.append(f"inconsistent vector dimensions {sorted(dims)}")
        seen: dict[str, str] = {}
        for test_id, members in self.tests.items():
            if len(set(members)) != len(members):
                violations.append(f"test {test_id} lists duplicate items")
            for item in members:
                if item not in self.items:
                    violations.append(f"test {test_id} references unknown item {item}")
                elif item in seen:
                    violations.append(
                        f"item {item} appears in tests {seen[item]} and {test_id}")
                else:
                    seen[item] = test_id
        return violations


@dataclass
class ClusterAssignment:
    """Final item -> cluster map with centroids and per-test matching cost."""

    cluster_of: dict[str, int]
    centroids: np.ndarray
    per_test_cost: dict[str, float] = field(default_factory=dict)


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    objective: float
    objective_history: list[float]
    n_iter: int


def _sq_dists(vectors: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((vectors[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _plus_plus_init(vectors: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = vectors.shape[0]
    centroids = np.empty((k, vectors.shape[1]))
    centroids[0] = vectors[rng.integers(n)]
    d2 = ((vectors - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centroids[j] = vectors[rng.integers(n)]
            continue
        probs = d2 / total
        centroids[j] = vectors[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, ((vectors - centroids[j]) ** 2).sum(axis=1))
    return centroids


def kmeans(vectors: np.ndarray, k: int, seed: int, max_iter: int = 100,
           tol: float = 1e-6) -> KMeansResult:
    """Seeded k-means++ with Lloyd iterations.

    The within-cluster sum of squares never increases; iteration stops on a
    relative objective change below `tol`. An emptied cluster is re-seeded
    at the point farthest from its assigned centroid.
    """
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    if vectors.shape[0] < k:
        raise ConfigurationError(f"{vectors.shape[0]} vectors cannot support {k} clusters")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6B6D]))
    centroids = _plus_plus_init(vectors, k, rng)
    history: list[float] = []
    labels = np.zeros(vectors.shape[0], dtype=int)
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(vectors, centroids)
        labels = d2.argmin(axis=1)
        objective = float(d2[np.arange(len(labels)), labels].sum())
        history.append(objective)
        new_centroids = centroids.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new_centroids[j] = vectors[members].mean(axis=0)
            else:
                farthest = int(d2[np.arange(len(labels)), labels].argmax())
                new_centroids[j] = vectors[farthest]
        if len(history) >= 2 and history[-2] > 0:
            if abs(history[-2] - history[-1]) < tol * history[-2]:
                centroids = new_centroids
                break
        centroids = new_centroids
    d2 = _sq_dists(vectors, centroids)
    labels = d2.argmin(axis=1)
    objective = float(d2[np.arange(len(labels)), labels].sum())
    history.append(objective)
    return KMeansResult(centroids, labels, objective, history, len(history) - 1)


def hungarian(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Minimum-cost injective assignment of m rows to K >= m columns.

    Standard O(n^3) potentials algorithm on the matrix padded square with
    zero-cost dummy rows; returns (column index per real row, total cost).
    """
    cost = np.atleast_2d(np.asarray(cost, dtype=float))
    m, k = cost.shape
    if m > k:
        raise ConfigurationError(f"cannot assign {m} items injectively to {k} clusters")
    if m < k:
        cost = np.vstack([cost, np.zeros((k - m, k))])
    n = k
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        way = np.zeros(n + 1, dtype=int)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            reduced = cost[i0 - 1, :] - u[i0] - v[1:]
            candidates = np.where(~used[1:], reduced, np.inf)
            better = candidates < minv[1:]
            minv[1:][better] = candidates[better]
            way[1:][better] = j0
            open_cols = ~used[1:]
            j1 = int(np.argmin(np.where(open_cols, minv[1:], np.inf))) + 1
            delta = minv[j1]
            u[match[used]] += delta
            v[used] -= delta
            minv[1:][~used[1:]] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    assignment = np.full(n, -1, dtype=int)
    for j in range(1, n + 1):
        if match[j] > 0:
            assignment[match[j] - 1] = j - 1
    assignment = assignment[:m]
    return assignment, float(cost[np.arange(m), assignment].sum())


def _lexicographic_fix(cost: np.ndarray, total: float) -> np.ndarray:
    """Among minimum-cost assignments, pick the lexicographically smallest
    cluster vector (item order). Ties are resolved exactly by re-solving
    the reduced problem for each candidate column."""
    m, k = cost.shape
    tol = 1e-9 * max(1.0, abs(total))
    remaining = list(range(k))
    chosen = np.empty(m, dtype=int)
    budget = total
    for i in range(m):
        for col in remaining:
            rest_cols = [c for c in remaining if c != col]
            if i + 1 < m:
                _, rest_cost = hungarian(cost[np.ix_(range(i + 1, m), rest_cols)])
            else:
                rest_cost = 0.0
            if cost[i, col] + rest_cost <= budget + tol:
                chosen[i] = col
                remaining = rest_cols
                budget = rest_cost
                break
        else:
            raise RuntimeError("tie resolution failed to complete an optimal assignment")
    return chosen


def constrained_assign(test_vectors: np.ndarray, centroids: np.ndarray,
                       squared: bool = True,
                       lexicographic: bool = True) -> tuple[np.ndarray, float]:
    """Injective item -> cluster map minimizing total embedding distance.

    Costs are squared Euclidean distances by default (consistent with the
    k-means objective); pass squared=False for plain distances, which can
    change the optimum. Requires at most as many items as clusters.
    """
    test_vectors = np.atleast_2d(np.asarray(test_vectors, dtype=float))
    cost = _sq_dists(test_vectors, centroids)
    if not squared:
        cost = np.sqrt(cost)
    assignment, total = hungarian(cost)
    if lexicographic:
        assignment = _lexicographic_fix(cost, total)
        total = float(cost[np.arange(cost.shape[0]), assignment].sum())
    return assignment, total


def cluster_corpus(corpus: EmbeddingCorpus, k: int, seed: int,
                   squared: bool = True) -> ClusterAssignment:
    """Cluster all embeddings, then assign each test's items injectively.

    Items outside any test fall back to nearest-centroid assignment.
    """
    problems = corpus.validate()
    if problems:
        raise ConfigurationError("; ".join(problems))
    max_test = max((len(v) for v in corpus.tests.values()), default=0)
    if max_test > k:
        raise ConfigurationError(
            f"a test with {max_test} items cannot be assigned injectively to {k} clusters")
    item_ids = sorted(corpus.items)
    matrix = np.vstack([corpus.items[i] for i in item_ids])
    km = kmeans(matrix, k, seed)
    cluster_of: dict[str, int] = {}
    per_test_cost: dict[str, float] = {}
    in_test = set()
    for test_id in sorted(corpus.tests):
        members = corpus.tests[test_id]
        in_test.update(members)
        vectors = np.vstack([corpus.items[i] for i in members])
        assignment, total = constrained_assign(vectors, km.centroids, squared)
        per_test_cost[test_id] = total
        for item, cluster in zip(members, assignment):
            cluster_of[item] = int(cluster)
    loose = [i for i in item_ids if i not in in_test]
    if loose:
        vectors = np.vstack([corpus.items[i] for i in loose])
        nearest = _sq_dists(vectors, km.centroids).argmin(axis=1)
        for item, cluster in zip(loose, nearest):
            cluster_of[item] = int(cluster)
    return ClusterAssignment(cluster_of, km.centroids, per_test_cost)
