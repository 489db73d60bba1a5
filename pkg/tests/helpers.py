"""Random discrete problems shared by the tests."""

from itertools import combinations

import numpy as np

from xfer.dtm import JointDistribution


def random_joint(rng, nx=None, ny=None, max_size=8, concentration=1.0):
    nx = nx or int(rng.integers(2, max_size + 1))
    ny = ny or int(rng.integers(2, max_size + 1))
    table = rng.dirichlet(np.full(nx * ny, concentration)).reshape(ny, nx)
    # keep every marginal comfortably positive
    table = 0.9 * table + 0.1 / (nx * ny)
    return JointDistribution(table / table.sum())


def normalized_features(rng, p_x, k):
    """Zero-mean, identity-covariance feature table under ``p_x`` (k <= |X|-1)."""
    f = rng.standard_normal((len(p_x), k))
    f -= p_x @ f
    psi = np.sqrt(p_x)[:, None] * f
    q, _ = np.linalg.qr(psi)
    return q / np.sqrt(p_x)[:, None]


def forest_components(n, edges):
    """Connected components (as frozensets, ordered by smallest member) of an edge list."""
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            a = parent[a]
        return a

    for i, j, _ in edges:
        parent[find(i)] = find(j)
    groups = {}
    for v in range(n):
        groups.setdefault(find(v), set()).add(v)
    return sorted(map(frozenset, groups.values()), key=min)


def brute_force_forest_weight(G):
    """Minimum total weight over all spanning forests with the graph's components."""
    edges = G.edges()
    target = forest_components(G.n, edges)
    size = G.n - len(target)
    best = np.inf
    for subset in combinations(edges, size):
        if forest_components(G.n, subset) == target:
            best = min(best, sum(w for _, _, w in subset))
    return best
