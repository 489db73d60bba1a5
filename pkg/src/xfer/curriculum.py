"""Pairwise transferability among tasks and the curricula built from it.

``M[i, j] = H_j(f_i) / H_j(f_j)``: features trained for task i, scored on
task j's labels, normalized by task j's own features. Task pairs become
graph edges with weight ``1 - max(M[i, j], M[j, i])`` when that maximum
reaches a threshold alpha; the minimum spanning forest of that graph, with
each edge pointing from the better donor, is the transfer curriculum.
"""

from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .data_io import as_feature_matrix
from .errors import DataError, DegenerateTaskError
from .stats import h_score


@dataclass
class TransferabilityMatrix:
    values: np.ndarray
    task_ids: list
    # hscores[i, j] = H-score of task i's features on task j's labels
    hscores: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        n = len(self.task_ids)
        if self.values.shape != (n, n):
            raise DataError(f"matrix shape {self.values.shape} does not match {n} task ids")
        if len(set(self.task_ids)) != n:
            raise DataError("task ids must be unique")

    @property
    def n(self):
        return len(self.task_ids)

    def to_dict(self):
        out = {"task_ids": list(self.task_ids), "M": self.values.tolist()}
        if self.hscores is not None:
            out["hscores"] = self.hscores.tolist()
        return out


def transferability_matrix(tasks, inverse_mode=None, threads=1):
    """Build ``M`` from ``(task_id, features, labels)`` triples on shared inputs.

    The n^2 H-scores are independent; ``threads > 1`` evaluates them on a
    thread pool. The result does not depend on the thread count.
    """
    tasks = list(tasks)
    if len(tasks) < 2:
        raise ValueError("need at least 2 tasks")
    ids = [str(t[0]) for t in tasks]
    feats = [as_feature_matrix(t[1]) for t in tasks]
    labels = [t[2] for t in tasks]
    m = feats[0].shape[0]
    bad = [tid for tid, F in zip(ids, feats) if F.shape[0] != m]
    if bad:
        raise DataError(f"tasks whose features do not have {m} rows: {bad}")
    n = len(tasks)
    cells = [(i, j) for j in range(n) for i in range(n)]

    def score(cell):
        i, j = cell
        return h_score(feats[i], labels[j], inverse_mode).value

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(score, cells))
    else:
        values = [score(c) for c in cells]
    H = np.empty((n, n))
    for (i, j), v in zip(cells, values):
        H[i, j] = v
    diag = H.diagonal().copy()
    zero = [ids[j] for j in range(n) if not diag[j] > 0]
    if zero:
        raise DegenerateTaskError(f"tasks with zero self H-score: {zero}")
    return TransferabilityMatrix(H / diag[None, :], ids, H)


def _as_matrix(M):
    if isinstance(M, TransferabilityMatrix):
        return M.values, list(M.task_ids)
    M = np.asarray(M, dtype=np.float64)
    return M, [str(i) for i in range(M.shape[0])]


def _pair_max(M):
    return np.maximum(M, M.T)


@dataclass
class TaskGraph:
    """Undirected weights; ``nan`` marks an absent edge. No self-edges."""

    weights: np.ndarray
    alpha: float
    task_ids: list

    @property
    def n(self):
        return len(self.task_ids)

    def edges(self):
        n = self.n
        return [
            (i, j, float(self.weights[i, j]))
            for i in range(n) for j in range(i + 1, n)
            if not np.isnan(self.weights[i, j])
        ]


def build_graph(M, alpha):
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    values, ids = _as_matrix(M)
    best = _pair_max(values)
    W = np.where(best >= alpha, 1.0 - best, np.nan)
    np.fill_diagonal(W, np.nan)
    return TaskGraph(W, float(alpha), ids)


def percentile_threshold(M, p):
    """p-th percentile (linear interpolation) of ``max(M[i,j], M[j,i])`` over i < j."""
    if not 0 <= p <= 100:
        raise ValueError("percentile must lie in [0, 100]")
    values, _ = _as_matrix(M)
    iu = np.triu_indices(values.shape[0], k=1)
    return float(np.percentile(_pair_max(values)[iu], p))


class _DisjointSet:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[max(ra, rb)] = min(ra, rb)
        return True


def spanning_forest(G):
    """Kruskal; equal weights are taken in (i, j) order."""
    ds = _DisjointSet(G.n)
    return [(i, j, w) for i, j, w in sorted(G.edges(), key=lambda e: (e[2], e[0], e[1]))
            if ds.union(i, j)]


@dataclass
class DirectedEdge:
    src: int
    dst: int
    weight: float
    m_ij: float
    m_ji: float


@dataclass
class CurriculumForest:
    edges: list
    components: list
    task_ids: list
    alpha: float = None

    def to_dict(self):
        ids = self.task_ids
        return {
            "alpha": self.alpha,
            "components": [[ids[i] for i in comp] for comp in self.components],
            "edges": [
                {"src": ids[e.src], "dst": ids[e.dst], "weight": e.weight,
                 "m_ij": e.m_ij, "m_ji": e.m_ji}
                for e in self.edges
            ],
        }

    def to_dot(self, name="curriculum"):
        lines = [f"digraph {name} {{"]
        for tid in self.task_ids:
            lines.append(f'  "{tid}";')
        for e in self.edges:
            lines.append(
                f'  "{self.task_ids[e.src]}" -> "{self.task_ids[e.dst]}" '
                f'[label="{e.weight:.4g}"];'
            )
        lines.append("}")
        return "\n".join(lines) + "\n"


def orient_edges(forest, M, alpha=None):
    """Point each forest edge from the stronger donor; ties go low -> high index."""
    values, ids = _as_matrix(M)
    n = len(ids)
    ds = _DisjointSet(n)
    edges = []
    for i, j, w in forest:
        i, j = min(i, j), max(i, j)
        ds.union(i, j)
        src, dst = (i, j) if values[i, j] >= values[j, i] else (j, i)
        edges.append(DirectedEdge(src, dst, float(w), float(values[src, dst]),
                                  float(values[dst, src])))
    groups = {}
    for v in range(n):
        groups.setdefault(ds.find(v), []).append(v)
    components = sorted(groups.values(), key=lambda c: c[0])
    return CurriculumForest(edges, components, ids, alpha)


def curriculum(M, alpha=None, percentile=None):
    """Graph, spanning forest and orientation in one call."""
    if (alpha is None) == (percentile is None):
        raise ValueError("give exactly one of alpha or percentile")
    if percentile is not None:
        alpha = percentile_threshold(M, percentile)
    G = build_graph(M, alpha)
    return orient_edges(spanning_forest(G), M, alpha=G.alpha)


@dataclass
class Merge:
    left: int
    right: int
    height: float
    size: int
    members: list = field(default_factory=list)


@dataclass
class Dendrogram:
    """Merges in order; cluster ids follow the usual convention (leaves
    ``0..n-1``, the r-th merge creates cluster ``n + r``)."""

    merges: list
    task_ids: list

    def to_linkage(self):
        return np.array([[m.left, m.right, m.height, m.size] for m in self.merges], dtype=float)

    def to_dict(self):
        return {
            "task_ids": list(self.task_ids),
            "merges": [
                {"left": m.left, "right": m.right, "height": m.height, "size": m.size,
                 "members": [self.task_ids[i] for i in m.members]}
                for m in self.merges
            ],
        }


def task_vectors(M):
    """Per-task vector of raw H-scores from every source (one row per target)."""
    if isinstance(M, TransferabilityMatrix):
        if M.hscores is None:
            raise DataError("clustering needs raw H-scores; this matrix carries only M")
        return M.hscores.T.copy(), list(M.task_ids)
    H = np.asarray(M, dtype=np.float64)
    return H.T.copy(), [str(i) for i in range(H.shape[0])]


def average_linkage(vectors, task_ids=None):
    """Average-linkage agglomeration with Euclidean distances.

    Among equally distant cluster pairs the one with the smallest
    ``(lower id, higher id)`` merges first.
    """
    X = np.asarray(vectors, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least 2 items to cluster")
    ids = list(task_ids) if task_ids is not None else [str(i) for i in range(n)]
    diff = X[:, None, :] - X[None, :, :]
    D = {}
    for a in range(n):
        for b in range(a + 1, n):
            D[(a, b)] = float(np.sqrt(np.sum(diff[a, b] ** 2)))
    members = {i: [i] for i in range(n)}
    merges = []
    for r in range(n - 1):
        (a, b), h = min(D.items(), key=lambda kv: (kv[1], kv[0]))
        new = n + r
        na, nb = len(members[a]), len(members[b])
        for c in list(members):
            if c in (a, b):
                continue
            dac = D.pop((min(a, c), max(a, c)))
            dbc = D.pop((min(b, c), max(b, c)))
            D[(c, new)] = (na * dac + nb * dbc) / (na + nb)
        del D[(a, b)]
        members[new] = sorted(members.pop(a) + members.pop(b))
        merges.append(Merge(a, b, h, na + nb, list(members[new])))
    return Dendrogram(merges, ids)


def cluster_tasks(M):
    """Average-linkage dendrogram of the tasks' raw H-score vectors."""
    vectors, ids = task_vectors(M)
    return average_linkage(vectors, ids)


def _ranks(r):
    """Item -> 1-based rank (1 = best). Mappings are scores, higher is better,
    with tied scores sharing their average rank; sequences are orderings."""
    if isinstance(r, Mapping):
        items = list(r)
        scores = np.array([float(r[i]) for i in items])
        return dict(zip(items, rankdata(-scores, method="average")))
    items = list(r)
    if len(set(items)) != len(items):
        raise DataError("ranking lists an item more than once")
    return {item: float(pos) for pos, item in enumerate(items, start=1)}


def _paired_ranks(r_a, r_b):
    ra, rb = _ranks(r_a), _ranks(r_b)
    if set(ra) != set(rb):
        missing = sorted(map(str, set(ra) ^ set(rb)))
        raise DataError(f"rankings cover different items: {missing}")
    return ra, rb


def spearman(r_a, r_b):
    """``1 - 6 sum d^2 / (n (n^2 - 1))`` on (average-tied) rank differences."""
    ra, rb = _paired_ranks(r_a, r_b)
    n = len(ra)
    if n < 2:
        raise ValueError("spearman needs at least 2 items")
    d2 = sum((ra[i] - rb[i]) ** 2 for i in ra)
    return 1.0 - 6.0 * d2 / (n * (n * n - 1))


@dataclass
class DCGResult:
    dcg: float
    ideal: float
    normalized: float


RELEVANCE_MODES = ("reverse_rank", "exponential")


def dcg_similarity(r_a, r_b, relevance_mode="reverse_rank"):
    """DCG of ordering ``r_a`` with relevances taken from ``r_b``.

    ``reverse_rank`` relevance is ``n - rank_b``; ``exponential`` uses
    ``2^(n - rank_b) - 1``. Positions are discounted by ``1/log2(rank_a + 1)``.
    ``normalized`` divides by the DCG of the ideal ordering (1 when every
    relevance is zero).
    """
    if relevance_mode not in RELEVANCE_MODES:
        raise ValueError(f"unknown relevance mode {relevance_mode!r}")
    ra, rb = _paired_ranks(r_a, r_b)
    n = len(ra)
    rel = {i: n - rb[i] for i in rb}
    if relevance_mode == "exponential":
        rel = {i: 2.0 ** v - 1 for i, v in rel.items()}
    dcg = sum(rel[i] / np.log2(ra[i] + 1) for i in ra)
    ideal_rel = sorted(rel.values(), reverse=True)
    ideal = sum(v / np.log2(pos + 1) for pos, v in enumerate(ideal_rel, start=1))
    normalized = dcg / ideal if ideal > 0 else 1.0
    return DCGResult(float(dcg), float(ideal), float(normalized))
