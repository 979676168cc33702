"""Clustering and the NMI / ACC / ARI evaluation triple.

Also hosts the Hungarian solver used both for ACC and for re-aligning
unaligned instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError


# ---------------------------------------------------------------------------
# assignment
# ---------------------------------------------------------------------------

def hungarian(cost) -> np.ndarray:
    """Minimum-cost perfect matching on a square matrix.

    Returns ``perm`` with row ``i`` assigned to column ``perm[i]``. This is the
    O(n^3) shortest-augmenting-path form with row/column potentials. Rows are
    inserted in index order and ties go to the lowest column index, so the
    result is deterministic.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise DimensionError(f"hungarian needs a square matrix, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite entries")
    n = cost.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)

    # 1-based bookkeeping: column 0 is the virtual source.
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    row_of = np.zeros(n + 1, dtype=np.int64)   # row_of[j]: row matched to column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        row_of[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of[j0]
            free = ~used[1:]
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[row_of[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if row_of[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            row_of[j0] = row_of[j1]
            j0 = j1

    perm = np.zeros(n, dtype=np.int64)
    perm[row_of[1:] - 1] = np.arange(n)
    return perm


def assignment_cost(cost, perm) -> float:
    cost = np.asarray(cost, dtype=np.float64)
    return float(cost[np.arange(len(perm)), perm].sum())


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------

@dataclass
class KMeansResult:
    assignments: np.ndarray
    inertia: float
    centers: np.ndarray
    history: list[float] = field(default_factory=list)


def _sq_dists(x, centers):
    d = (x * x).sum(1)[:, None] - 2.0 * x @ centers.T + (centers * centers).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeans_pp(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = ((x - centers[0]) ** 2).sum(1)
    for c in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[c] = x[idx]
        closest = np.minimum(closest, ((x - centers[c]) ** 2).sum(1))
    return centers


def _lloyd(x, centers, max_iter, tol):
    k = centers.shape[0]
    history = []
    prev = None
    for _ in range(max_iter):
        d = _sq_dists(x, centers)
        assign = np.argmin(d, axis=1)
        point_cost = d[np.arange(x.shape[0]), assign]
        inertia = float(point_cost.sum())
        history.append(inertia)
        if prev is not None and (prev - inertia) <= tol * max(prev, 1e-300):
            break
        prev = inertia
        counts = np.bincount(assign, minlength=k)
        new = np.zeros_like(centers)
        np.add.at(new, assign, x)
        nonempty = counts > 0
        new[nonempty] /= counts[nonempty, None]
        for c in np.flatnonzero(~nonempty):
            # re-seed an empty cluster at the point farthest from its center
            far = int(np.argmax(point_cost))
            new[c] = x[far]
            point_cost[far] = 0.0
        centers = new
    d = _sq_dists(x, centers)
    assign = np.argmin(d, axis=1)
    inertia = float(d[np.arange(x.shape[0]), assign].sum())
    if inertia < history[-1]:
        history.append(inertia)
    else:
        inertia = history[-1]
    return assign, inertia, centers, history


def kmeans(x, k: int, seed=0, restarts: int = 10, max_iter: int = 300, tol: float = 1e-6) -> KMeansResult:
    """k-means++ seeding and Lloyd iterations, best of ``restarts`` by inertia."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    best = None
    for child in np.random.SeedSequence(seed).spawn(restarts):
        rng = np.random.default_rng(child)
        centers = _kmeans_pp(x, k, rng)
        assign, inertia, centers, history = _lloyd(x, centers, max_iter, tol)
        if best is None or inertia < best.inertia:
            best = KMeansResult(assign.astype(np.int64), inertia, centers, history)
    return best


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def contingency(a, b) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("label vectors differ in length")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def _entropy(counts) -> float:
    counts = counts[counts > 0].astype(np.float64)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


def _same_partition(table) -> bool:
    return table.shape[0] == table.shape[1] and np.all((table > 0).sum(0) == 1) \
        and np.all((table > 0).sum(1) == 1)


def nmi(labels_a, labels_b, average: str = "arithmetic") -> float:
    """Normalized mutual information (natural log).

    ``average="arithmetic"`` gives 2 I / (H_a + H_b); ``"geometric"`` gives
    I / sqrt(H_a H_b). Identical partitions score exactly 1; if either
    partition has zero entropy and they differ, the score is 0.
    """
    table = contingency(labels_a, labels_b)
    if _same_partition(table):
        return 1.0
    n = table.sum()
    h_a = _entropy(table.sum(1))
    h_b = _entropy(table.sum(0))
    if h_a == 0.0 or h_b == 0.0:
        return 0.0
    nz = table > 0
    pij = table[nz] / n
    pa = (table.sum(1) / n)[:, None].repeat(table.shape[1], 1)[nz]
    pb = (table.sum(0) / n)[None, :].repeat(table.shape[0], 0)[nz]
    mi = float((pij * np.log(pij / (pa * pb))).sum())
    if average == "arithmetic":
        denom = (h_a + h_b) / 2.0
    elif average == "geometric":
        denom = np.sqrt(h_a * h_b)
    else:
        raise ValueError(f"unknown average {average!r}")
    return float(min(max(mi / denom, 0.0), 1.0))


def acc(true_labels, assignments) -> float:
    """Best-mapping clustering accuracy via Hungarian on the contingency table."""
    table = contingency(assignments, true_labels)
    size = max(table.shape)
    padded = np.zeros((size, size), dtype=np.float64)
    padded[:table.shape[0], :table.shape[1]] = table
    perm = hungarian(padded.max() - padded)
    return float(padded[np.arange(size), perm].sum() / table.sum())


def _comb2(counts) -> int:
    return sum(int(c) * (int(c) - 1) // 2 for c in np.ravel(counts))


def ari(labels_a, labels_b) -> float:
    """Adjusted Rand index from pair counts.

    Evaluated in integer arithmetic, so only the final division rounds.
    """
    table = contingency(labels_a, labels_b)
    pairs = _comb2([table.sum()])
    index = _comb2(table)
    sum_a = _comb2(table.sum(1))
    sum_b = _comb2(table.sum(0))
    num = 2 * (index * pairs - sum_a * sum_b)
    den = (sum_a + sum_b) * pairs - 2 * sum_a * sum_b
    if den == 0:
        return 1.0
    return num / den


@dataclass
class ClusterReport:
    assignments: np.ndarray
    nmi: float
    acc: float
    ari: float
    k: int
    seed: int
    inertia: float

    def metrics(self) -> dict:
        return {"nmi": self.nmi, "acc": self.acc, "ari": self.ari}


def cluster_and_score(latents, labels, k: int, seed=0, restarts: int = 10) -> ClusterReport:
    result = kmeans(latents, k, seed=seed, restarts=restarts)
    return ClusterReport(result.assignments, nmi(labels, result.assignments),
                         acc(labels, result.assignments), ari(labels, result.assignments),
                         k, int(seed), result.inertia)
