"""Cluster-based exemplar selection and the cross-task replay buffer."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, FormatError, IntegrityError

DEFAULT_CLUSTERS = 3


@dataclass
class ClusterResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    history: list[float] = field(default_factory=list)
    n_iter: int = 0

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=len(self.centroids))


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # ||x||^2 - 2 x.c + ||c||^2, clipped against cancellation
    d = (x ** 2).sum(1)[:, None] - 2.0 * x @ centroids.T + (centroids ** 2).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centroids = [x[rng.integers(len(x))]]
    closest = _sq_dists(x, np.array(centroids))[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = int(rng.integers(len(x)))
        else:
            idx = int(rng.choice(len(x), p=closest / total))
        centroids.append(x[idx])
        closest = np.minimum(closest, _sq_dists(x, x[idx:idx + 1])[:, 0])
    return np.array(centroids)


def _assign(x: np.ndarray, centroids: np.ndarray):
    centroids = centroids.copy()
    d = _sq_dists(x, centroids)
    assign = d.argmin(1)
    for j in range(len(centroids)):
        if not np.any(assign == j):
            far = int(d[np.arange(len(x)), assign].argmax())
            centroids[j] = x[far]
            d = _sq_dists(x, centroids)
            assign = d.argmin(1)
            assign[far] = j
    return centroids, assign, d[np.arange(len(x)), assign]


def kmeans(data, n_clusters: int = DEFAULT_CLUSTERS, seed: int = 0,
           max_iter: int = 300, tol: float = 1e-6) -> ClusterResult:
    """Lloyd's EM iterations from a k-means++ start.

    ``history`` records the inertia after every assignment step; it never
    increases. Empty clusters are re-seeded at the point farthest from its centroid.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise ArgumentError(f"kmeans expects a 2-D matrix, got shape {x.shape}")
    if n_clusters < 1 or len(x) < n_clusters:
        raise ArgumentError(f"need at least P={n_clusters} rows, got {len(x)}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, n_clusters, rng)
    history: list[float] = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        centroids, assign, point_d = _assign(x, centroids)
        inertia = float(point_d.sum())
        if history and inertia > history[-1] * (1 + 1e-12) + 1e-12:
            raise AssertionError(f"kmeans inertia increased at iteration {n_iter}")
        history.append(inertia)
        centroids = np.stack([x[assign == j].mean(0) for j in range(n_clusters)])
        if len(history) > 1 and history[-2] - inertia <= tol * max(history[-2], 1e-300):
            break
    centroids, assign, point_d = _assign(x, centroids)
    centroids = np.stack([x[assign == j].mean(0) for j in range(n_clusters)])
    inertia = float(((x - centroids[assign]) ** 2).sum())
    return ClusterResult(assign, centroids, inertia, history, n_iter)


def exemplar_counts(cluster_sizes) -> list[int]:
    """One percent of each cluster, at least one row: max(1, floor(M_i / 100))."""
    return [max(1, int(m) // 100) if m > 0 else 0 for m in cluster_sizes]


@dataclass
class ExemplarSelection:
    rows: np.ndarray  # indices into the clustered data
    counts: list[int]
    clusters: np.ndarray  # cluster id per selected row
    distances: np.ndarray  # euclidean distance to its centroid

    @property
    def n(self) -> int:
        return int(sum(self.counts))


def select_exemplars(data, cluster: ClusterResult) -> ExemplarSelection:
    """Rows nearest each centroid, ascending distance, ties broken by row index."""
    x = np.asarray(data, dtype=np.float64)
    counts = exemplar_counts(cluster.sizes())
    rows, cl, dist = [], [], []
    for j, count in enumerate(counts):
        members = np.flatnonzero(cluster.assignments == j)
        dj = np.sqrt(((x[members] - cluster.centroids[j]) ** 2).sum(1))
        order = np.lexsort((members, dj))[:count]
        rows.append(members[order])
        cl.append(np.full(len(order), j))
        dist.append(dj[order])
    return ExemplarSelection(np.concatenate(rows), counts, np.concatenate(cl), np.concatenate(dist))


@dataclass(frozen=True)
class Provenance:
    task: int
    source_index: int
    cluster: int
    distance: float


@dataclass
class ReplayBuffer:
    """Unbounded union of per-task exemplar sets."""

    vectors: np.ndarray | None = None
    provenance: list[Provenance] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.provenance)

    @property
    def tasks(self) -> list[int]:
        return sorted({p.task for p in self.provenance})

    def rows_for_task(self, task: int) -> np.ndarray:
        mask = np.array([p.task == task for p in self.provenance], dtype=bool)
        return self.vectors[mask]

    def save(self, path) -> Path:
        path = Path(path).with_suffix(".bsq")
        path.parent.mkdir(parents=True, exist_ok=True)
        vec = self.vectors if self.vectors is not None else np.zeros((0, 0), np.float32)
        path.write_bytes(np.ascontiguousarray(vec, dtype="<f4").tobytes())
        meta = {
            "rows": int(vec.shape[0]),
            "cols": int(vec.shape[1]) if vec.ndim == 2 else 0,
            "provenance": [[p.task, p.source_index, p.cluster, p.distance] for p in self.provenance],
        }
        path.with_suffix(".json").write_text(json.dumps(meta) + "\n")
        return path

    @classmethod
    def load(cls, path) -> ReplayBuffer:
        path = Path(path).with_suffix(".bsq")
        meta = json.loads(path.with_suffix(".json").read_text())
        raw = path.read_bytes()
        if len(raw) != meta["rows"] * meta["cols"] * 4:
            raise FormatError(f"{path}: payload does not match {meta['rows']}x{meta['cols']}")
        prov = [Provenance(int(t), int(i), int(c), float(d)) for t, i, c, d in meta["provenance"]]
        if not prov:
            return cls()
        vec = np.frombuffer(raw, dtype="<f4").reshape(meta["rows"], meta["cols"]).copy()
        return cls(vec, prov)


def update_buffer(buffer: ReplayBuffer, task: int, vectors, source_indices,
                  selection: ExemplarSelection) -> ReplayBuffer:
    """Return ``buffer`` united with this task's exemplars.

    ``vectors`` are the selected rows; ``source_indices`` their pixel indices.
    """
    vectors = np.asarray(vectors, dtype=np.float32)
    source_indices = np.asarray(source_indices, dtype=np.int64)
    if len(vectors) != len(selection.rows) or len(source_indices) != len(selection.rows):
        raise ArgumentError("selection, vectors and indices disagree in length")
    if task in buffer.tasks:
        raise IntegrityError(f"task {task} already present in the replay buffer")
    if np.unique(source_indices).size != source_indices.size:
        raise IntegrityError(f"duplicate source index within task {task}")
    new_prov = [Provenance(int(task), int(i), int(c), float(d))
                for i, c, d in zip(source_indices, selection.clusters, selection.distances)]
    if buffer.vectors is None or len(buffer) == 0:
        merged = vectors.copy()
    else:
        if buffer.vectors.shape[1] != vectors.shape[1]:
            raise ArgumentError("exemplar width differs from buffer width")
        merged = np.concatenate([buffer.vectors, vectors])
    return ReplayBuffer(merged, [*buffer.provenance, *new_prov])
