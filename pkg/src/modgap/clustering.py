"""Group-wise evaluation over the pooled multimodal cloud: k-means with
k-means++ seeding, V-Measure, and leave-one-out kNN accuracy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import KOutOfRange, LengthMismatch, MissingLabels, TooFewPoints
from .losses import MultimodalBatch
from .numerics import as_matrix, normalize_rows, pairwise_sq_dist, spawn_rngs

KMEANS_TOL = 1e-6


@dataclass
class PooledCloud:
    """All modalities' embeddings stacked into one point set.

    Row m*N + i holds sample i of modality m; labels repeat each sample's
    class once per modality, so the cloud can be scored as a single
    labeled clustering problem.
    """

    points: np.ndarray
    labels: np.ndarray
    modality_of: np.ndarray


def build_pooled_cloud(batch: MultimodalBatch) -> PooledCloud:
    if batch.labels is None:
        raise MissingLabels("pooled cloud needs per-sample class labels")
    points = np.concatenate(batch.embeddings, axis=0)
    labels = np.concatenate([batch.labels] * batch.num_modalities)
    modality_of = np.repeat(np.arange(batch.num_modalities), batch.num_samples)
    return PooledCloud(points, labels, modality_of)


@dataclass
class ClusteringResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = points[first]
    d2 = pairwise_sq_dist(points, centroids[0:1])[:, 0]
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining mass on duplicates of chosen centers
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[c] = points[idx]
        d2 = np.minimum(d2, pairwise_sq_dist(points, centroids[c:c + 1])[:, 0])
    return centroids


def _lloyd(points: np.ndarray, centroids: np.ndarray, max_iter: int) -> ClusteringResult:
    k = centroids.shape[0]
    for _ in range(max_iter):
        d2 = pairwise_sq_dist(points, centroids)
        assign = d2.argmin(axis=1)
        new_centroids = centroids.copy()
        empty = [c for c in range(k) if not (assign == c).any()]
        if empty:
            # re-seed empty clusters at the points farthest from their centroid
            dist_to_own = d2[np.arange(points.shape[0]), assign]
            farthest = np.argsort(-dist_to_own)[: len(empty)]
            for c, idx in zip(empty, farthest):
                new_centroids[c] = points[idx]
        for c in range(k):
            if c in empty:
                continue
            members = points[assign == c]
            new_centroids[c] = members.mean(axis=0)
        move = float(np.linalg.norm(new_centroids - centroids, axis=1).max())
        centroids = new_centroids
        if move < KMEANS_TOL:
            break
    d2 = pairwise_sq_dist(points, centroids)
    assign = d2.argmin(axis=1)
    inertia = float(d2[np.arange(points.shape[0]), assign].sum())
    return ClusteringResult(assign, centroids, inertia)


def kmeans(points, k: int, restarts: int = 10, max_iter: int = 300,
           seed: int = 0) -> ClusteringResult:
    """Lloyd's algorithm with k-means++ seeding, keeping the best inertia
    over independently seeded restarts. Deterministic given the seed."""
    pts = as_matrix(points, "points")
    n = pts.shape[0]
    if k < 1 or k > n:
        raise TooFewPoints(f"k={k} invalid for {n} points")
    best: Optional[ClusteringResult] = None
    for rng in spawn_rngs(seed, restarts):
        init = _kmeans_pp_init(pts, k, rng)
        res = _lloyd(pts, init, max_iter)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def v_measure(labels, assignments) -> tuple[float, float, float]:
    """Homogeneity, completeness, and their harmonic mean, from conditional
    entropies in nats.

    Conventions: homogeneity is 1 when the class entropy is zero,
    completeness is 1 when the cluster entropy is zero, and the harmonic
    mean is 0 when both components are zero.
    """
    lab = np.asarray(labels).ravel()
    asg = np.asarray(assignments).ravel()
    if lab.shape != asg.shape:
        raise LengthMismatch("labels and assignments differ in length")
    if lab.size == 0:
        raise LengthMismatch("need at least one point")
    _, li = np.unique(lab, return_inverse=True)
    _, ai = np.unique(asg, return_inverse=True)
    n_classes = li.max() + 1
    n_clusters = ai.max() + 1
    cont = np.zeros((n_classes, n_clusters))
    np.add.at(cont, (li, ai), 1.0)
    n = cont.sum()
    h_c = _entropy(cont.sum(axis=1))
    h_k = _entropy(cont.sum(axis=0))
    # conditional entropies H(C|K) and H(K|C)
    h_c_given_k = 0.0
    h_k_given_c = 0.0
    for j in range(n_clusters):
        col = cont[:, j]
        if col.sum() > 0:
            h_c_given_k += (col.sum() / n) * _entropy(col)
    for i in range(n_classes):
        row = cont[i, :]
        if row.sum() > 0:
            h_k_given_c += (row.sum() / n) * _entropy(row)
    h = 1.0 if h_c == 0 else 1.0 - h_c_given_k / h_c
    c = 1.0 if h_k == 0 else 1.0 - h_k_given_c / h_k
    v = 0.0 if (h + c) == 0 else 2.0 * h * c / (h + c)
    return float(h), float(c), float(v)


def knn_accuracy(cloud: PooledCloud, k: int = 10) -> float:
    """Leave-one-out k-nearest-neighbour accuracy on the pooled cloud with
    cosine distance. Vote ties go to the tied class whose nearest member
    (then lowest index) comes first in the neighbour ordering."""
    n = cloud.points.shape[0]
    if not (1 <= k < n):
        raise KOutOfRange(f"k={k} out of range for {n} points")
    pts = normalize_rows(cloud.points)
    sims = pts @ pts.T
    np.fill_diagonal(sims, -np.inf)
    correct = 0
    labels = cloud.labels
    for i in range(n):
        # stable order: descending similarity, then ascending index
        top = np.argpartition(-sims[i], k - 1)[:k]
        order = top[np.lexsort((top, -sims[i][top]))]
        neigh = labels[order]
        uniq, counts = np.unique(neigh, return_counts=True)
        winners = uniq[counts == counts.max()]
        if winners.size == 1:
            pred = winners[0]
        else:
            tied = set(int(w) for w in winners)
            pred = next(int(l) for l in neigh if int(l) in tied)
        correct += int(pred == labels[i])
    return correct / n


def cluster_eval(batch: MultimodalBatch, k_clusters: int, knn_k: int = 10,
                 seed: int = 0, restarts: int = 10,
                 max_iter: int = 300) -> tuple[float, float]:
    """Pool every modality's embeddings, cluster with k-means, and score
    V-Measure against the class labels plus leave-one-out kNN accuracy."""
    cloud = build_pooled_cloud(batch)
    result = kmeans(cloud.points, k_clusters, restarts=restarts,
                    max_iter=max_iter, seed=seed)
    _, _, v = v_measure(cloud.labels, result.assignments)
    knn = knn_accuracy(cloud, knn_k)
    return v, knn
