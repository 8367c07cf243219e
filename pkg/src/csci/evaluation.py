"""Retrieval metrics under General / CC / SC protocols, and clustering helpers."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np
from sklearn.cluster import DBSCAN, KMeans

from .io import write_csch


class Protocol(str, Enum):
    GENERAL = "general"
    CC = "cc"
    SC = "sc"


class Metric(str, Enum):
    COSINE = "cosine"
    EUCLIDEAN = "euclidean"


class Meta(NamedTuple):
    identity: np.ndarray
    camera: np.ndarray
    clothes: np.ndarray

    @classmethod
    def from_samples(cls, samples) -> "Meta":
        return cls(np.array([s.identity for s in samples]),
                   np.array([s.camera for s in samples]),
                   np.array([s.clothes for s in samples]))


@dataclass
class RankingResult:
    cmc: np.ndarray
    map: float
    valid_queries: int
    num_queries: int

    def rank(self, k: int) -> float:
        # CMC saturates past the gallery size
        return float(self.cmc[min(k, len(self.cmc)) - 1])

    def to_dict(self) -> dict:
        return {"rank1": self.rank(1), "rank5": self.rank(5), "rank10": self.rank(10),
                "map": self.map, "valid_queries": self.valid_queries}


def pairwise_distances(Q, G, metric: Metric = Metric.COSINE) -> np.ndarray:
    Q = np.asarray(Q, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    if Q.shape[1] != G.shape[1]:
        raise ValueError("query and gallery dimensions differ")
    if Metric(metric) is Metric.COSINE:
        nq = np.linalg.norm(Q, axis=1, keepdims=True)
        ng = np.linalg.norm(G, axis=1, keepdims=True)
        if (nq == 0).any() or (ng == 0).any():
            raise ValueError("zero-norm feature under cosine distance")
        return 1.0 - (Q / nq) @ (G / ng).T
    sq = (Q**2).sum(1)[:, None] + (G**2).sum(1)[None, :] - 2.0 * Q @ G.T
    return np.sqrt(np.maximum(sq, 0.0))


def gallery_keep(q: int, q_meta: Meta, g_meta: Meta, protocol: Protocol) -> np.ndarray:
    """Boolean mask of gallery entries that take part in query ``q``'s ranking."""
    same_id = g_meta.identity == q_meta.identity[q]
    same_cam = g_meta.camera == q_meta.camera[q]
    same_clothes = g_meta.clothes == q_meta.clothes[q]
    keep = ~(same_id & same_cam)
    protocol = Protocol(protocol)
    if protocol is Protocol.CC:
        keep &= ~(same_id & same_clothes)
    elif protocol is Protocol.SC:
        keep &= ~(same_id & ~same_clothes)
    return keep


def cmc_map(dist, q_meta: Meta, g_meta: Meta, protocol: Protocol = Protocol.GENERAL,
            max_rank: int | None = None) -> RankingResult:
    """Single-gallery-shot CMC and mAP; ties keep gallery order.

    Queries with no valid same-identity gallery entry are dropped.
    """
    dist = np.asarray(dist, dtype=np.float64)
    m, n = dist.shape
    K = n if max_rank is None else max_rank
    cmc = np.zeros(K)
    aps = []
    for q in range(m):
        keep = np.flatnonzero(gallery_keep(q, q_meta, g_meta, protocol))
        order = keep[np.argsort(dist[q, keep], kind="stable")]
        hits = g_meta.identity[order] == q_meta.identity[q]
        if not hits.any():
            continue
        first = int(np.argmax(hits))
        if first < K:
            cmc[first:] += 1
        ranks = np.flatnonzero(hits) + 1
        aps.append(float(np.mean(np.arange(1, len(ranks) + 1) / ranks)))
    if not aps:
        raise ValueError("empty evaluation")
    return RankingResult(cmc / len(aps), float(np.mean(aps)), len(aps), m)


def evaluate(q_feats, g_feats, q_meta: Meta, g_meta: Meta, protocol: Protocol = Protocol.CC,
             metric: Metric = Metric.COSINE) -> RankingResult:
    return cmc_map(pairwise_distances(q_feats, g_feats, metric), q_meta, g_meta, protocol)


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    sse: float


def kmeans(vectors, k: int, seed: int = 0, max_iter: int = 300, init=None) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding (or explicit ``init`` centroids)."""
    X = np.asarray(vectors, dtype=np.float64)
    if k > len(X):
        raise ValueError(f"k={k} exceeds the number of vectors ({len(X)})")
    if k < 1:
        raise ValueError("k must be >= 1")
    km = KMeans(n_clusters=k, init="k-means++" if init is None else np.asarray(init, dtype=np.float64),
                n_init=1, max_iter=max_iter, tol=0.0, random_state=seed, algorithm="lloyd")
    km.fit(X)
    return KMeansResult(km.labels_.astype(np.int64), km.cluster_centers_, float(km.inertia_))


def dbscan(vectors, eps: float, min_pts: int) -> np.ndarray:
    """Density clustering on Euclidean distance; noise is labeled -1.

    A point is a core point when at least ``min_pts`` points (itself included)
    lie within ``eps``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    X = np.asarray(vectors, dtype=np.float64)
    return DBSCAN(eps=eps, min_samples=min_pts).fit(X).labels_.astype(np.int64)


def pairwise_agreement(labels_a, labels_b) -> float:
    """Fraction of sample pairs on which two labelings agree about co-membership.

    Noise labels (-1) never count as co-membership.
    """
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    same_a = (a[:, None] == a[None, :]) & (a[:, None] >= 0)
    same_b = (b[:, None] == b[None, :]) & (b[:, None] >= 0)
    iu = np.triu_indices(len(a), k=1)
    return float(np.mean(same_a[iu] == same_b[iu]))


def export_embeddings(model, samples, images, prefix) -> dict[str, str]:
    """Write ``f_reid`` and ``f_co`` as CSCH files plus a JSONL label sidecar."""
    from .model import extract_features

    f_reid, f_co = extract_features(model, images)
    paths = {"reid": f"{prefix}.reid.csch", "labels": f"{prefix}.labels.jsonl"}
    write_csch(paths["reid"], f_reid)
    if f_co is not None:
        paths["co"] = f"{prefix}.co.csch"
        write_csch(paths["co"], f_co)
    with open(paths["labels"], "w", encoding="utf-8") as f:
        for s in samples:
            f.write(json.dumps(s.to_json()) + "\n")
    return paths
