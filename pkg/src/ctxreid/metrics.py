"""Pseudo-label quality against hidden truth, and cosine-ranking retrieval scores."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class ClusteringScore:
    pairwise_precision: float
    pairwise_recall: float
    pairwise_f: float
    nmi: float
    n_clusters: int


@dataclass(frozen=True)
class RetrievalScore:
    map: float
    top1: float


def _aligned(assignment, truth) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(assignment, Mapping) or isinstance(truth, Mapping):
        if not (isinstance(assignment, Mapping) and isinstance(truth, Mapping)):
            raise TypeError("pass both labelings as mappings or both as sequences")
        if set(assignment) != set(truth):
            raise ValueError("assignment and truth cover different instance sets")
        keys = sorted(assignment)
        return (np.array([assignment[k] for k in keys]), np.array([truth[k] for k in keys]))
    a, t = np.asarray(assignment), np.asarray(truth)
    if a.shape != t.shape:
        raise ValueError("assignment and truth cover different instance sets")
    return a, t


def _pairs(n: np.ndarray) -> float:
    return float((n * (n - 1) // 2).sum())


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def pairwise_scores(assignment, truth) -> ClusteringScore:
    """Pair-counting precision/recall/F plus arithmetic-mean NMI.

    Empty denominators count as perfect: no claimed merges gives precision 1,
    no repeated identity gives recall 1.
    """
    a, t = _aligned(assignment, truth)
    if a.size < 2:
        raise ValueError("need at least 2 instances")
    _, ai = np.unique(a, return_inverse=True)
    _, ti = np.unique(t, return_inverse=True)
    table = np.zeros((ai.max() + 1, ti.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, ti), 1)

    both = _pairs(table)
    same_cluster = _pairs(table.sum(axis=1))
    same_id = _pairs(table.sum(axis=0))
    precision = both / same_cluster if same_cluster else 1.0
    recall = both / same_id if same_id else 1.0
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0

    n = a.size
    ha = _entropy(table.sum(axis=1), n)
    ht = _entropy(table.sum(axis=0), n)
    nz = table > 0
    pij = table[nz] / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))[nz] / n**2
    mi = float((pij * np.log(pij / outer)).sum())
    if ha == 0.0 and ht == 0.0:
        nmi = 1.0
    else:
        nmi = min(1.0, max(0.0, mi / ((ha + ht) / 2)))
    return ClusteringScore(precision, recall, f, nmi, int(table.shape[0]))


def cross_identity_merge_rate(assignment, truth) -> float:
    """Fraction of different-identity pairs that share a cluster (0 when there are none)."""
    a, t = _aligned(assignment, truth)
    _, ai = np.unique(a, return_inverse=True)
    _, ti = np.unique(t, return_inverse=True)
    table = np.zeros((ai.max() + 1, ti.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, ti), 1)
    cross = a.size * (a.size - 1) // 2 - _pairs(table.sum(axis=0))
    merged = _pairs(table.sum(axis=1)) - _pairs(table)
    return merged / cross if cross else 0.0


def average_precision(relevant: Sequence[bool]) -> float:
    """Mean of precision@rank over the relevant positions of a ranked list."""
    rel = np.asarray(relevant, dtype=bool)
    hits = np.flatnonzero(rel)
    if hits.size == 0:
        return 0.0
    return float(np.mean(np.arange(1, hits.size + 1) / (hits + 1)))


def retrieval_scores(query_features, query_ids, gallery_features, gallery_ids) -> RetrievalScore:
    """mAP and top-1 with gallery ranked by descending cosine similarity (stable on index)."""
    q = np.atleast_2d(np.asarray(query_features, dtype=np.float64))
    g = np.atleast_2d(np.asarray(gallery_features, dtype=np.float64))
    qid, gid = np.asarray(query_ids), np.asarray(gallery_ids)
    if q.shape[0] != qid.size or g.shape[0] != gid.size:
        raise ValueError("features and identities must align")
    missing = sorted(set(qid.tolist()) - set(gid.tolist()))
    if missing:
        raise ValueError(f"query identities absent from gallery: {missing}")
    qn = q / np.linalg.norm(q, axis=1, keepdims=True)
    gn = g / np.linalg.norm(g, axis=1, keepdims=True)
    sims = qn @ gn.T
    aps, top1 = [], []
    for i in range(q.shape[0]):
        order = np.argsort(-sims[i], kind="stable")
        rel = gid[order] == qid[i]
        aps.append(average_precision(rel))
        top1.append(bool(rel[0]))
    return RetrievalScore(float(np.mean(aps)), float(np.mean(top1)))


def memory_retrieval_split(ids, truth) -> tuple[np.ndarray, np.ndarray]:
    """Query/gallery slot split over a labelled memory.

    For every identity with at least two instances, the instance with the
    lowest id is a query; every other slot is gallery.
    """
    ids, truth = np.asarray(ids), np.asarray(truth)
    queries = []
    for ident in np.unique(truth):
        slots = np.flatnonzero(truth == ident)
        if slots.size >= 2:
            queries.append(int(slots[np.argmin(ids[slots])]))
    queries = np.array(sorted(queries), dtype=np.int64)
    gallery = np.setdiff1d(np.arange(ids.size), queries)
    return queries, gallery


def memory_retrieval(features, ids, truth) -> RetrievalScore:
    q, g = memory_retrieval_split(ids, truth)
    if q.size == 0:
        return RetrievalScore(1.0, 1.0)
    truth = np.asarray(truth)
    features = np.asarray(features)
    return retrieval_scores(features[q], truth[q], features[g], truth[g])
