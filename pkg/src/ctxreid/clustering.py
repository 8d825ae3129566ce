"""Density clustering of memory features and the one-person-per-image split."""

from __future__ import annotations

import logging
from collections import Counter, deque
from dataclasses import dataclass

import numpy as np

from .core import UNCLUSTERED, ClusterSet, FeatureMemory, SceneIndex

logger = logging.getLogger(__name__)

_CHUNK = 2048
TIE_TOL = 1e-12


@dataclass(frozen=True)
class DbscanParams:
    """Cosine-distance DBSCAN settings. ``min_points`` counts the point itself."""

    epsilon: float = 0.7
    min_points: int = 2

    def __post_init__(self):
        if not 0.0 < self.epsilon < 2.0:
            raise ValueError("epsilon must lie in (0, 2)")
        if int(self.min_points) != self.min_points or self.min_points < 1:
            raise ValueError("min_points must be an integer >= 1")


@dataclass(frozen=True)
class TrajectoryRow:
    epoch: int
    n_clusters_raw: int
    n_clusters_after_scene_constraint: int
    n_evictions: int


def neighbourhoods(features: np.ndarray, epsilon: float) -> list[np.ndarray]:
    """Slots within cosine distance ``epsilon`` of each slot (self included), ascending."""
    n = features.shape[0]
    out: list[np.ndarray] = []
    thresh = 1.0 - epsilon
    for lo in range(0, n, _CHUNK):
        sims = features[lo:lo + _CHUNK] @ features.T
        for row in sims:
            out.append(np.flatnonzero(row >= thresh))
    return out


def dbscan_labels(features: np.ndarray, params: DbscanParams) -> np.ndarray:
    """Plain DBSCAN labels (UNCLUSTERED for noise).

    Seeds are visited in slot order and each cluster is grown breadth-first,
    so a border point reachable from two clusters joins the one seeded first.
    """
    n = features.shape[0]
    nbrs = neighbourhoods(features, params.epsilon)
    core = np.array([len(nb) >= params.min_points for nb in nbrs], dtype=bool)
    labels = np.full(n, UNCLUSTERED, dtype=np.int64)
    current = 0
    for seed in range(n):
        if labels[seed] != UNCLUSTERED or not core[seed]:
            continue
        labels[seed] = current
        queue = deque([seed])
        while queue:
            p = queue.popleft()
            if not core[p]:
                continue
            for q in nbrs[p]:
                if labels[q] == UNCLUSTERED:
                    labels[q] = current
                    queue.append(q)
        current += 1
    return labels


def dbscan(memory: FeatureMemory, params: DbscanParams) -> ClusterSet:
    """DBSCAN over the memory; every noise slot is promoted to a singleton cluster."""
    if memory.count == 0:
        raise ValueError("memory is empty")
    labels = dbscan_labels(memory.features, params)
    return ClusterSet.from_labels(labels, memory.features)


def apply_scene_constraint(clusters: ClusterSet, scenes: SceneIndex,
                           memory: FeatureMemory) -> ClusterSet:
    """Split clusters so that no two members come from the same scene.

    In each (cluster, scene) collision group the member most similar to the
    input cluster's centroid stays (ties, up to ``TIE_TOL``: lower instance id); the rest become
    singleton clusters appended after the surviving clusters. Centroids are
    recomputed once, after the full pass.
    """
    scene_of = scenes.scene_of()
    ids = memory.ids
    kept: list[list[int]] = []
    evicted: list[list[int]] = []
    for j, members in enumerate(clusters.clusters):
        c = clusters.centroids[j]
        by_scene: dict[int, list[int]] = {}
        for s in members:
            by_scene.setdefault(scene_of[int(ids[s])], []).append(s)
        keep = []
        for sid in sorted(by_scene):
            group = by_scene[sid]
            if len(group) == 1:
                keep.append(group[0])
                continue
            sims = memory.features[group] @ c
            # similarities within TIE_TOL of the best are ties, so the choice
            # does not hinge on last-bit rounding of the product
            near = [k for k in range(len(group)) if sims[k] >= sims.max() - TIE_TOL]
            best = min(near, key=lambda k: ids[group[k]])
            keep.append(group[best])
            evicted.extend([s] for k, s in enumerate(group) if k != best)
        kept.append(keep)
    return ClusterSet.from_members(kept + evicted, memory.features, epoch=clusters.epoch,
                                   raw_count=clusters.raw_count, evictions=len(evicted))


def recluster_epoch(memory: FeatureMemory, scenes: SceneIndex, params: DbscanParams,
                    use_scene_context: bool, epoch: int = 0) -> ClusterSet:
    raw = dbscan(memory, params)
    out = apply_scene_constraint(raw, scenes, memory) if use_scene_context else raw
    out = ClusterSet(out.clusters, out.centroids, epoch, raw.n_clusters, out.evictions)
    logger.info("epoch %d: %d clusters (%d raw, %d evicted)", epoch, out.n_clusters,
                out.raw_count, out.evictions)
    return out


def trajectory_row(clusters: ClusterSet) -> TrajectoryRow:
    return TrajectoryRow(clusters.epoch, clusters.raw_count, clusters.n_clusters, clusters.evictions)


def scene_violations(clusters: ClusterSet, scenes: SceneIndex, memory: FeatureMemory) -> int:
    """Number of (cluster, scene) pairs holding more than one member."""
    scene_of = scenes.scene_of()
    bad = 0
    for members in clusters.clusters:
        counts = Counter(scene_of[int(memory.ids[s])] for s in members)
        bad += sum(1 for n in counts.values() if n > 1)
    return bad
