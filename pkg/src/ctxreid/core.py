"""Shared data model: instances, scenes, the feature memory and cluster partitions.

Every stored feature is L2-normalized so inner products are cosine similarities.
Memory slots are addressed by row index; ``FeatureMemory.ids`` maps a slot back
to its instance id.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

NORM_TOL = 1e-6
UNCLUSTERED = -1


class ZeroNormError(ValueError):
    pass


class DegenerateCentroidError(ValueError):
    pass


def normalize(feature) -> np.ndarray:
    v = np.asarray(feature, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("feature has non-finite entries")
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ZeroNormError("zero norm")
    return v / n


def normalize_rows(mat) -> np.ndarray:
    m = np.asarray(mat, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise ValueError("features have non-finite entries")
    n = np.linalg.norm(m, axis=-1, keepdims=True)
    if np.any(n == 0.0):
        raise ZeroNormError("zero norm")
    return m / n


def centroid(members) -> np.ndarray:
    """L2-normalized arithmetic mean of a nonempty set of unit vectors."""
    m = np.atleast_2d(np.asarray(members, dtype=np.float64))
    if m.shape[0] == 0 or m.size == 0:
        raise ValueError("empty member set")
    mean = m.mean(axis=0)
    n = np.linalg.norm(mean)
    # antipodal members cancel to (numerically) nothing
    if n <= 1e-12:
        raise DegenerateCentroidError("degenerate centroid")
    return mean / n


def is_unit(mat, tol: float = NORM_TOL) -> bool:
    n = np.linalg.norm(np.atleast_2d(mat), axis=-1)
    return bool(np.all(np.abs(n - 1.0) <= tol))


@dataclass(frozen=True)
class Instance:
    instance_id: int
    scene_id: int
    feature: np.ndarray
    truth_identity: int | None = None

    def __post_init__(self):
        f = np.asarray(self.feature, dtype=np.float64)
        if f.ndim != 1 or not np.all(np.isfinite(f)):
            raise ValueError(f"instance {self.instance_id}: feature must be a finite vector")
        object.__setattr__(self, "feature", f)

    @property
    def dims(self) -> int:
        return self.feature.shape[0]


@dataclass(frozen=True)
class SceneIndex:
    """scene id -> ordered instance ids. Each instance belongs to exactly one scene."""

    scenes: Mapping[int, tuple[int, ...]]

    def __post_init__(self):
        seen: set[int] = set()
        frozen = {}
        for sid in sorted(self.scenes):
            ids = tuple(int(i) for i in self.scenes[sid])
            for i in ids:
                if i in seen:
                    raise ValueError(f"instance {i} appears in more than one scene")
                seen.add(i)
            frozen[int(sid)] = ids
        object.__setattr__(self, "scenes", frozen)

    @classmethod
    def from_instances(cls, instances: Iterable[Instance]) -> "SceneIndex":
        scenes: dict[int, list[int]] = {}
        for inst in instances:
            scenes.setdefault(inst.scene_id, []).append(inst.instance_id)
        return cls({k: tuple(v) for k, v in scenes.items()})

    @property
    def scene_count(self) -> int:
        return len(self.scenes)

    @property
    def instance_count(self) -> int:
        return sum(len(v) for v in self.scenes.values())

    def scene_of(self) -> dict[int, int]:
        return {i: sid for sid, ids in self.scenes.items() for i in ids}


@dataclass
class FeatureMemory:
    """N_a unit-norm slots of dimension D, plus the current per-slot cluster id.

    Single writer: only ``update_slot`` (driven by the training loop) mutates
    ``features`` in place.
    """

    ids: np.ndarray
    features: np.ndarray
    assignment: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.features = np.array(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] != self.ids.shape[0]:
            raise ValueError("features must be (N_a, D) aligned with ids")
        if len(set(self.ids.tolist())) != self.ids.shape[0]:
            raise ValueError("duplicate instance ids in memory")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("memory features must be finite")
        if not is_unit(self.features):
            raise ValueError("memory slots must be L2-normalized")
        if self.assignment is None:
            self.assignment = np.full(self.count, UNCLUSTERED, dtype=np.int64)
        else:
            self.assignment = np.asarray(self.assignment, dtype=np.int64)
            if self.assignment.shape != (self.count,):
                raise ValueError("assignment must have one entry per slot")

    @property
    def count(self) -> int:
        return self.features.shape[0]

    @property
    def dims(self) -> int:
        return self.features.shape[1]

    def slot_of(self) -> dict[int, int]:
        return {int(i): s for s, i in enumerate(self.ids)}

    def copy(self) -> "FeatureMemory":
        return FeatureMemory(self.ids.copy(), self.features.copy(), self.assignment.copy())

    def assign(self, clusters: "ClusterSet") -> None:
        self.assignment = clusters.labels(self.count)

    def update_slot(self, slot: int, x: np.ndarray, gamma: float) -> None:
        """EMA pull of one slot toward ``x``, followed by renormalization."""
        if not 0 <= slot < self.count:
            raise IndexError(f"invalid memory slot {slot}")
        if not 0.0 <= gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if gamma == 1.0:
            return  # full momentum: the slot is left bit-for-bit unchanged
        v = gamma * self.features[slot] + (1.0 - gamma) * np.asarray(x, dtype=np.float64)
        self.features[slot] = normalize(v)


@dataclass(frozen=True)
class ClusterSet:
    """Partition of memory slots into clusters with normalized-mean centroids.

    ``clusters[j]`` is a sorted tuple of slot indices; the cluster id is ``j``.
    ``raw_count`` and ``evictions`` record how many clusters the density pass
    produced and how many members the scene pass split off (0 when it did not run).
    """

    clusters: tuple[tuple[int, ...], ...]
    centroids: np.ndarray
    epoch: int = 0
    raw_count: int | None = None
    evictions: int = 0

    def __post_init__(self):
        cl = tuple(tuple(sorted(int(s) for s in c)) for c in self.clusters)
        seen: set[int] = set()
        for c in cl:
            if not c:
                raise ValueError("empty cluster")
            for s in c:
                if s in seen:
                    raise ValueError(f"slot {s} is in more than one cluster")
                seen.add(s)
        cen = np.asarray(self.centroids, dtype=np.float64)
        if cen.ndim != 2 or cen.shape[0] != len(cl):
            raise ValueError("need one centroid per cluster")
        object.__setattr__(self, "clusters", cl)
        object.__setattr__(self, "centroids", cen)
        if self.raw_count is None:
            object.__setattr__(self, "raw_count", len(cl))

    @classmethod
    def from_members(cls, clusters: Sequence[Iterable[int]], features: np.ndarray, **kw) -> "ClusterSet":
        cl = [tuple(sorted(int(s) for s in c)) for c in clusters]
        return cls(tuple(cl), compute_centroids(cl, features), **kw)

    @classmethod
    def from_labels(cls, labels: Sequence[int], features: np.ndarray, **kw) -> "ClusterSet":
        """Group slots by label; UNCLUSTERED slots become singletons after the labelled clusters."""
        groups: dict[int, list[int]] = {}
        singles = []
        for s, lab in enumerate(labels):
            if lab == UNCLUSTERED:
                singles.append([s])
            else:
                groups.setdefault(int(lab), []).append(s)
        cl = [groups[k] for k in sorted(groups)] + singles
        return cls.from_members(cl, features, **kw)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def labels(self, n_slots: int) -> np.ndarray:
        lab = np.full(n_slots, UNCLUSTERED, dtype=np.int64)
        for j, c in enumerate(self.clusters):
            lab[list(c)] = j
        return lab

    def refreshed(self, features: np.ndarray) -> "ClusterSet":
        """Same partition, centroids recomputed from ``features``."""
        return ClusterSet(self.clusters, compute_centroids(self.clusters, features),
                          self.epoch, self.raw_count, self.evictions)

    def check_centroids(self, features: np.ndarray, tol: float = NORM_TOL) -> bool:
        fresh = compute_centroids(self.clusters, features)
        return bool(np.all(np.abs(fresh - self.centroids) <= tol))


def compute_centroids(clusters: Sequence[Sequence[int]], features: np.ndarray) -> np.ndarray:
    """Vectorized ``centroid`` over every cluster."""
    features = np.asarray(features, dtype=np.float64)
    if not clusters:
        return np.zeros((0, features.shape[1]))
    if any(len(c) == 0 for c in clusters):
        raise ValueError("empty cluster")
    slots = np.concatenate([np.asarray(c, dtype=np.int64) for c in clusters])
    lab = np.repeat(np.arange(len(clusters)), [len(c) for c in clusters])
    sums = np.zeros((len(clusters), features.shape[1]))
    np.add.at(sums, lab, features[slots])
    n = np.linalg.norm(sums, axis=1)
    if np.any(n <= 1e-12):
        bad = int(np.argmax(n <= 1e-12))
        raise DegenerateCentroidError(f"degenerate centroid for cluster {bad}")
    return sums / n[:, None]


@dataclass(frozen=True)
class BatchSample:
    """Foreground proposals grouped by source instance, plus background features.

    ``groups[i]`` is the instance id of foreground row ``i``; ``proposal[i]`` its
    index within that instance (0 is the canonical proposal).
    """

    foreground: np.ndarray
    groups: np.ndarray
    background: np.ndarray
    proposal: np.ndarray | None = None

    def __post_init__(self):
        fg = np.atleast_2d(np.asarray(self.foreground, dtype=np.float64))
        g = np.asarray(self.groups, dtype=np.int64)
        bg = np.asarray(self.background, dtype=np.float64).reshape(-1, fg.shape[1])
        if g.shape != (fg.shape[0],):
            raise ValueError("one group id per foreground feature")
        for name, m in (("foreground", fg), ("background", bg)):
            if m.size and (not np.all(np.isfinite(m)) or not is_unit(m)):
                raise ValueError(f"{name} features must be finite and L2-normalized")
        prop = self.proposal
        if prop is None:
            prop = np.zeros_like(g)
            for gid in np.unique(g):
                idx = np.flatnonzero(g == gid)
                prop[idx] = np.arange(idx.size)
        object.__setattr__(self, "foreground", fg)
        object.__setattr__(self, "groups", g)
        object.__setattr__(self, "background", bg)
        object.__setattr__(self, "proposal", np.asarray(prop, dtype=np.int64))

    @property
    def n_x(self) -> int:
        return self.foreground.shape[0]

    @property
    def n_b(self) -> int:
        return self.background.shape[0]
