import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import unit_rows
from ctxreid.clustering import (DbscanParams, apply_scene_constraint, dbscan, dbscan_labels,
                                recluster_epoch, scene_violations, trajectory_row)
from ctxreid.core import ClusterSet, FeatureMemory, SceneIndex
from oracles import canonical_partition, reference_dbscan


def memory_of(vectors):
    v = np.asarray(vectors, dtype=float)
    return FeatureMemory(np.arange(len(v)), v / np.linalg.norm(v, axis=1, keepdims=True))


def test_params_validation():
    DbscanParams()
    for bad in (dict(epsilon=0.0), dict(epsilon=2.0), dict(min_points=0), dict(min_points=1.5)):
        with pytest.raises(ValueError):
            DbscanParams(**bad)


def test_three_near_points_form_one_cluster():
    mem = memory_of([[1, 0.1, 0], [1, 0, 0.1], [1, 0.05, 0.05]])
    assert dbscan(mem, DbscanParams(0.7, 2)).clusters == ((0, 1, 2),)


def test_antipodal_points_stay_apart():
    mem = memory_of([[1, 0], [-1, 0]])
    assert dbscan(mem, DbscanParams(0.7, 2)).clusters == ((0,), (1,))


def test_border_point_joins_first_seeded_cluster():
    # points on a circle; 0.3 is a border point for the cores at 0.0 and 0.6
    angles = np.array([-0.3, -0.1, 0.0, 0.3, 0.6, 0.7, 0.9])
    feats = np.column_stack([np.cos(angles), np.sin(angles)])
    params = DbscanParams(1 - np.cos(0.32), 4)
    assert list(dbscan_labels(feats, params)) == [0, 0, 0, 0, 1, 1, 1]
    assert list(dbscan_labels(feats[::-1].copy(), params)) == [0, 0, 0, 0, 1, 1, 1]


@given(st.integers(1, 40), st.integers(1, 4), st.floats(0.2, 1.2), st.integers(0, 2**32 - 1))
def test_matches_reference(n, min_points, eps, seed):
    feats = unit_rows(np.random.default_rng(seed), n, 3)
    got = dbscan_labels(feats, DbscanParams(eps, min_points))
    assert canonical_partition(got) == canonical_partition(reference_dbscan(feats, eps, min_points))


def split_fixture():
    # cluster 0 holds slots 0..3; slots 0,1 share scene 0 and 2,3 share scene 1
    feats = np.array([[1, 0, 0], [0.8, 0.6, 0], [0.6, 0.8, 0], [1, 0, 0], [0, 0, 1]], dtype=float)
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    mem = FeatureMemory(np.array([10, 11, 12, 13, 14]), feats)
    scenes = SceneIndex({0: (10, 11), 1: (12, 13), 2: (14,)})
    return mem, scenes, ClusterSet.from_members([[0, 1, 2, 3], [4]], feats)


def test_scene_constraint_keeps_the_closest_member():
    mem, scenes, cs = split_fixture()
    out = apply_scene_constraint(cs, scenes, mem)
    sims = mem.features @ cs.centroids[0]
    keep0 = 0 if sims[0] >= sims[1] else 1
    keep1 = 3 if sims[3] >= sims[2] else 2
    assert out.clusters[0] == tuple(sorted([keep0, keep1]))
    assert out.clusters[1] == (4,)
    assert out.n_clusters == 4 and out.evictions == 2
    assert scene_violations(out, scenes, mem) == 0
    assert scene_violations(cs, scenes, mem) == 2


def test_scene_constraint_tie_goes_to_lower_instance_id():
    feats = np.array([[1.0, 0.0], [1.0, 0.0]])
    mem = FeatureMemory(np.array([5, 3]), feats)
    cs = ClusterSet.from_members([[0, 1]], feats)
    out = apply_scene_constraint(cs, SceneIndex({0: (5, 3)}), mem)
    assert out.clusters == ((1,), (0,))


def test_scene_constraint_without_collisions_is_identity():
    mem, _, cs = split_fixture()
    scenes = SceneIndex({i: (10 + i,) for i in range(5)})
    out = apply_scene_constraint(cs, scenes, mem)
    assert out.clusters == cs.clusters and out.evictions == 0


def test_recluster_epoch_counts():
    mem, scenes, _ = split_fixture()
    params = DbscanParams(0.7, 2)
    off = recluster_epoch(mem, scenes, params, False, epoch=4)
    on = recluster_epoch(mem, scenes, params, True, epoch=4)
    assert off.raw_count == on.raw_count == off.n_clusters
    assert on.n_clusters - on.raw_count == on.evictions > 0
    row = trajectory_row(on)
    assert (row.epoch, row.n_clusters_raw, row.n_evictions) == (4, on.raw_count, on.evictions)


@given(st.integers(0, 2**32 - 1))
def test_flag_never_lowers_cluster_count(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 30))
    mem = FeatureMemory(np.arange(n), unit_rows(rng, n, 3))
    scene_of = rng.integers(0, max(1, n // 2), n)
    scenes = SceneIndex({int(s): tuple(np.flatnonzero(scene_of == s).tolist()) for s in np.unique(scene_of)})
    params = DbscanParams(0.5, 2)
    off = recluster_epoch(mem, scenes, params, False)
    on = recluster_epoch(mem, scenes, params, True)
    collisions = scene_violations(off, scenes, mem)
    assert on.n_clusters >= off.n_clusters
    assert (on.n_clusters > off.n_clusters) == (collisions > 0)
