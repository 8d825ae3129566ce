import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import unit_rows
from ctxreid import io
from ctxreid.cli import AblationRow
from ctxreid.clustering import TrajectoryRow
from ctxreid.core import FeatureMemory, Instance
from ctxreid.simulator import EpochRow


def instances(rng, n=6, d=5, truth=True):
    feats = unit_rows(rng, n, d)
    return [Instance(10 + i, i // 2, feats[i], i % 3 if truth else None) for i in range(n)]


def test_dataset_round_trip_is_bit_exact(tmp_path, rng):
    src = instances(rng)
    io.write_dataset(tmp_path / "d.csv", src)
    back = io.read_dataset(tmp_path / "d.csv")
    assert [(b.instance_id, b.scene_id, b.truth_identity) for b in back] == \
        [(a.instance_id, a.scene_id, None) for a in src]
    for a, b in zip(src, back):
        np.testing.assert_array_equal(a.feature, b.feature)
    io.write_dataset(tmp_path / "t.csv", src, include_truth=True)
    assert [b.truth_identity for b in io.read_dataset(tmp_path / "t.csv")] == [a.truth_identity for a in src]


@pytest.mark.parametrize("line, message", [
    ("1,0,-1", "at least one feature"),
    ("x,0,-1,1.0", "invalid literal"),
    ("1,0,-1,0.5,0.5", "L2-normalized"),
    ("1,0,-1,nan,0.0", "L2-normalized"),
])
def test_dataset_errors_name_the_line(tmp_path, line, message):
    p = tmp_path / "d.csv"
    p.write_text("0,0,-1,1.0,0.0\n" + line + "\n")
    with pytest.raises(io.FormatError, match=rf":2: .*{message}"):
        io.read_dataset(p)


def test_dataset_duplicate_ids_and_dims(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("0,0,-1,1.0,0.0\n0,1,-1,0.0,1.0\n")
    with pytest.raises(io.FormatError, match="duplicate instance id 0"):
        io.read_dataset(p)
    p.write_text("0,0,-1,1.0,0.0\n1,1,-1,0.0,0.0,1.0\n")
    with pytest.raises(io.DimensionMismatch, match="expected D=2, found D=3"):
        io.read_dataset(p)
    p.write_text("")
    with pytest.raises(io.FormatError, match="no instances"):
        io.read_dataset(p)


def test_truth_round_trip(tmp_path):
    io.write_truth(tmp_path / "t.csv", [3, 1, 2], [7, 7, 9])
    assert io.read_truth(tmp_path / "t.csv") == {3: 7, 1: 7, 2: 9}
    (tmp_path / "bad.csv").write_text("id,label\n1,2\n")
    with pytest.raises(io.FormatError, match="header"):
        io.read_truth(tmp_path / "bad.csv")


@given(n=st.integers(1, 20), d=st.integers(1, 9), seed=st.integers(0, 2**32 - 1))
def test_snapshot_round_trip(tmp_path_factory, n, d, seed):
    rng = np.random.default_rng(seed)
    mem = FeatureMemory(rng.permutation(10 * n)[:n], unit_rows(rng, n, d), rng.integers(-1, 4, n))
    p = tmp_path_factory.mktemp("snap") / "m.snap"
    io.write_snapshot(p, mem)
    back = io.read_snapshot(p)
    np.testing.assert_array_equal(back.ids, mem.ids)
    np.testing.assert_array_equal(back.features, mem.features)
    np.testing.assert_array_equal(back.assignment, mem.assignment)


def test_snapshot_layout(tmp_path):
    mem = FeatureMemory([5], [[0.6, 0.8]], [2])
    io.write_snapshot(tmp_path / "m.snap", mem)
    blob = (tmp_path / "m.snap").read_bytes()
    assert blob == b"CGPS1" + struct.pack("<IIqddq", 2, 1, 5, 0.6, 0.8, 2)


def test_snapshot_errors_name_header_fields(tmp_path, rng):
    p = tmp_path / "m.snap"
    io.write_snapshot(p, FeatureMemory([1, 2], unit_rows(rng, 2, 3)))
    blob = p.read_bytes()
    cases = [(blob[:-1], "'N_a'"), (b"XXXXX" + blob[5:], "'magic'"), (blob[:7], "truncated header"),
             (blob[:5] + struct.pack("<I", 0) + blob[9:], "'D'")]
    for data, field in cases:
        p.write_bytes(data)
        with pytest.raises(io.FormatError, match=field):
            io.read_snapshot(p)


def test_report_rows_round_trip(tmp_path):
    rows = [EpochRow(0, math.nan, 4, 0.5, 1.0, 2 / 3, 0.1, 0.3, 0.25),
            EpochRow(1, 0.123456789012345, 5, 1 / 3, 0.7, 0.45, 0.2, 0.4, 1.0)]
    io.write_rows(tmp_path / "r.csv", rows)
    back = io.read_rows(tmp_path / "r.csv", EpochRow)
    assert [repr(r) for r in back] == [repr(r) for r in rows]
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == (
        "epoch,mean_loss,n_clusters,pairwise_precision,pairwise_recall,pairwise_f,nmi,"
        "retrieval_map,retrieval_top1")


def test_trajectory_and_ablation_round_trip(tmp_path):
    traj = [TrajectoryRow(0, 10, 12, 2), TrajectoryRow(1, 9, 9, 0)]
    io.write_rows(tmp_path / "t.csv", traj)
    assert io.read_rows(tmp_path / "t.csv", TrajectoryRow) == traj
    abl = [AblationRow(True, False, True, 0.1 + 0.2, 0.5, 0.25, 1.0)]
    io.write_rows(tmp_path / "a.csv", abl)
    assert io.read_rows(tmp_path / "a.csv", AblationRow) == abl
    assert "1,0,1,0.30000000000000004" in (tmp_path / "a.csv").read_text()


def test_rows_reject_malformed_tables(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("epoch,n_clusters_raw\n1,2\n")
    with pytest.raises(io.FormatError, match="header"):
        io.read_rows(p, TrajectoryRow)
    p.write_text("epoch,n_clusters_raw,n_clusters_after_scene_constraint,n_evictions\n1,2,3\n")
    with pytest.raises(io.FormatError, match=":2: expected 4 fields"):
        io.read_rows(p, TrajectoryRow)
    p.write_text("epoch,n_clusters_raw,n_clusters_after_scene_constraint,n_evictions\n1,2,x,0\n")
    with pytest.raises(io.FormatError, match=":2:"):
        io.read_rows(p, TrajectoryRow)
