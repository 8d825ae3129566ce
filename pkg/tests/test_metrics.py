import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import unit_rows
from ctxreid.metrics import (average_precision, cross_identity_merge_rate, memory_retrieval, memory_retrieval_split,
                             pairwise_scores, retrieval_scores)
from oracles import brute_ap, brute_nmi, brute_pairwise

labels = st.lists(st.integers(0, 4), min_size=2, max_size=12)


def test_perfect_clustering():
    s = pairwise_scores([0, 0, 1, 2, 2], [5, 5, 7, 9, 9])
    assert (s.pairwise_precision, s.pairwise_recall, s.pairwise_f, s.nmi) == (1.0, 1.0, 1.0, 1.0)
    assert s.n_clusters == 3


def test_one_big_cluster():
    s = pairwise_scores([0, 0, 0, 0], [0, 0, 1, 1])
    assert s.pairwise_precision == pytest.approx(1 / 3)
    assert s.pairwise_recall == 1.0


def test_all_singletons():
    s = pairwise_scores([0, 1, 2, 3], [0, 0, 1, 1])
    assert (s.pairwise_precision, s.pairwise_recall, s.pairwise_f) == (1.0, 0.0, 0.0)


def test_mapping_input_and_mismatch():
    s = pairwise_scores({1: 0, 2: 0, 3: 1}, {3: 4, 2: 8, 1: 8})
    assert s.pairwise_f == 1.0
    with pytest.raises(ValueError, match="different instance sets"):
        pairwise_scores({1: 0, 2: 0}, {1: 0, 3: 0})
    with pytest.raises(ValueError, match="different instance sets"):
        pairwise_scores([0, 1, 2], [0, 1])
    with pytest.raises(ValueError, match="at least 2"):
        pairwise_scores([0], [0])


@given(labels, st.data())
def test_matches_brute_force(assign, data):
    truth = data.draw(st.lists(st.integers(0, 3), min_size=len(assign), max_size=len(assign)))
    s = pairwise_scores(assign, truth)
    p, r, f = brute_pairwise(assign, truth)
    assert (s.pairwise_precision, s.pairwise_recall) == pytest.approx((p, r), abs=1e-12)
    assert s.pairwise_f == pytest.approx(f, abs=1e-12)
    assert s.nmi == pytest.approx(brute_nmi(assign, truth), abs=1e-12)
    for v in (s.pairwise_precision, s.pairwise_recall, s.pairwise_f, s.nmi):
        assert 0.0 <= v <= 1.0


def test_cross_identity_merge_rate():
    assert cross_identity_merge_rate([0, 0, 0, 0], [0, 0, 1, 1]) == 1.0
    assert cross_identity_merge_rate([0, 1, 2, 3], [0, 0, 1, 1]) == 0.0
    assert cross_identity_merge_rate([0, 0, 1, 1], [0, 1, 2, 3]) == pytest.approx(2 / 6)
    assert cross_identity_merge_rate([0, 1], [5, 5]) == 0.0


@given(labels, st.data())
def test_merge_rate_matches_pair_count(assign, data):
    truth = data.draw(st.lists(st.integers(0, 3), min_size=len(assign), max_size=len(assign)))
    pairs = [(i, j) for i in range(len(assign)) for j in range(i) if truth[i] != truth[j]]
    expect = sum(assign[i] == assign[j] for i, j in pairs) / len(pairs) if pairs else 0.0
    assert cross_identity_merge_rate(assign, truth) == pytest.approx(expect, abs=1e-12)


@given(labels, st.permutations(range(5)), st.permutations(range(5)))
def test_relabeling_invariance(assign, pa, pt):
    truth = assign[::-1]
    a = pairwise_scores(assign, truth)
    b = pairwise_scores([pa[x] for x in assign], [pt[x] for x in truth])
    assert (a.pairwise_precision, a.pairwise_recall, a.n_clusters) == \
        (b.pairwise_precision, b.pairwise_recall, b.n_clusters)
    # NMI sums entropy terms in label order, so only rounding may differ
    assert a.nmi == pytest.approx(b.nmi, abs=1e-12)


def test_average_precision_examples():
    assert average_precision([True]) == 1.0
    assert average_precision([False, True]) == 0.5
    assert average_precision([True, False, True]) == pytest.approx(5 / 6, abs=1e-12)
    assert average_precision([False, False]) == 0.0


@given(st.lists(st.booleans(), min_size=1, max_size=30))
def test_average_precision_matches_brute_force(rel):
    assert average_precision(rel) == pytest.approx(brute_ap(rel), abs=1e-12)


def test_retrieval_examples():
    q = np.array([[1.0, 0.0]])
    g = np.array([[1.0, 0.0], [0.0, 1.0]])
    s = retrieval_scores(q, [3], g, [3, 4])
    assert (s.map, s.top1) == (1.0, 1.0)
    s = retrieval_scores(q, [3], np.array([[0.0, 1.0], [0.6, 0.8]]), [4, 3])
    assert (s.map, s.top1) == (1.0, 1.0)
    s = retrieval_scores(q, [3], np.array([[1.0, 0.0], [0.0, 1.0]]), [4, 3])
    assert (s.map, s.top1) == (0.5, 0.0)


def test_retrieval_ties_break_on_gallery_index():
    q = np.array([[1.0, 0.0]])
    g = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert retrieval_scores(q, [1], g, [2, 1]).map == 0.5
    assert retrieval_scores(q, [1], g, [1, 2]).map == 1.0


def test_retrieval_missing_identity_lists_offenders():
    with pytest.raises(ValueError, match=r"absent from gallery: \[7\]"):
        retrieval_scores(np.eye(2), [1, 7], np.eye(2), [1, 1])


@given(st.integers(0, 2**32 - 1))
def test_retrieval_rotation_invariance_and_bounds(seed):
    rng = np.random.default_rng(seed)
    q, g = unit_rows(rng, 4, 5), unit_rows(rng, 12, 5)
    qid = rng.integers(0, 3, 4)
    gid = np.concatenate([np.arange(3), rng.integers(0, 3, 9)])
    rot, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    a = retrieval_scores(q, qid, g, gid)
    b = retrieval_scores(q @ rot, qid, g @ rot, gid)
    assert 0.0 <= a.map <= 1.0 and 0.0 <= a.top1 <= 1.0
    # rotation can reorder exact near-ties only at rounding level
    assert a.map == pytest.approx(b.map, abs=1e-9)


def test_single_match_top1_equals_map():
    s = retrieval_scores(np.eye(3), [0, 1, 2], np.eye(3)[[2, 0, 1]], [2, 0, 1])
    assert s.map == s.top1 == 1.0


def test_memory_split_uses_lowest_id_as_query():
    ids = np.array([30, 10, 20, 40, 50])
    truth = np.array([1, 1, 2, 2, 3])
    q, g = memory_retrieval_split(ids, truth)
    assert list(q) == [1, 2]  # ids 10 and 20
    assert list(g) == [0, 3, 4]
    feats = np.eye(5)
    assert 0.0 <= memory_retrieval(feats, ids, truth).map <= 1.0
