import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import brute_force_active, brute_force_quantile_edges, random_events
from mugrep.community_graph import (
    EDGE_TYPES,
    HeteroCommunityEdges,
    IntraCommunityIndex,
    build_hetero_edges,
    nearest_rank_quantile,
    pairwise_distance,
    zscore_rows,
)
from mugrep.data import TransactionEvent


def _ev(i, date, com=0):
    return TransactionEvent(id=i, x_m=0.0, y_m=0.0, date=date, community_id=com,
                            raw_attributes={}, y=1.0)


# ---------------------------------------------------------------------------
# Dynamic intra-community windows

def test_active_window_worked_example():
    # days {0, 10, 20, 30, 40, 100}: the day-gap term stays below 90, so the
    # base window applies and only the day-0 event drops out at t=100.
    events = [_ev(i, d) for i, d in enumerate([0, 10, 20, 30, 40, 100])]
    idx = IntraCommunityIndex(events)
    active = idx.active_events(0, t=100, n_c=5, eps_tau_days=90)
    assert active == [1, 2, 3, 4, 5]


def test_active_single_event_gap_zero():
    idx = IntraCommunityIndex([_ev(0, 5)])
    assert idx.active_events(0, t=5, n_c=5, eps_tau_days=90) == [0]


def test_future_events_never_active():
    idx = IntraCommunityIndex([_ev(0, 10), _ev(1, 50)])
    assert idx.active_events(0, t=20, n_c=5, eps_tau_days=90) == [0]


def test_active_strict_past_view():
    idx = IntraCommunityIndex([_ev(0, 10), _ev(1, 20)])
    assert idx.active_events(0, t=20, n_c=5, eps_tau_days=90) == [0, 1]
    assert idx.active_events(0, t=20, n_c=5, eps_tau_days=90, before_date=20) == [0]


def test_sparse_community_degrades_to_base_window():
    # fewer than n_c members: window is eps_tau alone
    events = [_ev(0, 0), _ev(1, 300)]
    idx = IntraCommunityIndex(events)
    assert idx.active_events(0, t=300, n_c=5, eps_tau_days=90) == [1]


def test_wide_gap_extends_window():
    # five members spanning more than eps_tau: the gap term dominates
    events = [_ev(i, d) for i, d in enumerate([0, 50, 100, 150, 200])]
    idx = IntraCommunityIndex(events)
    active = idx.active_events(0, t=200, n_c=5, eps_tau_days=90)
    assert active == [0, 1, 2, 3, 4]  # window = max(90, 200-0) = 200


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_active_matches_direct_evaluation(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 40))
    events = random_events(rng, n, n_com=3, date_range=300)
    idx = IntraCommunityIndex(events)
    t = int(rng.integers(0, 320))
    n_c = int(rng.integers(1, 7))
    eps = int(rng.integers(10, 120))
    for com in range(3):
        got = idx.active_events(com, t, n_c, eps)
        assert sorted(got) == brute_force_active(events, com, t, n_c, eps)
        strict = idx.active_events(com, t, n_c, eps, before_date=t)
        assert sorted(strict) == brute_force_active(events, com, t, n_c, eps, before_date=t)


def test_insertion_of_future_event_does_not_change_past_window(rng):
    # The load-bearing monotone property: events dated after the query time
    # never affect the active set at that time.
    events = random_events(rng, 30, n_com=2, date_range=100)
    idx = IntraCommunityIndex(events)
    t = 60
    before = {c: idx.active_events(c, t, 5, 90) for c in range(2)}
    later = events + [TransactionEvent(id=100, x_m=0, y_m=0, date=80,
                                       community_id=0, raw_attributes={}, y=2.0)]
    idx2 = IntraCommunityIndex(later)
    after = {c: idx2.active_events(c, t, 5, 90) for c in range(2)}
    assert before == after


def test_intra_index_save_load(tmp_path, rng):
    events = random_events(rng, 80, n_com=4, date_range=200)
    idx = IntraCommunityIndex(events)
    idx.save(tmp_path / "intra.bin")
    loaded = IntraCommunityIndex.load(tmp_path / "intra.bin")
    assert loaded.communities() == idx.communities()
    for c in idx.communities():
        assert loaded.members(c) == idx.members(c)


# ---------------------------------------------------------------------------
# Pairwise distance and quantile thresholds

def test_pairwise_distance_examples():
    assert pairwise_distance(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert pairwise_distance(np.array([0.0, 0.0]), np.array([3.0, 4.0])) == 5.0
    with pytest.raises(ValueError, match="dimension mismatch"):
        pairwise_distance(np.zeros(3), np.zeros(4))


def test_pairwise_distance_componentwise_oracle(rng):
    for _ in range(50):
        a, b = rng.normal(size=10), rng.normal(size=10)
        oracle = sum((x - y) ** 2 for x, y in zip(a, b)) ** 0.5
        assert pairwise_distance(a, b) == pytest.approx(oracle)


def test_quantile_worked_example():
    # distances {1, 2, 3}, quantile 0.34 -> nearest rank 1 -> threshold 1
    assert nearest_rank_quantile([3.0, 1.0, 2.0], 0.34) == 1.0
    vectors = {t: np.array([[0.0], [1.0], [3.0]]) for t in EDGE_TYPES}
    # pairwise distances are {1, 2, 3}
    edges = build_hetero_edges(vectors, [0, 1, 2], 0.34)
    assert edges.thresholds["g"] == 1.0
    assert edges.edge_sets["g"] == {(0, 1)}


def test_identical_vectors_fully_connected():
    vectors = {t: np.ones((4, 3)) for t in EDGE_TYPES}
    edges = build_hetero_edges(vectors, [0, 1, 2, 3], 0.001)
    complete = {(i, j) for i in range(4) for j in range(i + 1, 4)}
    for t in EDGE_TYPES:
        assert edges.edge_sets[t] == complete


def test_edges_match_threshold_oracle(rng):
    n = 200
    ids = list(range(n))
    vectors = {t: rng.normal(size=(n, 5)) for t in EDGE_TYPES}
    edges = build_hetero_edges(vectors, ids, 0.01)
    for t in EDGE_TYPES:
        oracle_edges, oracle_eps = brute_force_quantile_edges(vectors[t], ids, 0.01)
        assert edges.thresholds[t] == pytest.approx(oracle_eps)
        assert edges.edge_sets[t] == oracle_edges


def test_edge_count_near_quantile(rng):
    n = 120
    vectors = {t: rng.normal(size=(n, 4)) for t in EDGE_TYPES}
    edges = build_hetero_edges(vectors, list(range(n)), 0.005)
    n_pairs = n * (n - 1) // 2
    for t in EDGE_TYPES:
        target = 0.005 * n_pairs
        # nearest-rank rounding, plus possible ties at the threshold
        assert abs(len(edges.edge_sets[t]) - target) <= 1 + 0.05 * target


def test_edges_symmetric_irreflexive(rng):
    vectors = {t: rng.normal(size=(30, 3)) for t in EDGE_TYPES}
    edges = build_hetero_edges(vectors, list(range(30)), 0.05)
    for t in EDGE_TYPES:
        for i, j in edges.edge_sets[t]:
            assert i < j  # stored undirected, no self loops
        nbrs_0 = [n for n, _ in edges.hetero_neighbors(0)]
        for nbr in nbrs_0:
            assert 0 in [m for m, _ in edges.hetero_neighbors(nbr)]


def test_too_few_communities_rejected():
    with pytest.raises(ValueError):
        build_hetero_edges({t: np.zeros((1, 2)) for t in EDGE_TYPES}, [0], 0.1)


# ---------------------------------------------------------------------------
# hetero_neighbors

def test_neighbors_empty_for_isolated():
    edges = HeteroCommunityEdges([0, 1, 2], {t: set() for t in EDGE_TYPES},
                                 {t: 0.0 for t in EDGE_TYPES})
    assert edges.hetero_neighbors(1) == []
    with pytest.raises(KeyError):
        edges.hetero_neighbors(99)


def test_neighbors_multi_type_entries():
    sets = {t: set() for t in EDGE_TYPES}
    sets["g"].add((0, 1))
    sets["m"].add((0, 1))
    edges = HeteroCommunityEdges([0, 1], sets, {t: 1.0 for t in EDGE_TYPES})
    entries = edges.hetero_neighbors(0)
    assert len(entries) == 2
    (n1, p1), (n2, p2) = entries
    assert n1 == 1 and n2 == 1
    assert p1.tolist() == [1.0, 0.0, 0.0, 0.0]
    assert p2.tolist() == [0.0, 0.0, 1.0, 0.0]


def test_neighbors_match_membership_oracle(rng):
    n = 40
    vectors = {t: rng.normal(size=(n, 3)) for t in EDGE_TYPES}
    edges = build_hetero_edges(vectors, list(range(n)), 0.02)
    for cid in range(n):
        got = [(nbr, tuple(p)) for nbr, p in edges.hetero_neighbors(cid)]
        expected = []
        for ti, t in enumerate(EDGE_TYPES):
            members = sorted(
                (j if i == cid else i)
                for i, j in edges.edge_sets[t] if cid in (i, j)
            )
            p = [0.0] * 4
            p[ti] = 1.0
            expected.extend((m, tuple(p)) for m in members)
        assert got == expected


def test_hetero_save_load(tmp_path, rng):
    vectors = {t: rng.normal(size=(25, 3)) for t in EDGE_TYPES}
    edges = build_hetero_edges(vectors, list(range(25)), 0.05)
    edges.save(tmp_path / "edges.json")
    loaded = HeteroCommunityEdges.load(tmp_path / "edges.json")
    assert loaded.edge_sets == edges.edge_sets
    assert loaded.thresholds == edges.thresholds
    assert loaded.community_ids == edges.community_ids


def test_zscore_rows():
    m = np.array([[0.0, 10.0], [2.0, 10.0], [4.0, 10.0]])
    z = zscore_rows(m)
    assert np.allclose(z[:, 0], [-1.224744871391589, 0.0, 1.224744871391589])
    assert np.allclose(z[:, 1], 0.0)  # constant column maps to zero
