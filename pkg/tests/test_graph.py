import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gmn.graph import (
    DualGraph,
    Kind,
    LogFormatError,
    NodeId,
    extract_subgraph,
    graph_from_bytes,
    graph_to_bytes,
    ingest_logs,
    keys_to_text,
    load_graph,
    save_graph,
    subgraph_table,
)


def lines(*rows):
    return ["\t".join(map(str, r)) + "\n" for r in rows]


def test_ingest_counts_and_degrees():
    g = ingest_logs(lines(("u1", "v1", 1), ("u1", "v2", 2)), lines(("u1", "i1", 3)))
    assert (g.n_users, g.n_videos, g.n_items) == (1, 2, 1)
    assert len(g.user_videos(0)) == 2 and len(g.user_items(0)) == 1


def test_duplicate_edge_collapsed_and_counted():
    g = ingest_logs(lines(("u1", "v1", 1), ("u1", "v1", 5)), lines(("u1", "i1", 3)))
    assert g.n_uv_edges == 1
    assert g.report.duplicates == 1
    # the surviving copy carries the latest timestamp
    assert g.user_video_times(0).tolist() == [5]


def test_toy_neighbor_sets():
    uv = lines(("u1", "v1", 1), ("u1", "v2", 2))
    ui = lines(*[("u1", f"i{n}", n) for n in range(1, 5)])
    g = ingest_logs(uv, ui)
    u = g.node(Kind.USER, "u1")
    sub = extract_subgraph(g, u)
    assert len(sub.items) == 4 and len(sub.videos) == 2
    assert {g.key(n) for n in sub.items} == {"i1", "i2", "i3", "i4"}


def test_first_seen_order():
    g = ingest_logs(lines(("b", "y", 1), ("a", "x", 2), ("b", "x", 3)), [])
    assert g.keys[Kind.USER] == ("b", "a")
    assert g.keys[Kind.VIDEO] == ("y", "x")


@pytest.mark.parametrize("bad", ["u1\tv1\n", "u1\tv1\tnoon\n", "\tv1\t3\n"])
def test_malformed_record_names_line(bad):
    with pytest.raises(LogFormatError, match="line 2"):
        ingest_logs(["u0\tv0\t1\n", bad], [])


def test_unknown_keys_skipped_with_feature_table():
    feats = ["u1\tuser_id:0\n", "v1\tvideo_id:0\tgenre:1\n", "i1\titem_id:0\n"]
    g = ingest_logs(lines(("u1", "v1", 1), ("u1", "v9", 2)), lines(("u1", "i1", 1), ("u7", "i1", 2)), feats)
    assert g.report.skipped_unknown == 2
    assert g.n_uv_edges == 1 and g.n_ui_edges == 1
    assert g.features[Kind.VIDEO].fields == ("genre", "video_id")
    assert g.features[Kind.VIDEO].ids.tolist() == [[1, 0]]


def test_missing_feature_field_is_rejected():
    feats = ["u1\tuser_id:0\n", "u2\n", "v1\tvideo_id:0\n", "i1\titem_id:0\n"]
    with pytest.raises(LogFormatError):
        ingest_logs(lines(("u1", "v1", 1), ("u2", "v1", 1)), lines(("u1", "i1", 1)), feats)


def test_subgraph_cap_takes_most_recent():
    ui = np.array([(0, i, 1000 + i) for i in range(60)])
    g = DualGraph.from_edges(1, 1, 60, np.zeros((0, 3)), ui)
    sub = extract_subgraph(g, NodeId(Kind.USER, 0), cap_i=50)
    got = [n.index for n in sub.items]
    assert len(got) == 50
    assert got == list(range(59, 9, -1))


def test_under_cap_returns_all_in_descending_time():
    uv = np.array([(0, 0, 5), (0, 1, 9), (0, 2, 7)])
    g = DualGraph.from_edges(1, 3, 1, uv, np.zeros((0, 3)))
    sub = extract_subgraph(g, NodeId(Kind.USER, 0), cap_v=50)
    assert [n.index for n in sub.videos] == [1, 2, 0]


def test_isolated_user_has_empty_subgraph():
    g = DualGraph.from_edges(2, 1, 1, np.array([(0, 0, 1)]), np.zeros((0, 3)))
    sub = extract_subgraph(g, NodeId(Kind.USER, 1))
    assert sub.videos == [] and sub.items == []


def test_tie_break_is_seeded_and_reproducible():
    uv = np.array([(0, v, 7) for v in range(20)])
    g = DualGraph.from_edges(1, 20, 1, uv, np.zeros((0, 3)))
    a = extract_subgraph(g, NodeId(Kind.USER, 0), cap_v=5, rng_seed=1)
    b = extract_subgraph(g, NodeId(Kind.USER, 0), cap_v=5, rng_seed=1)
    assert a == b
    picks = {tuple(n.index for n in extract_subgraph(g, NodeId(Kind.USER, 0), cap_v=5, rng_seed=s).videos)
             for s in range(10)}
    assert len(picks) > 1


def test_subgraph_table_matches_extract(small_data):
    g = small_data.graph
    vids, nv, its, ni = subgraph_table(g, 4, 6, 2)
    for u in range(g.n_users):
        sub = extract_subgraph(g, NodeId(Kind.USER, u), 4, 6, 2)
        assert vids[u, : nv[u]].tolist() == [n.index for n in sub.videos]
        assert its[u, : ni[u]].tolist() == [n.index for n in sub.items]
        assert np.all(vids[u, nv[u]:] == -1)


def test_save_load_round_trip(tmp_path, small_data):
    g = small_data.graph
    path = tmp_path / "g.gmng"
    save_graph(g, path)
    h = load_graph(path)
    assert graph_to_bytes(h) == graph_to_bytes(g)
    assert keys_to_text(h) == keys_to_text(g)
    assert path.read_bytes()[:5] == b"GMNG1"


def test_bad_magic_rejected():
    with pytest.raises(ValueError):
        graph_from_bytes(b"NOPE!" + bytes(40))


# ---------------------------------------------------------------- properties

edge_lists = st.lists(
    st.tuples(st.integers(0, 5), st.integers(0, 6), st.integers(0, 3)), min_size=0, max_size=40
)


def build(uv, ui):
    return ingest_logs(lines(*[(f"u{u}", f"v{v}", t) for u, v, t in uv]),
                       lines(*[(f"u{u}", f"i{i}", t) for u, i, t in ui]))


@given(edge_lists, edge_lists, st.randoms())
def test_symmetry_and_permutation_invariant_counts(uv, ui, rnd):
    g = build(uv, ui)
    uv2, ui2 = list(uv), list(ui)
    rnd.shuffle(uv2)
    rnd.shuffle(ui2)
    h = build(uv2, ui2)
    assert (g.n_users, g.n_videos, g.n_items, g.n_uv_edges, g.n_ui_edges) == \
        (h.n_users, h.n_videos, h.n_items, h.n_uv_edges, h.n_ui_edges)
    for u in range(g.n_users):
        for v in g.user_videos(u):
            assert u in g.video_users(v)
        for i in g.user_items(u):
            assert u in g.item_users(i)
    for v in range(g.n_videos):
        for u in g.video_users(v):
            assert v in g.user_videos(u)
    # no duplicate edges
    for u in range(g.n_users):
        assert len(set(g.user_videos(u).tolist())) == len(g.user_videos(u))


@given(edge_lists, edge_lists)
def test_serialisation_is_byte_identical(uv, ui):
    g = build(uv, ui)
    data = graph_to_bytes(g)
    h = graph_from_bytes(data, keys_to_text(g))
    assert graph_to_bytes(h) == data
    assert h.keys == g.keys


@given(edge_lists, edge_lists, st.integers(1, 4), st.integers(1, 4), st.integers(0, 9))
def test_subgraph_is_subset_of_true_neighbors(uv, ui, cap_v, cap_i, seed):
    g = build(uv, ui)
    for u in range(g.n_users):
        sub = extract_subgraph(g, NodeId(Kind.USER, u), cap_v, cap_i, seed)
        assert len(sub.videos) <= cap_v and len(sub.items) <= cap_i
        assert {n.index for n in sub.videos} <= set(g.user_videos(u).tolist())
        assert {n.index for n in sub.items} <= set(g.user_items(u).tolist())
        # whatever was dropped is never more recent than what was kept
        times = dict(zip(g.user_videos(u).tolist(), g.user_video_times(u).tolist()))
        kept = [times[n.index] for n in sub.videos]
        dropped = [t for v, t in times.items() if v not in {n.index for n in sub.videos}]
        if kept and dropped:
            assert min(kept) >= max(dropped)
        assert kept == sorted(kept, reverse=True)


def test_stream_input_accepts_file_objects():
    g = ingest_logs(io.StringIO("u\tv\t1\n"), io.StringIO("u\ti\t2\n"))
    assert g.n_uv_edges == 1 and g.n_ui_edges == 1
