import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hs

from rcbench.core import ConfigurationError, ConstructionError, Dataset, DomainError, QueryRange
from rcbench.ingest import synth_uniform
from rcbench.oracle import brute_force_src
from rcbench.structures import (
    build_cdag,
    build_structure,
    build_tree,
    dump_structure,
    level_histogram,
    locate_many,
    payload_size,
    src_search,
    structure_to_json,
)


def intervals_at(st, level):
    return [(int(st.lo[i]), int(st.hi[i])) for i in st.level_ids(level)]


def test_tree_levels_on_sixteen_points(fig1):
    tree, _ = fig1
    assert intervals_at(tree, 1) == [(0, 8), (8, 16)]
    assert intervals_at(tree, 2) == [(0, 4), (4, 8), (8, 12), (12, 16)]
    assert tree.height == 4
    assert level_histogram(tree) == {0: 1, 1: 2, 2: 4, 3: 8, 4: 16}
    assert payload_size(tree) == 80


def test_three_dag_levels_on_sixteen_points(fig1):
    _, dag = fig1
    assert intervals_at(dag, 2) == [(0, 4), (2, 6), (4, 8), (6, 10), (8, 12), (10, 14), (12, 16)]
    assert level_histogram(dag) == {0: 1, 1: 3, 2: 7, 3: 15, 4: 16}
    assert payload_size(dag) == 114


def test_five_dag_level_one(uniform16):
    assert level_histogram(build_cdag(uniform16, 5))[1] == 5


def test_single_point_dataset():
    st = build_tree(Dataset.from_points([7]))
    assert st.height == 0 and st.node_count == 1 and payload_size(st) == 1
    assert src_search(st, QueryRange(7, 1)).node == 0


def test_two_points_any_c_merges_middles():
    ds = Dataset.from_points([0, 1])
    for c in (3, 5, 9):
        st = build_cdag(ds, c)
        assert st.node_count == 3
        assert list(st.children(0)) == [1, 2]


def test_builder_errors():
    with pytest.raises(ConstructionError):
        build_tree(Dataset(np.zeros(0, dtype=np.int64), 4))
    with pytest.raises(ConfigurationError):
        build_cdag(synth_uniform(8, 8), 2)
    assert build_structure(synth_uniform(8, 8), 2).config.is_tree


@pytest.mark.parametrize("N", [1, 2, 3, 7, 16, 33, 100])
@pytest.mark.parametrize("c", [2, 3, 4, 5, 9])
def test_definition_invariants(N, c):
    ds = Dataset(np.sort(np.random.default_rng(N).choice(10 * N, N, replace=False)), 10 * N)
    st = build_structure(ds, c)
    assert st.lo[0] == 0 and st.hi[0] == ds.domain_size
    levels = st.levels()
    for v in range(st.node_count):
        inside = np.count_nonzero((ds.points >= st.lo[v]) & (ds.points < st.hi[v]))
        assert inside == st.point_count(v)
        kids = st.children(v)
        if st.point_count(v) >= 2:
            assert kids.size >= 2
            assert st.lo[kids].min() == st.lo[v] and st.hi[kids].max() == st.hi[v]
            # children tile the parent without gaps
            order = np.argsort(st.lo[kids])
            assert np.all(st.lo[kids][order][1:] <= np.maximum.accumulate(st.hi[kids][order])[:-1])
            assert np.all(levels[kids] == levels[v] + 1)
        else:
            assert kids.size == 0
        assert np.all((st.lo[kids] >= st.lo[v]) & (st.hi[kids] <= st.hi[v]))
    for level in range(st.height + 1):
        sizes = {st.point_count(v) for v in st.level_ids(level)}
        assert sizes <= {-(-N // 2**level), N // 2**level} or level == st.height


def test_tree_height_is_ceil_log2():
    for N in range(1, 70):
        assert build_tree(synth_uniform(N, N)).height == (N - 1).bit_length()


def test_search_examples(fig1):
    tree, dag = fig1
    r = src_search(dag, QueryRange(2, 4))
    assert (r.level, r.covered_count) == (2, 4)
    r = src_search(tree, QueryRange(2, 4))
    assert (r.level, r.covered_count) == (1, 8)
    for st in fig1:
        r = src_search(st, QueryRange(11, 4))
        assert r.level == 1 and (st.lo[r.node], st.hi[r.node]) == (8, 16)
        leaf = src_search(st, QueryRange(5, 1))
        assert leaf.level == st.height and leaf.covered_count == 1


def test_search_rejects_out_of_domain(fig1):
    with pytest.raises(DomainError):
        src_search(fig1[0], QueryRange(14, 3))
    with pytest.raises(DomainError):
        locate_many(fig1[0], np.array([0.0, 13.5]), 3)


def test_search_result_is_inclusion_minimal(fig1):
    for st in fig1:
        for x in np.linspace(0, 12, 97):
            r = src_search(st, QueryRange(float(x), 4))
            assert st.lo[r.node] <= x and x + 4 <= st.hi[r.node]
            for k in st.children(r.node):
                assert not (st.lo[k] <= x and x + 4 <= st.hi[k])


datasets = hs.integers(1, 80).flatmap(
    lambda n: hs.tuples(
        hs.just(n),
        hs.lists(hs.integers(0, 5 * n), min_size=n, max_size=n, unique=True),
    )
)


@settings(max_examples=60, deadline=None)
@given(datasets, hs.sampled_from([2, 3, 4, 5, 6, 9]), hs.data())
def test_search_matches_brute_force(ds_spec, c, data):
    n, pts = ds_spec
    ds = Dataset.from_points(pts, 5 * n + 1)
    st_ = build_structure(ds, c)
    M = ds.domain_size
    for _ in range(15):
        s = data.draw(hs.integers(1, M))
        x = data.draw(hs.floats(0, M - s, allow_nan=False))
        q = QueryRange(x, s)
        got, want = src_search(st_, q), brute_force_src(st_, q)
        assert got.node == want.node
        nodes, levels = locate_many(st_, np.array([x]), s)
        assert nodes[0] == want.node and levels[0] == want.level
        if st_.regular:
            assert got.visited_nodes <= c * (st_.height + 1)


@settings(max_examples=30, deadline=None)
@given(hs.integers(1, 9), hs.sampled_from([2, 3, 5, 9]), hs.data())
def test_regular_structures_respect_visit_cap(n, c, data):
    N = 2**n
    pts = data.draw(hs.lists(hs.integers(0, 4 * N), min_size=N, max_size=N, unique=True))
    st_ = build_structure(Dataset.from_points(pts, 4 * N + 1), c)
    assert st_.regular
    for _ in range(20):
        s = data.draw(hs.integers(1, st_.domain_size))
        x = data.draw(hs.floats(0, st_.domain_size - s))
        assert src_search(st_, QueryRange(x, s)).visited_nodes <= c * (st_.height + 1)


def test_locate_many_integer_and_float_starts(uniform16):
    st = build_cdag(uniform16, 5)
    xs = np.arange(0, 13)
    n_int, l_int = locate_many(st, xs, 3)
    n_flt, l_flt = locate_many(st, xs.astype(float), 3)
    assert np.array_equal(n_int, n_flt) and np.array_equal(l_int, l_flt)
    for x, node in zip(xs, n_int):
        assert node == src_search(st, QueryRange(int(x), 3)).node
    assert locate_many(st, np.array([]), 3)[0].size == 0


def test_json_layout(tmp_path, fig1):
    tree, dag = fig1
    obj = structure_to_json(dag)
    assert obj["structure"] == "3-dag" and obj["payload"] == 114
    assert obj["nodes"][0] == [0, 0, 0, 16, 0, 16, [1, 2, 3]]
    path = tmp_path / "t.json"
    dump_structure(tree, path)
    loaded = json.loads(path.read_text())
    assert loaded["levels"] == {"0": 1, "1": 2, "2": 4, "3": 8, "4": 16}
    assert len(loaded["nodes"]) == 31


def test_node_record(fig1):
    rec = fig1[1].node(2)
    assert rec.level == 1 and (rec.interval.lo, rec.interval.hi) == (4, 12)
    assert rec.point_count == 8 and rec.point_offset == 4 and len(rec.children) == 3
    assert sum(1 for _ in fig1[0].nodes()) == 31
    assert fig1[0].points_of(2).tolist() == list(range(8, 16))
