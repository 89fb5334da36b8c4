from itertools import combinations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fig2_graph
from distobs.graph import (
    DirectedGraph,
    GraphError,
    check_forest,
    neighborhoods,
    rooted_forest_over_nonsource,
    source_components,
    strongly_connected_components,
)


@st.composite
def graphs(draw, max_m=8):
    m = draw(st.integers(1, max_m))
    pairs = [(i, j) for i in range(1, m + 1) for j in range(1, m + 1) if i != j]
    edges = draw(st.lists(st.sampled_from(pairs), unique=True)) if pairs else []
    return DirectedGraph(m, edges)


def sets(components):
    return sorted(sorted(c) for c in components)


def reachable(g, start, allowed):
    seen, stack = {start}, [start]
    while stack:
        u = stack.pop()
        for v in g.out_neighbors(u):
            if v in allowed and v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


def brute_sources(g):
    """Subsets that are strongly connected, maximal and closed to incoming edges."""
    found = []
    V = list(g.vertices)
    for k in range(1, g.m + 1):
        for sub in combinations(V, k):
            s = set(sub)
            if any((u, v) in g.edges for v in s for u in V if u not in s):
                continue
            if all(reachable(g, v, s) == s for v in s):
                found.append(sorted(s))
    # a closed strongly connected set is automatically a whole SCC; keep minimal ones
    return sorted(f for f in found if not any(set(o) < set(f) for o in found))


class TestNeighborhoods:
    def test_fig2_vertex5(self):
        assert neighborhoods(fig2_graph())[4] == {5, 3, 6, 7}

    def test_edgeless(self):
        assert neighborhoods(DirectedGraph(3)) == [{1}, {2}, {3}]

    def test_chain(self):
        assert neighborhoods(DirectedGraph(2, [(1, 2)])) == [{1}, {1, 2}]


class TestComponents:
    def test_fig2_scc(self):
        assert sets(strongly_connected_components(fig2_graph())) == [[1, 2, 3], [4, 7], [5, 6]]

    def test_edgeless_and_cycle(self):
        assert sets(strongly_connected_components(DirectedGraph(3))) == [[1], [2], [3]]
        cyc = DirectedGraph(4, [(1, 2), (2, 3), (3, 4), (4, 1)])
        assert sets(strongly_connected_components(cyc)) == [[1, 2, 3, 4]]

    def test_fig2_sources(self):
        assert sets(c.vertices for c in source_components(fig2_graph())) == [[1, 2, 3], [4, 7]]

    def test_single_and_chain(self):
        assert sets(c.vertices for c in source_components(DirectedGraph(1))) == [[1]]
        chain = DirectedGraph(3, [(1, 2), (2, 3)])
        assert sets(c.vertices for c in source_components(chain)) == [[1]]

    @given(graphs())
    @settings(max_examples=150, deadline=None)
    def test_scc_partition(self, g):
        comps = strongly_connected_components(g)
        flat = [v for c in comps for v in c]
        assert sorted(flat) == list(g.vertices)

    @given(graphs())
    @settings(max_examples=150, deadline=None)
    def test_sources_match_brute_force(self, g):
        srcs = source_components(g)
        assert srcs
        for c in srcs:
            inside = set(c.vertices)
            assert not any((u, v) in g.edges for v in inside for u in g.vertices if u not in inside)
        assert sets(c.vertices for c in srcs) == brute_sources(g)


class TestForest:
    def test_fig2(self):
        g = fig2_graph()
        f = rooted_forest_over_nonsource(g)
        assert f.covered == frozenset({5, 6})
        assert len(f.trees) == 1
        root, pm = f.trees[0]
        assert root == 5 and pm == {6: 5}

    def test_empty(self):
        g = DirectedGraph(2, [(1, 2), (2, 1)])
        assert rooted_forest_over_nonsource(g).trees == ()

    def test_star(self):
        g = DirectedGraph(4, [(1, 2), (1, 3), (1, 4)])
        f = rooted_forest_over_nonsource(g)
        assert sorted(r for r, _ in f.trees) == [2, 3, 4]
        assert all(pm == {} for _, pm in f.trees)
        assert all(f.root_feeders[r] == 1 for r in (2, 3, 4))

    @given(graphs())
    @settings(max_examples=150, deadline=None)
    def test_forest_invariants(self, g):
        srcs = source_components(g)
        f = rooted_forest_over_nonsource(g, srcs)
        src_vertices = {v for c in srcs for v in c.vertices}
        assert f.covered == frozenset(set(g.vertices) - src_vertices)
        assert check_forest(g, f, srcs) == []
        for root, pm in f.trees:
            for v in pm:
                walk, seen = v, set()
                while walk != root:
                    assert walk not in seen
                    seen.add(walk)
                    assert (pm[walk], walk) in g.edges
                    walk = pm[walk]
            assert (f.root_feeders[root], root) in g.edges
            assert f.root_feeders[root] in src_vertices

    def test_deterministic(self):
        g = fig2_graph()
        assert rooted_forest_over_nonsource(g) == rooted_forest_over_nonsource(g)


def test_self_loop_and_range_rejected():
    with pytest.raises(GraphError):
        DirectedGraph(2, [(1, 1)])
    with pytest.raises(GraphError):
        DirectedGraph(2, [(1, 3)])
