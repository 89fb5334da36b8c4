"""Directed communication graphs.

Vertices are labelled ``1..m``. An edge ``(i, j)`` means observer ``i`` can
send to observer ``j``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class DirectedGraph:
    m: int
    edges: frozenset = field(default_factory=frozenset)

    def __init__(self, m, edges=()):
        m = int(m)
        if m < 1:
            raise GraphError("a graph needs at least one vertex")
        es = set()
        for e in edges:
            i, j = (int(x) for x in e)
            if i == j:
                raise GraphError(f"self-loop ({i}, {i}) is not allowed")
            if not (1 <= i <= m and 1 <= j <= m):
                raise GraphError(f"edge ({i}, {j}) outside vertex range 1..{m}")
            es.add((i, j))
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "edges", frozenset(es))

    @property
    def vertices(self):
        return range(1, self.m + 1)

    def in_neighbors(self, v):
        return sorted(i for (i, j) in self.edges if j == v)

    def out_neighbors(self, v):
        return sorted(j for (i, j) in self.edges if i == v)

    def subgraph_edges(self, vertices):
        vs = set(vertices)
        return frozenset((i, j) for (i, j) in self.edges if i in vs and j in vs)

    def sorted_edges(self):
        return sorted(self.edges)


@dataclass(frozen=True)
class SourceComponent:
    vertices: tuple
    internal_edges: frozenset


@dataclass(frozen=True)
class RootedForest:
    """Disjoint rooted trees covering the non-source vertices.

    ``trees`` holds ``(root, parent_map)`` pairs where ``parent_map`` maps each
    non-root vertex to its tree parent. ``root_feeders`` records, for each
    root, the source-component vertex with an edge into it.
    """

    trees: tuple
    covered: frozenset
    order: tuple
    root_feeders: dict

    def parent(self, v):
        for root, pm in self.trees:
            if v in pm:
                return pm[v]
        return None


def neighborhoods(g):
    """``N_i = {i} ∪ {j : (j, i) ∈ E}`` for every vertex, as a list indexed from 0."""
    return [frozenset({i, *g.in_neighbors(i)}) for i in g.vertices]


def strongly_connected_components(g):
    """Tarjan's lowlink algorithm (iterative). Components are returned as sorted
    tuples, ordered by their smallest vertex."""
    succ = {v: g.out_neighbors(v) for v in g.vertices}
    index, low = {}, {}
    on_stack, stack = set(), []
    comps = []
    counter = 0
    for root in g.vertices:
        if root in index:
            continue
        work = [(root, 0)]
        while work:
            v, pi = work.pop()
            if pi == 0:
                index[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack.add(v)
            recurse = False
            nbrs = succ[v]
            for k in range(pi, len(nbrs)):
                w = nbrs[k]
                if w not in index:
                    work.append((v, k + 1))
                    work.append((w, 0))
                    recurse = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            if recurse:
                continue
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                comps.append(tuple(sorted(comp)))
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
    return sorted(comps, key=lambda c: c[0])


def condensation(g):
    """Component list and the set of component-level edges (by component index)."""
    comps = strongly_connected_components(g)
    where = {v: k for k, c in enumerate(comps) for v in c}
    cedges = {(where[i], where[j]) for (i, j) in g.edges if where[i] != where[j]}
    return comps, cedges


def source_components(g):
    comps, cedges = condensation(g)
    has_in = {b for (_, b) in cedges}
    return [
        SourceComponent(c, g.subgraph_edges(c))
        for k, c in enumerate(comps)
        if k not in has_in
    ]


def is_strongly_connected(g):
    return len(strongly_connected_components(g)) == 1


def rooted_forest_over_nonsource(g, sources=None):
    """Multi-source BFS from every source-component vertex over the remaining
    vertices. First-layer vertices become roots; every other vertex hangs
    from its BFS discoverer. Ties go to the lowest label."""
    if sources is None:
        sources = source_components(g)
    src = sorted(v for c in sources for v in c.vertices)
    src_set = set(src)
    discoverer = {}
    order = []
    queue = deque(src)
    seen = set(src)
    while queue:
        u = queue.popleft()
        for w in g.out_neighbors(u):
            if w not in seen:
                seen.add(w)
                discoverer[w] = u
                order.append(w)
                queue.append(w)
    v3 = set(g.vertices) - src_set
    assert set(order) == v3, "non-source vertex unreachable from the source components"

    roots = [v for v in order if discoverer[v] in src_set]
    tree_of = {}
    trees = {r: {} for r in roots}
    for v in order:
        d = discoverer[v]
        if d in src_set:
            tree_of[v] = v
        else:
            tree_of[v] = tree_of[d]
            trees[tree_of[v]][v] = d
    return RootedForest(
        trees=tuple((r, dict(trees[r])) for r in roots),
        covered=frozenset(v3),
        order=tuple(order),
        root_feeders={r: discoverer[r] for r in roots},
    )


def check_forest(g, forest, sources):
    """Verify the rooted-forest invariants; returns a list of problems (empty if fine)."""
    problems = []
    src_set = {v for c in sources for v in c.vertices}
    seen = set()
    for root, pm in forest.trees:
        verts = {root, *pm.keys()}
        if verts & seen:
            problems.append(f"tree at {root} overlaps another tree")
        seen |= verts
        for child, par in pm.items():
            if (par, child) not in g.edges:
                problems.append(f"tree edge ({par}, {child}) not in graph")
        # walk every vertex up to the root
        for v in verts:
            hops, cur = 0, v
            while cur != root:
                if cur not in pm or hops > len(verts):
                    problems.append(f"vertex {v} does not reach root {root}")
                    break
                cur = pm[cur]
                hops += 1
        if not any((s, root) in g.edges for s in src_set):
            problems.append(f"root {root} has no incoming edge from a source component")
    if seen != set(forest.covered):
        problems.append("forest does not cover exactly the non-source vertices")
    if set(forest.covered) != set(g.vertices) - src_set:
        problems.append("covered set differs from V minus sources")
    return problems
