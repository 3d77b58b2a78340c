"""Exact graph oracles on small undirected simple graphs.

Graphs are given as an iterable of nodes plus a list of ``(u, v)`` edges;
internally they become ``dict[node, set[node]]`` adjacency maps.
"""

from __future__ import annotations

from collections import deque
from itertools import pairwise

from ..errors import NoPathError


def adjacency(nodes, edges):
    adj = {v: set() for v in nodes}
    for u, v in edges:
        adj.setdefault(u, set()).add(v)
        adj.setdefault(v, set()).add(u)
    return adj


def edge_key(u, v):
    return (u, v) if u <= v else (v, u)


def bfs_distances(adj, source):
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if w not in dist:
                dist[w] = dist[u] + 1
                queue.append(w)
    return dist


def is_connected(adj):
    if not adj:
        return True
    return len(bfs_distances(adj, next(iter(adj)))) == len(adj)


def all_shortest_paths(adj, s, t):
    """Every shortest s-t path as a node list, sorted lexicographically."""
    from_s = bfs_distances(adj, s)
    if t not in from_s:
        raise NoPathError(f"no path between {s} and {t}")
    to_t = bfs_distances(adj, t)
    d = from_s[t]
    paths = []

    def extend(path):
        u = path[-1]
        if u == t:
            paths.append(list(path))
            return
        k = len(path)
        for w in sorted(adj[u]):
            if from_s.get(w) == k and to_t.get(w) == d - k:
                path.append(w)
                extend(path)
                path.pop()

    extend([s])
    return paths


def path_edges(path):
    return [(a, b) for a, b in pairwise(path)]


def enforce_unique_shortest_path(nodes, edges, s, t, rng):
    """Delete edges until exactly one shortest s-t path remains.

    The lexicographically smallest shortest path is kept; each round removes
    one randomly chosen edge, not on the kept path, of the next competing
    path, then re-enumerates. Returns the pruned edge list (input order kept).
    """
    edges = [tuple(e) for e in edges]
    alive = {edge_key(*e) for e in edges}
    while True:
        paths = all_shortest_paths(adjacency(nodes, [e for e in edges if edge_key(*e) in alive]), s, t)
        if len(paths) == 1:
            break
        keep = {edge_key(*e) for e in path_edges(paths[0])}
        choices = sorted(edge_key(*e) for e in path_edges(paths[1]) if edge_key(*e) not in keep)
        alive.discard(choices[int(rng.integers(len(choices)))])
    return [e for e in edges if edge_key(*e) in alive]


def stoer_wagner(nodes, edges):
    """Global minimum cut of an unweighted multigraph-free graph.

    Returns ``(value, side)`` where ``side`` is one shore of a minimum cut.
    """
    nodes = list(nodes)
    if len(nodes) < 2:
        raise ValueError("min cut needs at least two nodes")
    index = {v: i for i, v in enumerate(nodes)}
    n = len(nodes)
    w = [[0] * n for _ in range(n)]
    for u, v in edges:
        a, b = index[u], index[v]
        w[a][b] += 1
        w[b][a] += 1
    groups = [{v} for v in nodes]
    active = list(range(n))
    best_value, best_side = None, None
    while len(active) > 1:
        weights = {v: 0 for v in active}
        added = []
        remaining = set(active)
        prev = last = None
        while remaining:
            # ties broken by position in ``active`` for determinism
            nxt = max(remaining, key=lambda v: (weights[v], -active.index(v)))
            remaining.discard(nxt)
            prev, last = last, nxt
            added.append(nxt)
            for v in remaining:
                weights[v] += w[nxt][v]
        cut_value = weights[last]
        if best_value is None or cut_value < best_value:
            best_value, best_side = cut_value, set(groups[last])
        groups[prev] |= groups[last]
        for v in active:
            w[prev][v] += w[last][v]
            w[v][prev] = w[prev][v]
        w[prev][prev] = 0
        active.remove(last)
    return best_value, best_side


def _max_flow_residual(adj, s, t, limit):
    """Unit-capacity max flow; returns ``(value, flow)`` stopping once value > limit."""
    flow = {}
    value = 0

    def residual(u, v):
        return 1 - flow.get((u, v), 0)

    while value <= limit:
        parent = {s: None}
        queue = deque([s])
        while queue and t not in parent:
            u = queue.popleft()
            for v in sorted(adj[u]):
                if v not in parent and residual(u, v) > 0:
                    parent[v] = u
                    queue.append(v)
        if t not in parent:
            break
        v = t
        while parent[v] is not None:
            u = parent[v]
            flow[(u, v)] = flow.get((u, v), 0) + 1
            flow[(v, u)] = flow.get((v, u), 0) - 1
            v = u
        value += 1
    return value, flow


def _min_st_cut_sides(adj, s, t, flow):
    """Enumerate every source side of a minimum s-t cut (residual closures)."""
    def reach(starts, forward=True):
        seen = set(starts)
        stack = list(starts)
        while stack:
            u = stack.pop()
            for v in adj[u]:
                arc = (u, v) if forward else (v, u)
                if v not in seen and 1 - flow.get(arc, 0) > 0:
                    seen.add(v)
                    stack.append(v)
        return seen

    source_side = reach([s])
    sink_side = reach([t], forward=False)
    free = sorted(v for v in adj if v not in source_side and v not in sink_side)
    sides = []

    def recurse(i, inside, outside):
        if i == len(free):
            sides.append(frozenset(inside))
            return
        v = free[i]
        if v in inside or v in outside:
            recurse(i + 1, inside, outside)
            return
        grown = reach(inside | {v})
        if not grown & outside:
            recurse(i + 1, grown, outside)
        shrunk = outside | reach([v], forward=False)
        if not shrunk & inside:
            recurse(i + 1, inside, shrunk)

    recurse(0, source_side, sink_side)
    return sides


def all_min_cuts(nodes, edges):
    """Every global minimum cut as a frozenset of canonical edges.

    Returns ``(value, cuts)``. Fixes the smallest node as source and, for
    each sink whose max flow equals the global minimum, enumerates all
    minimum s-t cuts through closures of the residual graph.
    """
    nodes = sorted(nodes)
    adj = adjacency(nodes, edges)
    value, _ = stoer_wagner(nodes, edges)
    s = nodes[0]
    cuts = set()
    for t in nodes[1:]:
        flow_value, flow = _max_flow_residual(adj, s, t, value)
        if flow_value != value:
            continue
        for side in _min_st_cut_sides(adj, s, t, flow):
            cuts.add(frozenset(edge_key(u, v) for u, v in edges if (u in side) != (v in side)))
    return value, cuts
