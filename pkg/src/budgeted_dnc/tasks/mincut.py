"""Global minimum cut on clustered graphs with a planted cut."""

from __future__ import annotations

import itertools

import numpy as np

from ..errors import ConfigError, GenerationError
from . import graphs
from .base import LessonSpec, Task, TaskInstance, sample_range
from .shortest_path import EdgeCodec, random_labels, shuffled_edges

CURRICULUM = [
    # nodes, cut size, max degree per cluster
    ((10, 15), (1, 1), 3),
    ((10, 15), (2, 3), 5),
    ((15, 20), (2, 3), 5),
    ((15, 20), (2, 4), 6),
    ((20, 25), (2, 4), 6),
]


def cluster_graph(size, min_degree, max_degree, min_connectivity, rng, retries=200):
    """Random graph on ``range(size)`` with bounded degrees and edge connectivity.

    Starts from a random Hamiltonian cycle, tops up the lowest-degree
    vertices until every degree reaches ``min_degree``, sprinkles a random
    number of extra edges, and rejects results whose edge connectivity is
    below ``min_connectivity``.
    """
    if max_degree < min_degree or size < min_degree + 1:
        raise ConfigError(f"cluster of {size} nodes cannot have degrees in [{min_degree}, {max_degree}]")
    for _ in range(retries):
        order = [int(v) for v in rng.permutation(size)]
        edges = {graphs.edge_key(order[i], order[(i + 1) % size]) for i in range(size)}
        degree = [2] * size
        ok = True
        while min(degree) < min_degree:
            low = min(degree)
            lows = [v for v in range(size) if degree[v] == low]
            u = lows[int(rng.integers(len(lows)))]
            options = [v for v in range(size)
                       if v != u and graphs.edge_key(u, v) not in edges and degree[v] < max_degree]
            if not options:
                ok = False
                break
            needy = [v for v in options if degree[v] < min_degree]
            pool = needy or options
            v = pool[int(rng.integers(len(pool)))]
            edges.add(graphs.edge_key(u, v))
            degree[u] += 1
            degree[v] += 1
        if not ok:
            continue
        for _ in range(int(rng.integers(0, size // 2 + 1))):
            u, v = (int(x) for x in rng.choice(size, size=2, replace=False))
            if graphs.edge_key(u, v) not in edges and degree[u] < max_degree and degree[v] < max_degree:
                edges.add(graphs.edge_key(u, v))
                degree[u] += 1
                degree[v] += 1
        value, _ = graphs.stoer_wagner(range(size), sorted(edges))
        if value >= min_connectivity:
            return sorted(edges)
    raise GenerationError(f"no cluster graph of {size} nodes with connectivity {min_connectivity}", retries)


class MinCutTask(Task):
    name = "mincut"
    query_len = 0

    def __init__(self, n_max=25, max_retries=200):
        self.codec = EdgeCodec(n_max)
        self.n_max = n_max
        self.max_retries = max_retries
        self.data_width = self.codec.data_width
        self.output_heads = self.codec.output_heads

    def default_curriculum(self):
        return [LessonSpec(nodes=n, cut=c, max_degree=d, clusters=(2, 3)) for n, c, d in CURRICULUM]

    def _plant(self, rng, n, c, k, max_degree, unique, size):
        sizes = [c + 2] * k
        for _ in range(n - k * (c + 2)):
            sizes[int(rng.integers(k))] += 1
        groups, edges, start = [], set(), 0
        for s in sizes:
            nodes = list(range(start, start + s))
            for u, v in cluster_graph(s, c + 1, max_degree, c + 1, rng):
                edges.add((nodes[u], nodes[v]))
            groups.append(nodes)
            start += s
        first, rest = groups[0], [v for g in groups[1:] for v in g]
        cross = [(u, v) for u in first for v in rest]
        cut = [cross[i] for i in sorted(rng.choice(len(cross), size=min(c, len(cross)), replace=False))]
        edges.update(cut)
        if k > 2:
            need = c + 1 if unique else c
            owner = {v: i for i, g in enumerate(groups) for v in g}
            for i in range(1, k):
                inner = [(u, v) for u in groups[i] for j in range(1, k) if j != i for v in groups[j]]
                inner = [graphs.edge_key(u, v) for u, v in inner if graphs.edge_key(u, v) not in edges]
                count = sum(1 for u, v in edges if (owner[u] == i) != (owner[v] == i))
                picks = rng.permutation(len(inner))[:max(0, need - count)]
                edges.update(inner[j] for j in picks)
        if size is not None:
            owner = {v: i for i, g in enumerate(groups) for v in g}
            spare = [graphs.edge_key(u, v) for g in groups for u, v in itertools.combinations(g, 2)
                     if graphs.edge_key(u, v) not in edges]
            if len(edges) > size or len(edges) + len(spare) < size:
                return None
            edges.update(spare[j] for j in rng.permutation(len(spare))[:size - len(edges)])
        return sorted(edges), cut

    def generate(self, lesson, seed, unique_target=False, size=None, lesson_id=None):
        lesson.require("nodes", "cut", "max_degree")
        rng = np.random.default_rng(seed)
        clusters = lesson.clusters or (2, 3)
        for attempt in range(self.max_retries):
            n = min(sample_range(rng, lesson.nodes), self.n_max)
            c = sample_range(rng, lesson.cut)
            k = min(sample_range(rng, clusters), n // (c + 2))
            if k < 2:
                raise GenerationError(f"{n} nodes cannot hold two groups of {c + 2}", attempt)
            max_degree = sample_range(rng, lesson.max_degree)
            planted = self._plant(rng, n, c, k, max_degree, unique_target, size)
            if planted is None:
                continue
            edges, cut = planted
            if graphs.stoer_wagner(range(n), edges)[0] != c:
                continue
            labels = random_labels(rng, n, self.n_max)
            edges = [(labels[u], labels[v]) for u, v in edges]
            cut = sorted(graphs.edge_key(labels[u], labels[v]) for u, v in cut)
            inst = TaskInstance(
                kind=self.name, seed=int(seed), lesson=lesson_id,
                raw={"nodes": sorted(labels), "edges": shuffled_edges(rng, edges)},
                query=None,
                target=[list(e) for e in cut],
                meta={"n": len(edges), "nodes": n, "edges": len(edges), "cut": c, "clusters": k,
                      "n_max": self.n_max, "unique": bool(unique_target)},
            )
            if unique_target and len(self.oracle_answers(inst)) != 1:
                continue
            return inst
        raise GenerationError(f"could not plant a cut for lesson {lesson}", self.max_retries)

    def description(self, inst):
        return self.codec.edges_matrix(inst.raw["edges"])

    def decode_input(self, seq):
        return {"edges": [list(self.codec.vector_edge(x)) for x in seq[:, :self.data_width]]}

    def presented(self, inst):
        return {"edges": inst.raw["edges"]}

    def answer_labels(self, answer):
        return np.array(answer, dtype=np.int64).reshape(-1, 2)

    def labels_to_answer(self, labels):
        return [[int(a), int(b)] for a, b in labels]

    def feedback(self, inst, labels):
        return self.codec.feedback(labels)

    def canonical(self, answer):
        keys = [graphs.edge_key(int(a), int(b)) for a, b in answer]
        if len(set(keys)) != len(keys):
            return None
        return frozenset(keys)

    def compute_oracle(self, inst):
        return graphs.all_min_cuts(inst.raw["nodes"], [tuple(e) for e in inst.raw["edges"]])[1]

    def max_target_len(self, lesson):
        return lesson.cut[1] + 1
