"""Graph shortest path: edges in, query (s, t), answer the path edge by edge."""

from __future__ import annotations

import itertools

import numpy as np

from ..errors import DataError, GenerationError
from . import graphs
from .base import LessonSpec, Task, TaskInstance, sample_range

CURRICULUM = [
    # nodes, average degree, path length
    ((5, 10), (1, 2), (2, 2)),
    ((5, 20), (1, 2), (2, 2)),
    ((10, 20), (1, 2), (2, 2)),
    ((10, 20), (1, 2), (2, 3)),
    ((10, 20), (1, 2), (2, 3)),
    ((10, 20), (1, 3), (2, 3)),
    ((10, 20), (2, 3), (2, 4)),
    ((10, 20), (2, 3), (2, 4)),
    ((10, 25), (2, 4), (2, 4)),
    ((10, 25), (2, 4), (2, 5)),
    ((15, 25), (2, 4), (2, 5)),
    ((15, 25), (2, 5), (2, 5)),
    ((20, 25), (2, 5), (2, 5)),
    ((20, 25), (2, 6), (2, 5)),
]


class EdgeCodec:
    """Edges as two concatenated one-hot label blocks; labels live in [1, n_max]."""

    def __init__(self, n_max=25):
        self.n_max = n_max
        self.data_width = 2 * n_max
        # class 0 of each head is the terminator, classes 1..n_max are labels
        self.output_heads = (n_max + 1, n_max + 1)

    def edge_vector(self, u, v):
        if not (1 <= u <= self.n_max and 1 <= v <= self.n_max):
            raise DataError(f"node label out of range [1, {self.n_max}]: {(u, v)}")
        x = np.zeros(self.data_width, dtype=np.float32)
        x[u - 1] = 1
        x[self.n_max + v - 1] = 1
        return x

    def vector_edge(self, x):
        a, b = x[:self.n_max], x[self.n_max:self.data_width]
        if a.sum() != 1 or b.sum() != 1:
            raise DataError("vector is not a pair of one-hot blocks")
        return int(np.argmax(a)) + 1, int(np.argmax(b)) + 1

    def edges_matrix(self, edges):
        if not edges:
            return np.zeros((0, self.data_width), dtype=np.float32)
        return np.stack([self.edge_vector(u, v) for u, v in edges])

    def feedback(self, labels):
        x = np.zeros(self.data_width, dtype=np.float32)
        u, v = int(labels[0]), int(labels[1])
        if 1 <= u <= self.n_max:
            x[u - 1] = 1
        if 1 <= v <= self.n_max:
            x[self.n_max + v - 1] = 1
        return x


def random_labels(rng, count, n_max):
    if count > n_max:
        raise GenerationError(f"{count} nodes do not fit label range [1, {n_max}]")
    return [int(v) for v in rng.choice(np.arange(1, n_max + 1), size=count, replace=False)]


def shuffled_edges(rng, edges):
    """Random presentation order and endpoint orientation."""
    order = rng.permutation(len(edges))
    flips = rng.integers(0, 2, size=len(edges))
    out = []
    for i, f in zip(order, flips):
        u, v = edges[i]
        out.append([v, u] if f else [u, v])
    return out


class ShortestPathTask(Task):
    name = "shortest-path"
    query_len = 1

    def __init__(self, n_max=25, max_retries=1000):
        self.codec = EdgeCodec(n_max)
        self.n_max = n_max
        self.max_retries = max_retries
        self.data_width = self.codec.data_width
        self.output_heads = self.codec.output_heads

    def default_curriculum(self):
        return [LessonSpec(nodes=n, degree=d, path_length=p) for n, d, p in CURRICULUM]

    def generate(self, lesson, seed, unique_target=False, size=None, lesson_id=None):
        lesson.require("nodes", "degree", "path_length")
        rng = np.random.default_rng(seed)
        p1, p2 = lesson.path_length
        for attempt in range(self.max_retries):
            if size is None:
                n = min(sample_range(rng, lesson.nodes), self.n_max)
                m = int(rng.integers(n * lesson.degree[0] // 2, n * lesson.degree[1] // 2 + 1))
            else:
                need = next((k for k in itertools.count(2) if k * (k - 1) // 2 >= size))
                lo, hi = max(lesson.nodes[0], need), max(lesson.nodes[1], need)
                if lo > self.n_max:
                    raise GenerationError(f"{size} edges need {need} > n_max={self.n_max} nodes", attempt)
                n = int(rng.integers(lo, min(hi, self.n_max) + 1))
                m = size
            pairs = list(itertools.combinations(range(n), 2))
            m = min(m, len(pairs))
            chosen = [pairs[i] for i in sorted(rng.choice(len(pairs), size=m, replace=False))]
            labels = random_labels(rng, n, self.n_max)
            edges = [(labels[a], labels[b]) for a, b in chosen]
            adj = graphs.adjacency(labels, edges)
            candidates = []
            for s in labels:
                dist = graphs.bfs_distances(adj, s)
                candidates += [(s, t) for t in labels if t != s and p1 <= dist.get(t, -1) <= p2]
            if not candidates:
                continue
            s, t = candidates[int(rng.integers(len(candidates)))]
            if unique_target:
                edges = graphs.enforce_unique_shortest_path(labels, edges, s, t, rng)
                adj = graphs.adjacency(labels, edges)
            path = graphs.all_shortest_paths(adj, s, t)[0]
            presented = shuffled_edges(rng, edges)
            return TaskInstance(
                kind=self.name, seed=int(seed), lesson=lesson_id,
                raw={"nodes": sorted(labels), "edges": presented},
                query=[s, t],
                target=[list(e) for e in graphs.path_edges(path)],
                meta={"n": len(presented), "nodes": n, "edges": len(presented), "path_len": len(path) - 1,
                      "n_max": self.n_max, "unique": bool(unique_target)},
            )
        raise GenerationError(f"no query with path length in {lesson.path_length}", self.max_retries)

    def description(self, inst):
        return self.codec.edges_matrix(inst.raw["edges"])

    def query(self, inst):
        return self.codec.edge_vector(*inst.query)[None, :]

    def decode_input(self, seq):
        rows = [self.codec.vector_edge(x) for x in seq[:, :self.data_width]]
        return {"edges": [list(e) for e in rows[:-1]], "query": list(rows[-1])}

    def presented(self, inst):
        return {"edges": inst.raw["edges"], "query": inst.query}

    def answer_labels(self, answer):
        return np.array(answer, dtype=np.int64).reshape(-1, 2)

    def labels_to_answer(self, labels):
        return [[int(a), int(b)] for a, b in labels]

    def feedback(self, inst, labels):
        return self.codec.feedback(labels)

    def canonical(self, answer):
        return tuple((int(a), int(b)) for a, b in answer)

    def compute_oracle(self, inst):
        adj = graphs.adjacency(inst.raw["nodes"], inst.raw["edges"])
        s, t = inst.query
        return {tuple(graphs.path_edges(p)) for p in graphs.all_shortest_paths(adj, s, t)}

    def max_target_len(self, lesson):
        return lesson.path_length[1] + 1
