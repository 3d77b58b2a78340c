"""Planar convex hull, answered as pointers into the x-sorted input."""

from __future__ import annotations

import numpy as np

from ..errors import DataError, GenerationError
from . import geometry
from .base import LessonSpec, Task, TaskInstance, sample_range

CURRICULUM = [(5, 20), (10, 20), (15, 25), (20, 35)]
SCALE = 1000  # coordinates carry three decimals


def _grid(points):
    return [(round(x * SCALE), round(y * SCALE)) for x, y in points]


class ConvexHullTask(Task):
    name = "convex-hull"
    query_len = 0
    data_width = 2

    def __init__(self, max_points=50, max_retries=100):
        self.max_points = max_points
        self.max_retries = max_retries
        # class 0 terminates, class i points at input position i - 1
        self.output_heads = (max_points + 1,)

    def default_curriculum(self):
        return [LessonSpec(points=r) for r in CURRICULUM]

    def generate(self, lesson, seed, unique_target=False, size=None, lesson_id=None):
        lesson.require("points")
        rng = np.random.default_rng(seed)
        n = sample_range(rng, lesson.points) if size is None else int(size)
        if not 3 <= n <= self.max_points:
            raise GenerationError(f"point count {n} outside [3, {self.max_points}]")
        for attempt in range(self.max_retries):
            grid = set()
            while len(grid) < n:
                grid.update(tuple(int(v) for v in p) for p in rng.integers(0, SCALE + 1, size=(n - len(grid), 2)))
            grid = sorted(grid)
            hull = geometry.convex_hull_indices(grid)
            polygon = [grid[i] for i in hull]
            on_hull = set(hull)
            if len(hull) < 3 or not all(geometry.strictly_inside(polygon, grid[i])
                                        for i in range(n) if i not in on_hull):
                continue  # collinear boundary points make the target ambiguous
            points = [[x / SCALE, y / SCALE] for x, y in grid]
            return TaskInstance(
                kind=self.name, seed=int(seed), lesson=lesson_id,
                raw={"points": points}, query=None, target=hull, meta={"n": n},
            )
        raise GenerationError("could not draw points in general position", self.max_retries)

    def description(self, inst):
        return np.array(inst.raw["points"], dtype=np.float32).reshape(-1, 2)

    def decode_input(self, seq):
        return {"points": [[round(float(x), 3), round(float(y), 3)] for x, y in seq[:, :2]]}

    def presented(self, inst):
        return {"points": inst.raw["points"]}

    def answer_labels(self, answer):
        idx = np.asarray(answer, dtype=np.int64).reshape(-1, 1)
        if (idx >= self.max_points).any():
            raise DataError("hull index beyond max_points")
        return idx + 1

    def labels_to_answer(self, labels):
        return [int(v) - 1 for v in np.asarray(labels).reshape(-1)]

    def feedback(self, inst, labels):
        i = int(labels[0]) - 1
        x = np.zeros(self.data_width, dtype=np.float32)
        if 0 <= i < len(inst.raw["points"]):
            x[:] = inst.raw["points"][i]
        return x

    def canonical(self, answer):
        return tuple(int(i) for i in answer)

    def compute_oracle(self, inst):
        return {tuple(geometry.convex_hull_indices(_grid(inst.raw["points"])))}

    def max_target_len(self, lesson):
        return lesson.points[1] + 1
