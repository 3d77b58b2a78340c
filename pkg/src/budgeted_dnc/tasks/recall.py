"""Associative recall over lists of base-10 items."""

from __future__ import annotations

import numpy as np

from ..errors import DataError, GenerationError
from .base import LessonSpec, Task, TaskInstance, sample_range

CURRICULUM = [(5, 10), (5, 15), (10, 20), (15, 25), (20, 25)]
MAX_DIGITS = 5


class RecallTask(Task):
    """Each item occupies one step: up to five digit slots, one-hot over 0-9.

    Digits are left-aligned; unused slots stay zero. A delimiter step follows
    every item. The query re-presents one item in a single step and the
    answer is the item that followed it. Output heads are one per slot with
    class 0 meaning "blank" and class ``d + 1`` meaning digit ``d``; a blank
    first slot is the terminator.
    """

    name = "associative-recall"
    query_len = 1
    data_width = 10 * MAX_DIGITS + 1
    output_heads = (11,) * MAX_DIGITS
    delimiter = 10 * MAX_DIGITS

    def __init__(self, max_retries=100):
        self.max_retries = max_retries

    def default_curriculum(self):
        return [LessonSpec(items=r, digits=(1, 5)) for r in CURRICULUM]

    def generate(self, lesson, seed, unique_target=False, size=None, lesson_id=None):
        lesson.require("items", "digits")
        rng = np.random.default_rng(seed)
        d1, d2 = lesson.digits
        if not 1 <= d1 <= d2 <= MAX_DIGITS:
            raise GenerationError(f"digits {lesson.digits} outside [1, {MAX_DIGITS}]")
        lo, hi = (0 if d1 == 1 else 10 ** (d1 - 1)), 10 ** d2 - 1
        n = sample_range(rng, lesson.items) if size is None else int(size)
        if n < 2:
            raise GenerationError("recall needs at least two items")
        if n > hi - lo + 1:
            raise GenerationError(f"{n} distinct items requested from a pool of {hi - lo + 1}")
        items = [str(int(v)) for v in rng.choice(np.arange(lo, hi + 1), size=n, replace=False)]
        q = int(rng.integers(n - 1))
        return TaskInstance(
            kind=self.name, seed=int(seed), lesson=lesson_id,
            raw={"items": items}, query=[items[q]], target=[items[q + 1]],
            meta={"n": n, "query_index": q},
        )

    @staticmethod
    def item_vector(item):
        if not item.isdigit() or not 1 <= len(item) <= MAX_DIGITS:
            raise DataError(f"bad recall item {item!r}")
        x = np.zeros(RecallTask.data_width, dtype=np.float32)
        for slot, ch in enumerate(item):
            x[10 * slot + int(ch)] = 1
        return x

    @staticmethod
    def vector_item(x):
        digits = []
        for slot in range(MAX_DIGITS):
            block = x[10 * slot:10 * slot + 10]
            if block.sum() == 0:
                break
            digits.append(str(int(np.argmax(block))))
        return "".join(digits)

    def description(self, inst):
        rows = []
        for item in inst.raw["items"]:
            rows.append(self.item_vector(item))
            delim = np.zeros(self.data_width, dtype=np.float32)
            delim[self.delimiter] = 1
            rows.append(delim)
        return np.stack(rows)

    def query(self, inst):
        return self.item_vector(inst.query[0])[None, :]

    def decode_input(self, seq):
        data = seq[:, :self.data_width]
        items = [self.vector_item(x) for x in data[:-1] if x[self.delimiter] == 0]
        return {"items": items, "query": [self.vector_item(data[-1])]}

    def presented(self, inst):
        return {"items": inst.raw["items"], "query": inst.query}

    def answer_labels(self, answer):
        rows = np.zeros((len(answer), MAX_DIGITS), dtype=np.int64)
        for r, item in enumerate(answer):
            for slot, ch in enumerate(item):
                rows[r, slot] = int(ch) + 1
        return rows

    def labels_to_answer(self, labels):
        out = []
        for row in labels:
            digits = []
            for v in row:
                if v == 0:
                    break
                digits.append(str(int(v) - 1))
            out.append("".join(digits))
        return out

    def feedback(self, inst, labels):
        x = np.zeros(self.data_width, dtype=np.float32)
        for slot, v in enumerate(labels):
            if v == 0:
                break
            x[10 * slot + int(v) - 1] = 1
        return x

    def canonical(self, answer):
        return tuple(answer)

    def compute_oracle(self, inst):
        items = inst.raw["items"]
        q = items.index(inst.query[0])
        return {(items[q + 1],)}

    def max_target_len(self, lesson):
        return 2
