"""Task generators, encoders and exact oracles."""

from ..errors import ConfigError
from .base import LessonSpec, Task, TaskInstance
from .hull import ConvexHullTask
from .mincut import MinCutTask
from .recall import RecallTask
from .shortest_path import ShortestPathTask

TASKS = {
    ShortestPathTask.name: ShortestPathTask,
    MinCutTask.name: MinCutTask,
    RecallTask.name: RecallTask,
    ConvexHullTask.name: ConvexHullTask,
}

# memory shape (cells, word size) used when training each task
DEFAULT_MEMORY = {
    ShortestPathTask.name: (200, 128),
    MinCutTask.name: (200, 128),
    RecallTask.name: (100, 32),
    ConvexHullTask.name: (50, 64),
}

DEFAULT_HIDDEN = {
    ShortestPathTask.name: 256,
    MinCutTask.name: 256,
    RecallTask.name: 64,
    ConvexHullTask.name: 64,
}


def make_task(kind, **options):
    try:
        cls = TASKS[kind]
    except KeyError:
        raise ConfigError(f"unknown task {kind!r}; expected one of {sorted(TASKS)}") from None
    return cls(**options)


__all__ = ["TASKS", "DEFAULT_MEMORY", "DEFAULT_HIDDEN", "LessonSpec", "Task", "TaskInstance", "make_task",
           "ShortestPathTask", "MinCutTask", "RecallTask", "ConvexHullTask"]
