"""Named, order-independent random streams split from one root seed."""

import zlib

import numpy as np


def derive_seed(root, *path):
    """Stable 63-bit seed for ``(root, *path)``; path items are str or int."""
    key = [zlib.crc32(p.encode()) if isinstance(p, str) else int(p) for p in path]
    ss = np.random.SeedSequence(entropy=int(root), spawn_key=key)
    hi, lo = (int(v) for v in ss.generate_state(2, dtype=np.uint32))
    return (hi >> 1) << 32 | lo


def stream(root, *path):
    return np.random.default_rng(derive_seed(root, *path))
