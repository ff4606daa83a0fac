"""Mixed-radix encoding of joint states/actions.

Tuples are encoded in ascending agent order with the first (lowest-index)
agent most significant, i.e. the same convention as numpy's C-order
ravel_multi_index. This encoding is part of the on-disk checkpoint format.
"""

from __future__ import annotations

import numpy as np


def radix_weights(sizes) -> np.ndarray:
    """Per-position multipliers such that encode(v) = v . weights."""
    sizes = np.asarray(sizes, dtype=np.int64)
    w = np.ones(len(sizes), dtype=np.int64)
    for k in range(len(sizes) - 2, -1, -1):
        w[k] = w[k + 1] * sizes[k + 1]
    return w


def encode(values, sizes) -> int:
    idx = 0
    for v, m in zip(values, sizes):
        if not (0 <= v < m):
            raise ValueError(f"value {v} out of range [0, {m})")
        idx = idx * m + v
    return idx


def decode(idx, sizes) -> tuple:
    out = []
    for m in reversed(sizes):
        out.append(idx % m)
        idx //= m
    return tuple(reversed(out))


def space_size(sizes) -> int:
    size = 1
    for m in sizes:
        size *= m
    return size


def enumerate_tuples(sizes):
    """All tuples of the product space in encoding order."""
    n = space_size(sizes)
    return [decode(i, sizes) for i in range(n)]


def decode_table(sizes) -> np.ndarray:
    """Array of shape (space_size, len(sizes)) listing all decoded tuples."""
    n = space_size(sizes)
    out = np.empty((n, len(sizes)), dtype=np.int64)
    for i in range(n):
        out[i] = decode(i, sizes)
    return out
