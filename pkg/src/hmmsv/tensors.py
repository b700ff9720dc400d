"""Strided kernels for window-tensor algebra.

A window tensor over b variables, each taking k levels, is stored flat with
the most recent variable cycling fastest. Summing a variable out and
replicating a tensor over inserted variables are both realized as
reshape-and-reduce kernels; they act exactly like the corresponding structured
0/1 matrices (identity blocks around a summing row) without materializing
them.
"""

from __future__ import annotations

import numpy as np


def _infer_width(size: int, k: int) -> int:
    """Number of window variables in a flat tensor of the given size."""
    b, n = 0, 1
    while n < size:
        n *= k
        b += 1
    if n != size:
        raise ValueError(f"length {size} is not a power of {k}")
    return b


def marginalize(values, position: int, k: int) -> np.ndarray:
    """Sum out the window variable at the given 1-based position.

    values is a flat tensor over b variables (length k**b); the result covers
    the remaining b - 1 variables in the same order.
    """
    vals = np.asarray(values, dtype=float).reshape(-1)
    if position < 1:
        raise ValueError(f"position must be >= 1, got {position}")
    if k == 1:
        if vals.size != 1:
            raise ValueError(f"length {vals.size} is not a power of 1")
        return vals.copy()
    b = _infer_width(vals.size, k)
    if position > b:
        raise ValueError(f"position {position} outside 1..{b}")
    lead = k ** (position - 1)
    return vals.reshape(lead, k, -1).sum(axis=1).reshape(-1)


def expand_broadcast(values, positions, k: int) -> np.ndarray:
    """Insert variables at the given 1-based target positions by replication.

    The result is constant over each inserted variable. Inserting at position
    1 replicates the whole tensor (a leading variable cycles slowest);
    inserting at the last position repeats each entry (a trailing variable
    cycles fastest). Marginalizing an inserted variable and dividing by k
    recovers the input.
    """
    vals = np.asarray(values, dtype=float).reshape(-1)
    pos = sorted(int(p) for p in positions)
    if not pos:
        return vals.copy()
    if k == 1:
        if vals.size != 1:
            raise ValueError(f"length {vals.size} is not a power of 1")
        return vals.copy()
    b = _infer_width(vals.size, k)
    n = b + len(pos)
    if len(set(pos)) != len(pos) or pos[0] < 1 or pos[-1] > n:
        raise ValueError(f"insert positions {positions!r} incompatible with a {n}-variable window")
    arr = vals.reshape((k,) * b) if b else vals.reshape(())
    for p in pos:
        arr = np.expand_dims(arr, axis=p - 1)
    return np.ravel(np.broadcast_to(arr, (k,) * n)).copy()
