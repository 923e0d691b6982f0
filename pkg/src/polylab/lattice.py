"""Reachable cones of the nearest-neighbour walk on Z^d.

Points of the time-n cone satisfy ``|x|_1 <= n`` and ``|x|_1 = n (mod 2)`` and are
stored in lexicographic order.  Neighbour tables map each point to the indices of
its 2d neighbours in the adjacent cone, in the fixed order -e_1, +e_1, -e_2, ...
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np


def _ball(dim: int, radius: int) -> np.ndarray:
    if dim == 1:
        return np.arange(-radius, radius + 1, dtype=np.int64)[:, None]
    blocks = []
    for x1 in range(-radius, radius + 1):
        sub = _ball(dim - 1, radius - abs(x1))
        blocks.append(np.column_stack([np.full(len(sub), x1, dtype=np.int64), sub]))
    return np.concatenate(blocks)


@lru_cache(maxsize=None)
def cone(dim: int, n: int) -> np.ndarray:
    if dim < 1 or n < 0:
        raise ValueError("dim must be >= 1 and n >= 0")
    pts = _ball(dim, n)
    pts = pts[(np.abs(pts).sum(axis=1) - n) % 2 == 0]
    pts.setflags(write=False)
    return pts


def cone_size(dim: int, n: int) -> int:
    return len(cone(dim, n))


def _encode(points: np.ndarray, radius: int) -> np.ndarray:
    base = 2 * radius + 3
    code = np.zeros(len(points), dtype=np.int64)
    for i in range(points.shape[1]):
        code = code * base + (points[:, i] + radius + 1)
    return code


def _lookup(target: np.ndarray, queries: np.ndarray, radius: int) -> np.ndarray:
    codes = _encode(target, radius)  # sorted, since target is lexicographic
    q = _encode(queries, radius)
    pos = np.searchsorted(codes, q)
    pos = np.minimum(pos, len(codes) - 1)
    return np.where(codes[pos] == q, pos, -1)


def unit_steps(dim: int) -> np.ndarray:
    steps = np.zeros((2 * dim, dim), dtype=np.int64)
    for i in range(dim):
        steps[2 * i, i] = -1
        steps[2 * i + 1, i] = 1
    return steps


@lru_cache(maxsize=None)
def down_neighbors(dim: int, n: int) -> np.ndarray:
    """For each point of cone(n+1), indices of its neighbours in cone(n), or -1."""
    src, dst = cone(dim, n), cone(dim, n + 1)
    steps = unit_steps(dim)
    out = np.empty((len(dst), 2 * dim), dtype=np.int64)
    for j, e in enumerate(steps):
        out[:, j] = _lookup(src, dst + e, n + 1)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def up_neighbors(dim: int, n: int) -> np.ndarray:
    """For each point of cone(n), indices of its 2d neighbours in cone(n+1)."""
    src, dst = cone(dim, n), cone(dim, n + 1)
    steps = unit_steps(dim)
    out = np.empty((len(src), 2 * dim), dtype=np.int64)
    for j, e in enumerate(steps):
        out[:, j] = _lookup(dst, src + e, n + 1)
    if (out < 0).any():
        raise AssertionError("cone(n+1) must contain every neighbour of cone(n)")
    out.setflags(write=False)
    return out
