"""Counter-based 64-bit hashing shared by every sampler.

A stream is a 64-bit key; draw ``i`` of the stream is ``mix64(key + (i+1)*GOLDEN)``,
which is exactly the SplitMix64 output sequence started from ``key``.  Environment
sites get their own stream key derived from (seed, replicate, t, x), so site values
can be produced lazily and in any order.
"""
from __future__ import annotations

import numba as nb
import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = np.uint64(0x9E3779B97F4A7C15)
GOLDEN2 = np.uint64((2 * 0x9E3779B97F4A7C15) & MASK64)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)

SEED_SALT = 0x243F6A8885A308D3
ENV_SALT = 0x13198A2E03707344
SITE_SALT = 0xA4093822299F31D0
DISP_SALT = 0x082EFA98EC4E6C89

TWO_M53 = 2.0 ** -53
COORD_BITS = 12
COORD_OFFSET = 1 << (COORD_BITS - 1)
MAX_TIME = (1 << 16) - 1
MAX_DIM = 4


@nb.njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(cache=True, inline="always")
def draw_bits(key, index):
    return mix64(key + np.uint64(index + 1) * GOLDEN)


@nb.njit(cache=True, inline="always")
def site_key(env_key, site_code):
    return mix64(env_key + site_code)


@nb.njit(cache=True, inline="always")
def uniform53(h):
    """Uniform on [0, 1) from the top 53 bits."""
    return float(h >> _S11) * TWO_M53


@nb.njit(cache=True, inline="always")
def atom_index(h, thresholds):
    # branchless count of thresholds <= u; the last threshold is 2^53
    u = h >> _S11
    i = 0
    for j in range(thresholds.shape[0] - 1):
        i += u >= thresholds[j]
    return i


@nb.njit(cache=True, inline="always")
def std_normal(h0, h1):
    # Box-Muller, one variate per pair of draws
    u1 = (float(h0 >> _S11) + 1.0) * TWO_M53
    u2 = float(h1 >> _S11) * TWO_M53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@nb.njit(cache=True, inline="always")
def value_from_key(key, kind, thresholds, atoms, mu, sigma):
    h0 = draw_bits(key, 0)
    if kind == 0:
        return atoms[atom_index(h0, thresholds)]
    return mu + sigma * std_normal(h0, draw_bits(key, 1))


@nb.njit(cache=True)
def _stream_values(key, start, count, kind, thresholds, atoms, mu, sigma):
    out = np.empty(count)
    for i in range(count):
        h0 = draw_bits(key, 2 * (start + i))
        if kind == 0:
            out[i] = atoms[atom_index(h0, thresholds)]
        else:
            out[i] = mu + sigma * std_normal(h0, draw_bits(key, 2 * (start + i) + 1))
    return out


@nb.njit(cache=True)
def _site_values(env_key, codes, kind, thresholds, atoms, mu, sigma):
    out = np.empty(codes.shape[0])
    for i in range(codes.shape[0]):
        out[i] = value_from_key(site_key(env_key, codes[i]), kind, thresholds, atoms, mu, sigma)
    return out


@nb.njit(cache=True)
def _mix_array(z):
    out = np.empty_like(z)
    for i in range(z.shape[0]):
        out[i] = mix64(z[i])
    return out


def as_u64(value: int) -> np.uint64:
    return np.uint64(int(value) & MASK64)


def _mix_int(value: int) -> int:
    return int(mix64(as_u64(value)))


def seed_key(master_seed: int) -> int:
    return _mix_int(int(master_seed) + SEED_SALT)


def stream_key(master_seed: int, stream_id: int) -> int:
    sid = _mix_int(int(stream_id) ^ SEED_SALT)
    return _mix_int(seed_key(master_seed) + sid)


def env_key(master_seed: int, replicate: int) -> int:
    return stream_key(int(master_seed) ^ ENV_SALT, replicate)


def env_keys(master_seed: int, first: int, count: int) -> np.ndarray:
    return np.array([env_key(master_seed, first + i) for i in range(count)], dtype=np.uint64)


def stream_keys(master_seed: int, first: int, count: int) -> np.ndarray:
    return np.array([stream_key(master_seed, first + i) for i in range(count)], dtype=np.uint64)


def pack_sites(t, points: np.ndarray) -> np.ndarray:
    """Injective 64-bit code of space-time sites, mixed with the site salt.

    ``t`` is a scalar or an array broadcastable against ``points[:, 0]``.
    """
    points = np.asarray(points, dtype=np.int64)
    if points.ndim != 2 or points.shape[1] > MAX_DIM:
        raise ValueError(f"points must have shape (S, d) with d <= {MAX_DIM}")
    t = np.broadcast_to(np.asarray(t, dtype=np.int64), points.shape[:1])
    if t.size and (t.min() < 0 or t.max() > MAX_TIME):
        raise ValueError(f"time index outside [0, {MAX_TIME}]")
    if points.size and np.abs(points).max() >= COORD_OFFSET:
        raise ValueError(f"coordinate magnitude must be < {COORD_OFFSET}")
    packed = t.astype(np.uint64) << np.uint64(48)
    for i in range(points.shape[1]):
        packed |= (points[:, i] + COORD_OFFSET).astype(np.uint64) << np.uint64(COORD_BITS * i)
    return _mix_array(packed ^ np.uint64(SITE_SALT))
