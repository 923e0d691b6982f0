"""Directed polymer partition functions on the space-time lattice N x Z^d.

Two independent evaluation routes exist:

* the log-space reference DP (:func:`dp_step`, :func:`run_polymer`) on
  :class:`SliceState`, plus the backward DP behind the product identity;
* :class:`PolymerSampler`, a compiled kernel that evolves the normalized endpoint
  measure in linear space and multiplies up the one-step ratios W_{n+1}/W_n.

:func:`brute_force_partition` enumerates paths and checks both.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Iterator

import numba as nb
import numpy as np
from scipy.special import logsumexp

from . import _hash
from .disorder import DisorderDist, _times, log_mgf, ratio_bounds
from .lattice import cone, down_neighbors, unit_steps, up_neighbors
from .paths import MartingalePath

BRUTE_FORCE_LIMIT = 10**7


@dataclass(frozen=True)
class EnvField:
    """Environment replicate omega, derived lazily from (seed, replicate, t, x).

    ``time_offset`` and ``origin`` implement the space-time shift theta_{k,y}:
    the shifted field reads omega_{k+t, y+x}.
    """

    dist: DisorderDist
    master_seed: int
    replicate_id: int
    dim: int
    time_offset: int = 0
    origin: tuple[int, ...] | None = None

    def __post_init__(self):
        if not 1 <= self.dim <= _hash.MAX_DIM:
            raise ValueError(f"dim must be in 1..{_hash.MAX_DIM}")
        if self.origin is None:
            object.__setattr__(self, "origin", (0,) * self.dim)
        elif len(self.origin) != self.dim:
            raise ValueError("origin has the wrong dimension")

    @cached_property
    def _key(self) -> np.uint64:
        return _hash.as_u64(_hash.env_key(self.master_seed, self.replicate_id))

    def shifted(self, k: int, y) -> "EnvField":
        y = tuple(int(v) for v in y)
        if len(y) != self.dim:
            raise ValueError("shift vector has the wrong dimension")
        origin = tuple(a + b for a, b in zip(self.origin, y))
        return EnvField(self.dist, self.master_seed, self.replicate_id, self.dim,
                        self.time_offset + int(k), origin)

    def values(self, t, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.int64).reshape(-1, self.dim)
        codes = _hash.pack_sites(np.asarray(t) + self.time_offset, points + np.asarray(self.origin))
        return _hash._site_values(self._key, codes, *self.dist.kernel_args())

    def value(self, t: int, x) -> float:
        return float(self.values(t, np.asarray(x).reshape(1, self.dim))[0])


@dataclass(frozen=True)
class SliceState:
    """log Z_n(x) over the reachable cone at time n (point-to-site partition values)."""

    time: int
    dim: int
    points: np.ndarray
    logz: np.ndarray
    log_lambda_n: float = 0.0

    @classmethod
    def initial(cls, dim: int) -> "SliceState":
        return cls(0, dim, cone(dim, 0), np.zeros(1), 0.0)

    @property
    def log_partition(self) -> float:
        with np.errstate(divide="ignore"):
            return float(logsumexp(self.logz))

    @property
    def log_w(self) -> float:
        return self.log_partition - self.log_lambda_n

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return {tuple(int(c) for c in p): float(v) for p, v in zip(self.points, self.logz)}


def dp_step(state: SliceState, env: EnvField, beta: float) -> SliceState:
    if env.dim != state.dim:
        raise ValueError(f"dimension mismatch: slice d={state.dim}, environment d={env.dim}")
    d, t = state.dim, state.time + 1
    nbr = down_neighbors(d, state.time)
    ext = np.append(state.logz, -np.inf)  # index -1 hits the sentinel
    with np.errstate(divide="ignore", invalid="ignore"):
        incoming = logsumexp(ext[nbr], axis=1) - math.log(2 * d)
    pts = cone(d, t)
    logz = _times(beta, env.values(t, pts)) + incoming
    return SliceState(t, d, pts, logz, state.log_lambda_n + log_mgf(env.dist, beta))


def polymer_slices(env: EnvField, beta: float, n: int) -> Iterator[SliceState]:
    state = SliceState.initial(env.dim)
    yield state
    for _ in range(n):
        state = dp_step(state, env, beta)
        yield state


def run_polymer(env: EnvField, beta: float, n: int, dim: int | None = None) -> MartingalePath:
    if n < 0:
        raise ValueError("n must be >= 0")
    if dim is not None and dim != env.dim:
        raise ValueError(f"dimension mismatch: requested d={dim}, environment d={env.dim}")
    if beta == 0:
        return MartingalePath(np.ones(n + 1), beta=0.0, dim=env.dim)
    vals = np.array([math.exp(s.log_w) for s in polymer_slices(env, beta, n)])
    return MartingalePath(vals, beta=beta, dim=env.dim)


def endpoint_measure(state: SliceState) -> dict[tuple[int, ...], float]:
    with np.errstate(divide="ignore"):
        mu = np.exp(state.logz - logsumexp(state.logz))
    return {tuple(int(c) for c in p): float(m) for p, m in zip(state.points, mu)}


def shifted_martingale(env: EnvField, k: int, y, l: int, beta: float) -> float:
    """W_l evaluated in the environment theta_{k,y} omega."""
    if k < 0 or l < 0:
        raise ValueError("k and l must be >= 0")
    return float(run_polymer(env.shifted(k, y), beta, l).values[l])


def _energies(env: EnvField, beta: float, n: int) -> list[np.ndarray]:
    return [np.zeros(1)] + [_times(beta, env.values(t, cone(env.dim, t))) for t in range(1, n + 1)]


def _backward_levels(env, beta, T, energies, lam) -> dict[int, np.ndarray]:
    """log(W_{T-s} o theta_{s,y}) for y in cone(s), for every s = T, T-1, ..., 0."""
    d = env.dim
    levels = {T: np.zeros(len(cone(d, T)))}
    logb = levels[T]
    for s in range(T - 1, -1, -1):
        term = energies[s + 1] - lam + logb
        with np.errstate(divide="ignore", invalid="ignore"):
            logb = logsumexp(term[up_neighbors(d, s)], axis=1) - math.log(2 * d)
        levels[s] = logb
    return levels


def log_shifted_martingales(env: EnvField, k: int, l: int, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """(cone(k), log W_l o theta_{k,y} for each y) by one backward sweep."""
    energies = _energies(env, beta, k + l)
    levels = _backward_levels(env, beta, k + l, energies, log_mgf(env.dist, beta))
    return cone(env.dim, k), levels[k]


def _identity_residual(slices, levels, k, T) -> float:
    sk = slices[k]
    lw_k, lw_T = sk.log_w, slices[T].log_w
    if not math.isfinite(lw_k):
        raise RuntimeError(f"internal error: W_{k} = 0 with strictly positive weights")
    lhs = math.exp(lw_T - lw_k)
    log_mu = sk.logz - logsumexp(sk.logz)
    rhs = math.exp(float(logsumexp(log_mu + levels[k])))
    return abs(lhs - rhs), lhs


def product_identity_check(env: EnvField, k: int, l: int, beta: float) -> float:
    """|W_{k+l}/W_k - sum_y mu_k(y) W_l o theta_{k,y}| from exact DPs."""
    if k < 0 or l < 0:
        raise ValueError("k and l must be >= 0")
    if beta == 0:
        return 0.0
    T = k + l
    slices = list(polymer_slices(env, beta, T))
    levels = _backward_levels(env, beta, T, _energies(env, beta, T), log_mgf(env.dist, beta))
    return _identity_residual(slices, levels, k, T)[0]


def product_identity_residuals(env: EnvField, n: int, beta: float) -> dict[tuple[int, int], float]:
    """Relative residuals of the product identity for all k + l <= n."""
    slices = list(polymer_slices(env, beta, n))
    energies = _energies(env, beta, n)
    lam = log_mgf(env.dist, beta)
    out = {}
    for T in range(n + 1):
        levels = _backward_levels(env, beta, T, energies, lam)
        for k in range(T + 1):
            res, lhs = _identity_residual(slices, levels, k, T)
            out[(k, T - k)] = res / lhs
    return out


def brute_force_partition(env: EnvField, beta: float, n: int, dim: int | None = None,
                          block: int = 1 << 15) -> float:
    """log Z_n by summing exp(beta*H_n) over all (2d)^n nearest-neighbour paths."""
    d = env.dim if dim is None else dim
    if d != env.dim:
        raise ValueError(f"dimension mismatch: requested d={d}, environment d={env.dim}")
    total = (2 * d) ** n
    if total > BRUTE_FORCE_LIMIT:
        raise ValueError(f"refused: (2d)^n = {total} paths exceeds the enumeration guard {BRUTE_FORCE_LIMIT}")
    if n == 0:
        return 0.0
    steps = unit_steps(d)
    times = np.arange(1, n + 1)
    pieces = []
    for start in range(0, total, block):
        idx = np.arange(start, min(start + block, total))
        digits = (idx[:, None] // (2 * d) ** np.arange(n)[None, :]) % (2 * d)
        pos = np.cumsum(steps[digits], axis=1)  # (B, n, d)
        tt = np.broadcast_to(times, digits.shape).reshape(-1)
        omega = env.values(tt, pos.reshape(-1, d)).reshape(len(idx), n)
        energy = _times(beta, omega).sum(axis=1)
        with np.errstate(divide="ignore"):
            pieces.append(logsumexp(energy))
    with np.errstate(divide="ignore"):
        return float(logsumexp(pieces)) - n * math.log(2 * d)


# ---------------------------------------------------------------------------
# compiled Monte Carlo kernel


@lru_cache(maxsize=64)
def _kernel_tables(dim: int, n: int):
    """Flattened site codes and neighbour tables for times 1..n.

    Missing neighbours point at a sentinel slot (index ``max_size``) holding 0.
    """
    offsets = np.zeros(n + 1, dtype=np.int64)
    codes, nbrs = [np.zeros(0, dtype=np.uint64)], [np.zeros(0, dtype=np.int64)]
    max_size = 1
    for t in range(1, n + 1):
        pts = cone(dim, t)
        codes.append(_hash.pack_sites(t, pts))
        nbrs.append(down_neighbors(dim, t - 1).reshape(-1))
        offsets[t] = offsets[t - 1] + len(pts)
        max_size = max(max_size, len(pts))
    nbr = np.concatenate(nbrs)
    nbr[nbr < 0] = max_size
    return offsets, np.concatenate(codes), nbr, max_size


@nb.njit(cache=True)
def _polymer_kernel(keys, n, dim, offsets, codes, nbr, max_size, kind, thresholds, factors,
                    mu, sigma, beta, lam, out):
    two_d = 2 * dim
    inv = 1.0 / two_d
    prev = np.zeros(max_size + 1)
    cur = np.zeros(max_size)
    for r in range(keys.shape[0]):
        ek = keys[r]
        prev[0] = 1.0
        w = 1.0
        out[r, 0] = 1.0
        for t in range(1, n + 1):
            a = offsets[t - 1]
            size = offsets[t] - a
            total = 0.0
            for s in range(size):
                base = (a + s) * two_d
                acc0 = 0.0
                acc1 = 0.0
                for j in range(0, two_d, 2):
                    acc0 += prev[nbr[base + j]]
                    acc1 += prev[nbr[base + j + 1]]
                acc = acc0 + acc1
                if acc == 0.0:
                    cur[s] = 0.0
                    continue
                key = _hash.site_key(ek, codes[a + s])
                h0 = _hash.draw_bits(key, 0)
                if kind == 0:
                    f = factors[_hash.atom_index(h0, thresholds)]
                else:
                    z = _hash.std_normal(h0, _hash.draw_bits(key, 1))
                    f = np.exp(beta * (mu + sigma * z) - lam)
                v = acc * f
                cur[s] = v
                total += v
            total *= inv
            w *= total
            out[r, t] = w
            scale = inv / total if total > 0.0 else 0.0
            for s in range(size):
                prev[s] = cur[s] * scale
    return out


@dataclass(frozen=True)
class PolymerSampler:
    """Batch sampler of W_0..W_n; replicate r uses ``EnvField(dist, seed, r, dim)``."""

    dist: DisorderDist
    beta: float
    dim: int
    master_seed: int = 0
    kind: str = field(default="polymer", init=False)

    def __post_init__(self):
        if self.beta < 0 or not math.isfinite(self.beta):
            raise ValueError("beta must be finite and >= 0")
        if not 1 <= self.dim <= _hash.MAX_DIM:
            raise ValueError(f"dim must be in 1..{_hash.MAX_DIM}")
        if not math.isfinite(log_mgf(self.dist, self.beta)):
            raise ValueError(f"lambda(beta) is not finite at beta={self.beta!r}")

    @property
    def label(self) -> str:
        return f"polymer(d={self.dim},beta={self.beta!r},dist={self.dist.spec()})"

    @property
    def bounds(self) -> tuple[float, float]:
        return ratio_bounds(self.dist, self.beta, self.dim)

    @property
    def strictly_positive(self) -> bool:
        return self.dist.lower_bounded or self.beta == 0

    def env(self, replicate: int) -> EnvField:
        return EnvField(self.dist, self.master_seed, replicate, self.dim)

    def sample_paths(self, first_rep: int, count: int, n: int) -> np.ndarray:
        out = np.empty((count, n + 1))
        if self.beta == 0:
            out[:] = 1.0
            return out
        offsets, codes, nbr, max_size = _kernel_tables(self.dim, n)
        kind, thresholds, atoms, mu, sigma = self.dist.kernel_args()
        factors = self.dist.weight_factors(self.beta) if kind == 0 else np.zeros(1)
        lam = log_mgf(self.dist, self.beta)
        keys = _hash.env_keys(self.master_seed, first_rep, count)
        _polymer_kernel(keys, n, self.dim, offsets, codes, nbr, max_size, kind, thresholds,
                        factors, mu, sigma, float(self.beta), lam, out)
        return out
