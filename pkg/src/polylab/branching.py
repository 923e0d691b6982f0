"""Galton-Watson and branching-random-walk martingales with the same product structure.

Replicate ``r`` of a sampler uses the stream ``SeedStream(master_seed, r)``.  The
offspring count of the i-th individual (generations in order, individuals in
order within a generation) is draw ``i`` of that stream.  Displacements come from a
separate stream derived from the same key, so a branching random walk consumes
exactly the offspring draws of the Galton-Watson process with the same stream.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numba as nb
import numpy as np

from . import _hash
from .disorder import PROB_TOL, DisorderDist, SeedStream, log_mgf
from .paths import MartingalePath

POPULATION_CAP = 10**7


class PopulationCapError(RuntimeError):
    """Population exceeded the cap; ``partial`` holds the path up to the last full generation."""

    def __init__(self, message: str, partial: MartingalePath, replicate: int | None = None):
        super().__init__(message)
        self.partial = partial
        self.replicate = replicate


@dataclass(frozen=True)
class OffspringDist:
    counts: tuple[int, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        if len(self.counts) == 0 or len(self.counts) != len(self.probs):
            raise ValueError("offspring law needs matching non-empty counts and probs")
        if any(c < 0 for c in self.counts) or any(not p > 0 for p in self.probs):
            raise ValueError("counts must be >= 0 and probs > 0")
        if abs(math.fsum(self.probs) - 1.0) > PROB_TOL:
            raise ValueError("offspring probabilities must sum to 1")

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[int, float]]) -> "OffspringDist":
        return cls(tuple(int(c) for c, _ in pairs), tuple(float(p) for _, p in pairs))

    @property
    def mean(self) -> float:
        return math.fsum(c * p for c, p in zip(self.counts, self.probs))

    @property
    def variance(self) -> float:
        m = self.mean
        return math.fsum(p * (c - m) ** 2 for c, p in zip(self.counts, self.probs))

    @property
    def thresholds(self) -> np.ndarray:
        # same construction as DisorderDist so draws map to atoms identically
        return DisorderDist.discrete(list(zip(map(float, self.counts), self.probs)))._thresholds

    def extinction_probability(self, tol: float = 1e-15, max_iter: int = 100000) -> float:
        """Smallest fixed point of the generating function, by iteration from 0."""
        q = 0.0
        for _ in range(max_iter):
            nq = math.fsum(p * q**c for c, p in zip(self.counts, self.probs))
            if abs(nq - q) < tol:
                return nq
            q = nq
        return q

    def ratio_bounds(self) -> tuple[float, float]:
        """Almost-sure bounds on M_{k+1}/M_k on survival: [min count, max count] / m."""
        m = self.mean
        return max(self.counts) / m, min(self.counts) / m

    def spec(self) -> str:
        return "[" + ",".join(f"({c},{p!r})" for c, p in zip(self.counts, self.probs)) + "]"


def gw_second_moment_exact(off: OffspringDist, n: int | float) -> float:
    """E[M_n^2] from E[M_{k+1}^2] = E[M_k^2] + sigma^2 m^{-k-2}; ``n=inf`` gives the limit."""
    m, var = off.mean, off.variance
    if m <= 1:
        raise ValueError(f"unsupported: mean offspring {m!r} <= 1")
    if n == math.inf:
        return 1.0 + var / (m * (m - 1.0))
    if n < 0:
        raise ValueError("n must be >= 0")
    return 1.0 + var * math.fsum(m ** (-j - 2) for j in range(int(n)))


@nb.njit(cache=True)
def _gw_kernel(keys, n, thresholds, counts, mpow, cap, out, status):
    for r in range(keys.shape[0]):
        key = keys[r]
        z = 1
        idx = 0
        out[r, 0] = 1.0
        for k in range(1, n + 1):
            if z == 0:
                out[r, k] = 0.0
                continue
            nz = 0
            for _ in range(z):
                nz += counts[_hash.atom_index(_hash.draw_bits(key, idx), thresholds)]
                idx += 1
            if nz > cap:
                status[r] = k
                for j in range(k, n + 1):
                    out[r, j] = np.nan
                break
            z = nz
            out[r, k] = z / mpow[k]
    return out


@nb.njit(cache=True)
def _brw_kernel(keys, n, thresholds, counts, kind, dthr, atoms, mu, sigma, theta, mpow, cap,
                out, status):
    for r in range(keys.shape[0]):
        key = keys[r]
        dkey = _hash.mix64(key ^ np.uint64(_hash.DISP_SALT))
        pos = np.zeros(1)
        idx = 0
        didx = 0
        out[r, 0] = 1.0
        for k in range(1, n + 1):
            z = pos.shape[0]
            if z == 0:
                out[r, k] = 0.0
                continue
            kids = np.empty(z, dtype=np.int64)
            nz = 0
            for i in range(z):
                kids[i] = counts[_hash.atom_index(_hash.draw_bits(key, idx), thresholds)]
                idx += 1
                nz += kids[i]
            if nz > cap:
                status[r] = k
                for j in range(k, n + 1):
                    out[r, j] = np.nan
                break
            new = np.empty(nz)
            c = 0
            for i in range(z):
                for _ in range(kids[i]):
                    h0 = _hash.draw_bits(dkey, didx)
                    if kind == 0:
                        step = atoms[_hash.atom_index(h0, dthr)]
                    else:
                        step = mu + sigma * _hash.std_normal(h0, _hash.draw_bits(dkey, didx + 1))
                    didx += 2
                    new[c] = pos[i] + step
                    c += 1
            pos = new
            if nz == 0:
                out[r, k] = 0.0
                continue
            # largest exponent pulled out so the sum stays in range
            top = -theta * pos[0]
            for i in range(nz):
                top = max(top, -theta * pos[i])
            acc = 0.0
            for i in range(nz):
                acc += np.exp(-theta * pos[i] - top)
            # with theta = 0 this is z / m^k, bit-identical to the GW kernel
            out[r, k] = acc * np.exp(top) / mpow[k]
    return out


def _run(kernel_args, kernel, keys, n, first_rep, beta, make_message):
    out = np.empty((len(keys), n + 1))
    status = np.zeros(len(keys), dtype=np.int64)
    kernel(keys, n, *kernel_args, out, status)
    bad = np.flatnonzero(status)
    if bad.size:
        r = int(bad[0])
        k = int(status[r])
        partial = MartingalePath(out[r, :k], beta=beta)
        raise PopulationCapError(make_message(first_rep + r, k), partial, first_rep + r)
    return out


@dataclass(frozen=True)
class GWSampler:
    offspring: OffspringDist
    master_seed: int = 0
    cap: int = POPULATION_CAP
    kind: str = field(default="gw", init=False)

    def __post_init__(self):
        if not self.offspring.mean > 0:
            raise ValueError("mean offspring must be > 0")

    @property
    def label(self) -> str:
        return f"gw(offspring={self.offspring.spec()})"

    @property
    def bounds(self) -> tuple[float, float]:
        return self.offspring.ratio_bounds()

    @property
    def strictly_positive(self) -> bool:
        return min(self.offspring.counts) >= 1

    def sample_paths(self, first_rep: int, count: int, n: int) -> np.ndarray:
        m = self.offspring.mean
        mpow = np.array([m**k for k in range(n + 1)])
        args = (self.offspring.thresholds, np.asarray(self.offspring.counts, dtype=np.int64),
                mpow, self.cap)
        keys = _hash.stream_keys(self.master_seed, first_rep, count)
        return _run(args, _gw_kernel, keys, n, first_rep, float("nan"),
                    lambda r, k: f"replicate {r}: population exceeded {self.cap} at generation {k}")


@dataclass(frozen=True)
class BRWSpec:
    offspring: OffspringDist
    displacement: DisorderDist
    theta: float

    @property
    def m_theta(self) -> float:
        """E[sum over children of exp(-theta * displacement)]."""
        return self.offspring.mean * math.exp(log_mgf(self.displacement, -self.theta))

    def __post_init__(self):
        mt = self.m_theta
        if not (mt > 0 and math.isfinite(mt)):
            raise ValueError(f"m(theta) must be positive and finite, got {mt!r}")


@dataclass(frozen=True)
class BRWSampler:
    spec: BRWSpec
    master_seed: int = 0
    cap: int = POPULATION_CAP
    kind: str = field(default="brw", init=False)

    @property
    def label(self) -> str:
        s = self.spec
        return f"brw(offspring={s.offspring.spec()},disp={s.displacement.spec()},theta={s.theta!r})"

    @property
    def bounds(self) -> tuple[float, float]:
        s = self.spec
        d = s.displacement
        if not d.is_discrete or not all(map(math.isfinite, d.values)):
            return math.inf, 0.0
        w = [math.exp(-s.theta * v) for v in d.values]
        mt = s.m_theta
        return max(s.offspring.counts) * max(w) / mt, min(s.offspring.counts) * min(w) / mt

    @property
    def strictly_positive(self) -> bool:
        return min(self.spec.offspring.counts) >= 1

    def sample_paths(self, first_rep: int, count: int, n: int) -> np.ndarray:
        s = self.spec
        mt = s.m_theta
        mpow = np.array([mt**k for k in range(n + 1)])
        kind, dthr, atoms, mu, sigma = s.displacement.kernel_args()
        args = (s.offspring.thresholds, np.asarray(s.offspring.counts, dtype=np.int64),
                kind, dthr, atoms, mu, sigma, float(s.theta), mpow, self.cap)
        keys = _hash.stream_keys(self.master_seed, first_rep, count)
        return _run(args, _brw_kernel, keys, n, first_rep, float("nan"),
                    lambda r, k: f"replicate {r}: particle count exceeded {self.cap} at generation {k}")


def _single(sampler, stream: SeedStream, n: int) -> MartingalePath:
    if n < 0:
        raise ValueError("n must be >= 0")
    # the stream id plays the role of the replicate index
    return MartingalePath(sampler.sample_paths(stream.stream_id, 1, n)[0])


def gw_martingale_path(off: OffspringDist, n: int, stream: SeedStream, cap: int = POPULATION_CAP) -> MartingalePath:
    """M_k = Z_k m^{-k} for one Galton-Watson run with Z_0 = 1."""
    return _single(GWSampler(off, stream.master_seed, cap), stream, n)


def brw_martingale_path(spec: BRWSpec, n: int, stream: SeedStream, cap: int = POPULATION_CAP) -> MartingalePath:
    """W^{(k)}(theta) = m(theta)^{-k} sum_i exp(-theta z_i^{(k)}) for one run."""
    return _single(BRWSampler(spec, stream.master_seed, cap), stream, n)
