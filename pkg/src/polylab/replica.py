"""Two-replica computations: E[W_n^2], collision return probability, L^2 threshold.

Both replicas are independent simple random walks X, X'; their difference
D_t = X_t - X'_t is itself a random walk whose step is the difference of two
SRW steps.  All DPs below run on a dense box around the origin large enough to
hold every reachable position, so they are exact.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .disorder import DisorderDist, UnsupportedDistribution, log_mgf

log = logging.getLogger(__name__)

BISECT_TOL = 1e-9
BETA_SEARCH_MAX = 1e3


def collision_exponent(dist: DisorderDist, beta: float) -> float:
    """lambda(2 beta) - 2 lambda(beta), the weight of one replica collision."""
    return log_mgf(dist, 2 * beta) - 2 * log_mgf(dist, beta)


def _srw_half_step(a: np.ndarray) -> np.ndarray:
    """Average over the 2d unit shifts; mass pushed off the box is dropped."""
    d = a.ndim
    out = np.zeros_like(a)
    for axis in range(d):
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[axis], hi[axis] = slice(0, -1), slice(1, None)
        out[tuple(hi)] += a[tuple(lo)]
        out[tuple(lo)] += a[tuple(hi)]
    out *= 1.0 / (2 * d)
    return out


def difference_step(a: np.ndarray) -> np.ndarray:
    """One step of D: the law of xi - xi' equals that of xi + xi'' for SRW steps."""
    return _srw_half_step(_srw_half_step(a))


def difference_step_law(dim: int) -> dict[tuple[int, ...], float]:
    """Exact law of xi - xi' by enumerating the (2d)^2 step pairs."""
    steps = []
    for i in range(dim):
        for s in (-1, 1):
            e = [0] * dim
            e[i] = s
            steps.append(tuple(e))
    law: dict[tuple[int, ...], float] = {}
    p = 1.0 / len(steps) ** 2
    for a in steps:
        for b in steps:
            key = tuple(x - y for x, y in zip(a, b))
            law[key] = law.get(key, 0.0) + p
    return law


@dataclass
class CollisionWalkState:
    """Collision-weighted law of the difference walk, as  exp(log_scale) * weights."""

    dim: int
    time: int
    weights: np.ndarray
    log_scale: float = 0.0

    @classmethod
    def initial(cls, dim: int, radius: int) -> "CollisionWalkState":
        w = np.zeros((2 * radius + 1,) * dim)
        w[(radius,) * dim] = 1.0
        return cls(dim, 0, w)

    @property
    def origin(self) -> tuple[int, ...]:
        return tuple(s // 2 for s in self.weights.shape)

    @property
    def log_total(self) -> float:
        return self.log_scale + math.log(self.weights.sum())

    def step(self, gamma: float) -> "CollisionWalkState":
        w = difference_step(self.weights)
        w[self.origin] *= math.exp(gamma)
        total = w.sum()
        return CollisionWalkState(self.dim, self.time + 1, w / total, self.log_scale + math.log(total))


def second_moment_exact(dist: DisorderDist, beta: float, n: int, dim: int) -> float:
    """E[(W_n)^2] = E[exp(gamma * #{1 <= t <= n : X_t = X'_t})]."""
    if n < 0 or dim < 1:
        raise ValueError("need n >= 0 and dim >= 1")
    try:
        gamma = collision_exponent(dist, beta)
    except (OverflowError, ValueError) as exc:
        raise UnsupportedDistribution(f"lambda(2 beta) undefined: {exc}") from exc
    if not math.isfinite(gamma):
        raise UnsupportedDistribution("lambda(2 beta) is not finite")
    if beta == 0 or n == 0:
        return 1.0
    state = CollisionWalkState.initial(dim, 2 * n + 1)
    for _ in range(n):
        state = state.step(gamma)
    return math.exp(state.log_total)


def collision_return_probs(dim: int, horizon: int) -> np.ndarray:
    """P(D returns to 0 within t steps) for t = 0..horizon, by a taboo DP.

    At every step the mass sitting at the origin is recorded and removed.  Only
    mass within sup-distance min(2t, 2(horizon - t)) of the origin can matter at
    time t, so each step updates that window only.
    """
    if horizon < 0 or dim < 1:
        raise ValueError("need horizon >= 0 and dim >= 1")
    radius = horizon + 4
    w = np.zeros((2 * radius + 1,) * dim)
    origin = (radius,) * dim
    w[origin] = 1.0
    hits = np.zeros(horizon + 1)

    def window(r):
        return (slice(radius - r, radius + r + 1),) * dim

    for t in range(1, horizon + 1):
        r = min(2 * t, 2 * (horizon - t) + 2)
        src = w[window(r + 2)]
        w[window(r)] = difference_step(src)[(slice(2, -2),) * dim]
        hits[t] = w[origin]
        w[origin] = 0.0
    return np.cumsum(hits)


def collision_return_prob(dim: int, horizon: int) -> float:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    return float(collision_return_probs(dim, horizon)[-1])


def l2_critical_beta(dist: DisorderDist, dim: int, horizon: int) -> float | None:
    """Root of lambda(2b) - 2 lambda(b) = -log pi_hat, pi_hat the horizon return probability.

    Since pi_hat increases to the true return probability, the estimate decreases
    with the horizon and sits above the infinite-horizon threshold.  Returns None
    for d <= 2 (recurrent walk, threshold 0) and when no root exists below
    ``BETA_SEARCH_MAX``.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if dim <= 2:
        log.info("d=%d: difference walk is recurrent, L2 threshold is 0", dim)
        return None
    pi_hat = collision_return_prob(dim, horizon)
    if pi_hat >= 1 - BISECT_TOL:
        log.info("return probability %.12g is 1 within tolerance", pi_hat)
        return None
    target = -math.log(pi_hat)

    def excess(b):
        return collision_exponent(dist, b) - target

    hi = 1.0
    while excess(hi) < 0:
        hi *= 2
        if hi > BETA_SEARCH_MAX:
            log.warning("no L2 threshold below beta=%g: collision exponent stays below %.6g",
                        BETA_SEARCH_MAX, target)
            return None
    lo = 0.0
    while hi - lo > BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if excess(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
