"""Site-disorder laws, their log moment generating function and seeded sampling."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _hash

PROB_TOL = 1e-12


class UnsupportedDistribution(ValueError):
    pass


@dataclass(frozen=True)
class DisorderDist:
    """Law of a single environment variable.

    ``kind`` is ``"discrete"`` (finitely many atoms, ``-inf`` allowed for the
    degenerate percolation-type case) or ``"gaussian"``.
    """

    kind: str
    values: tuple[float, ...] = ()
    probs: tuple[float, ...] = ()
    mean: float = 0.0
    var: float = 1.0
    _thresholds: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind == "discrete":
            if len(self.values) == 0 or len(self.values) != len(self.probs):
                raise ValueError("discrete law needs matching non-empty values and probs")
            if any(not p > 0 for p in self.probs):
                raise ValueError("atom probabilities must be > 0")
            if abs(math.fsum(self.probs) - 1.0) > PROB_TOL:
                raise ValueError(f"probabilities sum to {math.fsum(self.probs)!r}, not 1")
            if any(math.isnan(v) or v == math.inf for v in self.values):
                raise ValueError("atom values must be finite or -inf")
            cum = np.cumsum(np.asarray(self.probs, dtype=np.float64))
            thr = np.floor(cum * 2.0**53).astype(np.uint64)
            thr[-1] = np.uint64(1 << 53)
            object.__setattr__(self, "_thresholds", thr)
        elif self.kind == "gaussian":
            if not (math.isfinite(self.mean) and math.isfinite(self.var) and self.var >= 0):
                raise ValueError("gaussian needs finite mean and var >= 0")
            object.__setattr__(self, "_thresholds", np.ones(1, dtype=np.uint64))
        else:
            raise ValueError(f"unknown disorder kind {self.kind!r}")

    @classmethod
    def discrete(cls, pairs: Sequence[tuple[float, float]]) -> "DisorderDist":
        return cls("discrete", tuple(float(v) for v, _ in pairs), tuple(float(p) for _, p in pairs))

    @classmethod
    def rademacher(cls) -> "DisorderDist":
        return cls.discrete([(-1.0, 0.5), (1.0, 0.5)])

    @classmethod
    def point_mass(cls, c: float) -> "DisorderDist":
        return cls.discrete([(c, 1.0)])

    @classmethod
    def gaussian(cls, mean: float = 0.0, var: float = 1.0) -> "DisorderDist":
        return cls("gaussian", mean=float(mean), var=float(var))

    @property
    def is_discrete(self) -> bool:
        return self.kind == "discrete"

    @property
    def ess_sup(self) -> float:
        return max(self.values) if self.is_discrete else math.inf

    @property
    def ess_inf(self) -> float:
        return min(self.values) if self.is_discrete else -math.inf

    @property
    def upper_bounded(self) -> bool:
        return math.isfinite(self.ess_sup)

    @property
    def lower_bounded(self) -> bool:
        return math.isfinite(self.ess_inf)

    def spec(self) -> str:
        if self.kind == "gaussian":
            return f"gaussian:{self.mean!r},{self.var!r}"
        if self == DisorderDist.rademacher():
            return "rademacher"
        return "discrete:[" + ",".join(f"({v!r},{p!r})" for v, p in zip(self.values, self.probs)) + "]"

    def kernel_args(self) -> tuple:
        """(kind, thresholds, atoms, mu, sigma) as consumed by the numba kernels."""
        if self.is_discrete:
            return 0, self._thresholds, np.asarray(self.values, dtype=np.float64), 0.0, 0.0
        return 1, self._thresholds, np.zeros(1), self.mean, math.sqrt(self.var)

    def weight_factors(self, beta: float) -> np.ndarray:
        """exp(beta*v - log_mgf(beta)) per atom; the one-step martingale factor."""
        if not self.is_discrete:
            raise UnsupportedDistribution("weight table only exists for finite support")
        lam = log_mgf(self, beta)
        vals = np.asarray(self.values)
        with np.errstate(invalid="ignore"):
            return np.exp(_times(beta, vals) - lam)


def _times(beta: float, values):
    """beta * values with the convention 0 * (-inf) = 0."""
    values = np.asarray(values, dtype=np.float64)
    if beta == 0:
        return np.zeros_like(values)
    return beta * values


def log_mgf(dist: DisorderDist, beta: float) -> float:
    """lambda(beta) = log E[exp(beta * omega)]."""
    beta = float(beta)
    if not math.isfinite(beta):
        raise ValueError(f"beta must be finite, got {beta!r}")
    if beta == 0:
        return 0.0
    if dist.kind == "gaussian":
        return beta * dist.mean + 0.5 * beta * beta * dist.var
    with np.errstate(over="ignore"):
        a = _times(beta, dist.values) + np.log(np.asarray(dist.probs))
    if np.any(a == np.inf):
        return math.inf
    finite = np.isfinite(a)
    if not finite.any():
        raise UnsupportedDistribution("law puts all mass on -inf")
    a = a[finite]
    shift = a.max()
    return float(shift + math.log(math.fsum(np.exp(a - shift))))


def ratio_bounds(dist: DisorderDist, beta: float, dim: int = 1) -> tuple[float, float]:
    """Almost-sure bounds (upper, lower) on W_{n+1}/W_n for the polymer martingale.

    ``dim`` does not enter: the one-step ratio is a polymer-measure average of
    exp(beta*omega - lambda) whatever the lattice.
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if dim < 1:
        raise ValueError("dim must be positive")
    if beta == 0:
        return 1.0, 1.0
    lam = log_mgf(dist, beta)
    upper = math.exp(beta * dist.ess_sup - lam) if dist.upper_bounded else math.inf
    lower = math.exp(beta * dist.ess_inf - lam) if dist.lower_bounded else 0.0
    return upper, lower


def ratio_constant(upper: float, lower: float, *, use_upper: bool = True, use_lower: bool = False) -> float:
    """K_M = max over the requested one-step constants (upper, 1/lower)."""
    cands = []
    if use_upper:
        cands.append(upper)
    if use_lower:
        cands.append(math.inf if lower == 0 else 1.0 / lower)
    if not cands:
        raise ValueError("request at least one bound")
    return max(cands)


@dataclass(frozen=True)
class SeedStream:
    master_seed: int
    stream_id: int = 0

    @property
    def key(self) -> int:
        return _hash.stream_key(self.master_seed, self.stream_id)

    def substream(self, stream_id: int) -> "SeedStream":
        return SeedStream(self.master_seed, stream_id)


def sample_site(dist: DisorderDist, stream: SeedStream, index: int | None = None, size: int | None = None):
    """Draws from P_0; draw ``index`` of a stream is a pure function of the stream.

    With ``size`` given, returns draws ``index, index+1, ...`` as an array.
    """
    start = 0 if index is None else int(index)
    count = 1 if size is None else int(size)
    args = dist.kernel_args()
    out = _hash._stream_values(_hash.as_u64(stream.key), start, count, *args)
    return float(out[0]) if size is None else out


_NUM = r"[-+]?(?:\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|inf)"


def parse_dist(text: str) -> DisorderDist:
    """Parse ``rademacher``, ``discrete:[(v,p),...]`` or ``gaussian:mean,var``.

    A leading ``dist =`` is accepted and ignored.
    """
    s = text.strip()
    if "=" in s and s.split("=", 1)[0].strip() == "dist":
        s = s.split("=", 1)[1].strip()
    s = s.replace(" ", "")
    if s == "rademacher":
        return DisorderDist.rademacher()
    if s.startswith("gaussian:"):
        parts = s[len("gaussian:"):].split(",")
        if len(parts) != 2:
            raise ValueError(f"cannot parse gaussian spec {text!r}")
        return DisorderDist.gaussian(float(parts[0]), float(parts[1]))
    if s.startswith("discrete:"):
        body = s[len("discrete:"):]
        pairs = re.findall(rf"\(({_NUM}),({_NUM})\)", body)
        rebuilt = "[" + ",".join(f"({a},{b})" for a, b in pairs) + "]"
        if not pairs or rebuilt != body:
            raise ValueError(f"cannot parse discrete spec {text!r}")
        return DisorderDist.discrete([(float(a), float(b)) for a, b in pairs])
    raise ValueError(f"unknown distribution spec {text!r}")
