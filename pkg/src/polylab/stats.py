"""Monte Carlo estimation over martingale samplers and the moment-bootstrap certificates.

A sampler is any object with ``sample_paths(first_rep, count, n) -> (count, n+1)``
plus ``label``, ``bounds`` and ``strictly_positive``.  Replicates are processed in
fixed chunks; per-chunk sums are exact rationals, so merging is associative and
commutative bit-for-bit and results do not depend on the worker count.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats as sps

CHUNK = 1000
CI_LEVEL = 0.997
MIN_REPS = 100
MIN_SURVIVORS = 100
WORKERS_ENV = "POLYLAB_WORKERS"
GUARD_STEPS = 64


class DomainError(ValueError):
    pass


# ---------------------------------------------------------------------------
# exact accumulation


def exact_sum(x: np.ndarray) -> Fraction:
    """Exact sum of float64 values as a dyadic rational."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        return Fraction(0)
    if not np.isfinite(x).all():
        raise FloatingPointError("non-finite value in Monte Carlo sample")
    mant, expo = np.frexp(x)
    ints = (mant * 2.0**53).astype(np.int64)
    expo = expo.astype(np.int64) - 53
    emin = int(expo.min())
    total = 0
    for e in np.unique(expo):
        sel = ints[expo == e]
        # blocks of 512 keep int64 partial sums below 2^62
        s = sum(int(sel[i:i + 512].sum()) for i in range(0, len(sel), 512))
        total += s << int(e - emin)
    return Fraction(total) * Fraction(2) ** emin


def _frac_str(q: Fraction) -> str:
    return f"{q.numerator}/{q.denominator}"


@dataclass(frozen=True)
class MomentEstimate:
    """Sample mean of a statistic with exact (N, sum, sum of squares)."""

    statistic: str
    sample_count: int = 0
    total: Fraction = Fraction(0)
    total_sq: Fraction = Fraction(0)
    ci_level: float = CI_LEVEL

    @classmethod
    def from_values(cls, statistic: str, values, ci_level: float = CI_LEVEL) -> "MomentEstimate":
        v = np.asarray(values, dtype=np.float64)
        return cls(statistic, int(v.size), exact_sum(v), exact_sum(v * v), ci_level)

    def merge(self, other: "MomentEstimate") -> "MomentEstimate":
        if other.statistic != self.statistic:
            raise ValueError(f"cannot merge {self.statistic!r} with {other.statistic!r}")
        return MomentEstimate(self.statistic, self.sample_count + other.sample_count,
                              self.total + other.total, self.total_sq + other.total_sq, self.ci_level)

    @property
    def mean(self) -> float:
        return float(self.total / self.sample_count) if self.sample_count else math.nan

    @property
    def variance(self) -> float:
        n = self.sample_count
        if n < 2:
            return math.nan
        return float((self.total_sq - self.total * self.total / n) / (n - 1))

    @property
    def std_error(self) -> float:
        n = self.sample_count
        return math.sqrt(max(self.variance, 0.0) / n) if n >= 2 else math.nan

    @property
    def ci(self) -> tuple[float, float]:
        z = sps.norm.ppf(0.5 + self.ci_level / 2)
        return self.mean - z * self.std_error, self.mean + z * self.std_error

    def to_json(self) -> dict:
        return {"type": "moment", "statistic": self.statistic, "count": self.sample_count,
                "total": _frac_str(self.total), "total_sq": _frac_str(self.total_sq),
                "ci_level": self.ci_level}

    @classmethod
    def from_json(cls, d: dict) -> "MomentEstimate":
        return cls(d["statistic"], d["count"], Fraction(d["total"]), Fraction(d["total_sq"]), d["ci_level"])


@dataclass(frozen=True)
class HitTrace:
    """Per-horizon hit counts of a nested family of events."""

    hits: tuple[int, ...]
    sample_count: int

    def merge(self, other: "HitTrace") -> "HitTrace":
        if len(self.hits) != len(other.hits):
            raise ValueError("hit traces have different horizons")
        return HitTrace(tuple(a + b for a, b in zip(self.hits, other.hits)),
                        self.sample_count + other.sample_count)

    def to_json(self) -> dict:
        return {"type": "hits", "hits": list(self.hits), "count": self.sample_count}

    @classmethod
    def from_json(cls, d: dict) -> "HitTrace":
        return cls(tuple(d["hits"]), d["count"])


def merge_accumulators(a: dict, b: dict) -> dict:
    out = dict(a)
    for key, val in b.items():
        out[key] = out[key].merge(val) if key in out else val
    return out


def _acc_from_json(d: dict) -> dict:
    return {k: (MomentEstimate.from_json(v) if v["type"] == "moment" else HitTrace.from_json(v))
            for k, v in d.items()}


def clopper_pearson(hits: int, n: int, level: float = CI_LEVEL) -> tuple[float, float]:
    alpha = 1.0 - level
    lo = 0.0 if hits == 0 else float(sps.beta.ppf(alpha / 2, hits, n - hits + 1))
    hi = 1.0 if hits == n else float(sps.beta.ppf(1 - alpha / 2, hits + 1, n - hits))
    return lo, hi


@dataclass(frozen=True)
class TailEstimate:
    """P(sup_{k<=n} M_k > t) (``kind='sup'``) or P(inf_{k<=n} M_k <= 1/t) (``kind='inf'``)."""

    threshold: float
    horizon: int
    hit_count: int
    sample_count: int
    lower_conf: float
    upper_conf: float
    kind: str = "sup"
    hit_trace: tuple[int, ...] = ()
    ci_level: float = CI_LEVEL
    sampler: str = ""

    @classmethod
    def from_trace(cls, threshold: float, kind: str, trace: HitTrace, ci_level: float = CI_LEVEL,
                   sampler: str = "") -> "TailEstimate":
        hits = trace.hits[-1]
        lo, hi = clopper_pearson(hits, trace.sample_count, ci_level)
        return cls(threshold, len(trace.hits) - 1, hits, trace.sample_count, lo, hi, kind,
                   trace.hits, ci_level, sampler)

    @classmethod
    def from_counts(cls, threshold: float, hits: int, n_samples: int, horizon: int = 0,
                    kind: str = "sup", ci_level: float = CI_LEVEL) -> "TailEstimate":
        lo, hi = clopper_pearson(hits, n_samples, ci_level)
        return cls(threshold, horizon, hits, n_samples, lo, hi, kind, (), ci_level)

    @property
    def estimate(self) -> float:
        return self.hit_count / self.sample_count

    def hits_at(self, k: int) -> int:
        return self.hit_trace[k]

    def at_horizon(self, k: int) -> "TailEstimate":
        return TailEstimate.from_trace(self.threshold, self.kind,
                                       HitTrace(self.hit_trace[:k + 1], self.sample_count),
                                       self.ci_level, self.sampler)


# ---------------------------------------------------------------------------
# statistics over path batches


def _moment_values(x: np.ndarray, p: float, first_rep: int, rows=None) -> np.ndarray:
    if p < 0:
        zero = np.flatnonzero(x <= 0)
        if zero.size:
            rep = first_rep + int(zero[0] if rows is None else rows[zero[0]])
            raise DomainError(f"replicate {rep}: zero martingale value with negative power {p!r}")
    if p == 1:
        return x
    if p == 2:
        return x * x
    return x ** p


@dataclass(frozen=True)
class PathStatistics:
    """Reducer from a path batch to the requested accumulators."""

    horizons: tuple[int, ...] = ()
    powers: tuple[float, ...] = ()
    sup_thresholds: tuple[float, ...] = ()
    inf_thresholds: tuple[float, ...] = ()
    sup_powers: tuple[float, ...] = ()

    def __call__(self, paths: np.ndarray, first_rep: int) -> dict:
        acc = {}
        for h in self.horizons:
            col = paths[:, h]
            for p in self.powers:
                key = moment_key(p, h)
                acc[key] = MomentEstimate.from_values(key, _moment_values(col, p, first_rep))
        if self.sup_thresholds or self.sup_powers:
            runmax = np.maximum.accumulate(paths, axis=1)
            for t in self.sup_thresholds:
                hits = (runmax > t).sum(axis=0)
                acc[f"sup>{t!r}"] = HitTrace(tuple(int(v) for v in hits), len(paths))
            for h in self.horizons:
                for p in self.sup_powers:
                    key = f"E[sup_(k<={h}) M_k^{p!r}]"
                    acc[key] = MomentEstimate.from_values(key, runmax[:, h] ** p)
        if self.inf_thresholds:
            runmin = np.minimum.accumulate(paths, axis=1)
            for t in self.inf_thresholds:
                hits = (runmin <= 1.0 / t).sum(axis=0)
                acc[f"inf<=1/{t!r}"] = HitTrace(tuple(int(v) for v in hits), len(paths))
        return acc


def moment_key(p: float, h: int) -> str:
    return f"E[M_{h}^{p!r}]"


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _chunk_task(args):
    sampler, n, start, count, reducer = args
    return start, reducer(sampler.sample_paths(start, count, n), start)


@dataclass
class Checkpoint:
    """Periodic dump of merged accumulators; a rerun with the same ``tag`` resumes."""

    path: Path
    every: int = 10
    tag: str = ""

    def load(self) -> tuple[set[int], dict]:
        p = Path(self.path)
        if not p.exists():
            return set(), {}
        data = json.loads(p.read_text())
        if data.get("tag") != self.tag:
            return set(), {}
        return set(data["done"]), _acc_from_json(data["acc"])

    def save(self, done: Iterable[int], acc: dict) -> None:
        p = Path(self.path)
        tmp = p.with_suffix(p.suffix + ".tmp")
        payload = {"tag": self.tag, "done": sorted(done), "acc": {k: v.to_json() for k, v in acc.items()}}
        tmp.write_text(json.dumps(payload))
        os.replace(tmp, p)


def run_replicates(sampler, n: int, reps: int, reducer: Callable, *, first_rep: int = 0,
                   workers: int | None = None, checkpoint: Checkpoint | None = None,
                   chunk: int = CHUNK) -> dict:
    """Apply ``reducer`` to replicates first_rep .. first_rep+reps-1 and merge."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    starts = list(range(first_rep, first_rep + reps, chunk))
    done, acc = checkpoint.load() if checkpoint else (set(), {})
    todo = [(sampler, n, s, min(chunk, first_rep + reps - s), reducer) for s in starts if s not in done]
    workers = default_workers() if workers is None else max(1, int(workers))
    since_save = 0

    def absorb(start, part):
        nonlocal acc, since_save
        acc = merge_accumulators(acc, part)
        done.add(start)
        since_save += 1
        if checkpoint and since_save >= checkpoint.every:
            checkpoint.save(done, acc)
            since_save = 0

    if workers == 1 or len(todo) <= 1:
        for task in todo:
            absorb(*_chunk_task(task))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for start, part in pool.map(_chunk_task, todo):
                absorb(start, part)
    if checkpoint:
        checkpoint.save(done, acc)
    return acc


def _check_reps(reps: int) -> None:
    if reps < MIN_REPS:
        raise ValueError(f"reps must be >= {MIN_REPS}")


def estimate_moment(sampler, p: float, n: int, reps: int, *, workers: int | None = None,
                    first_rep: int = 0) -> MomentEstimate:
    """Monte Carlo estimate of E[M_n^p]."""
    _check_reps(reps)
    if p < 0 and not sampler.strictly_positive:
        raise DomainError(f"{sampler.label}: negative moments need strictly positive martingale values")
    acc = run_replicates(sampler, n, reps, PathStatistics(horizons=(n,), powers=(p,)),
                         first_rep=first_rep, workers=workers)
    return acc[moment_key(p, n)]


def estimate_sup_tails(sampler, ts: Sequence[float], n: int, reps: int, *,
                       workers: int | None = None, first_rep: int = 0) -> list[TailEstimate]:
    _check_reps(reps)
    for t in ts:
        if not t > 1:
            raise ValueError("threshold t must be > 1")
    acc = run_replicates(sampler, n, reps, PathStatistics(sup_thresholds=tuple(ts)),
                         first_rep=first_rep, workers=workers)
    return [TailEstimate.from_trace(t, "sup", acc[f"sup>{t!r}"], sampler=sampler.label) for t in ts]


def estimate_sup_tail(sampler, t: float, n: int, reps: int, **kw) -> TailEstimate:
    """Fraction of replicates with max_{k<=n} M_k > t, with exact binomial bounds."""
    return estimate_sup_tails(sampler, [t], n, reps, **kw)[0]


def estimate_inf_tails(sampler, ts: Sequence[float], n: int, reps: int, *,
                       workers: int | None = None, first_rep: int = 0) -> list[TailEstimate]:
    _check_reps(reps)
    for t in ts:
        if not t >= 1:
            raise ValueError("threshold t must be >= 1")
    acc = run_replicates(sampler, n, reps, PathStatistics(inf_thresholds=tuple(ts)),
                         first_rep=first_rep, workers=workers)
    return [TailEstimate.from_trace(t, "inf", acc[f"inf<=1/{t!r}"], sampler=sampler.label) for t in ts]


def estimate_inf_tail(sampler, t: float, n: int, reps: int, **kw) -> TailEstimate:
    """Fraction of replicates with min_{k<=n} M_k <= 1/t."""
    return estimate_inf_tails(sampler, [t], n, reps, **kw)[0]


# ---------------------------------------------------------------------------
# proof machinery


def f_delta_eps(delta: float, eps: float, x):
    """min(delta * (x/eps - 1), 1): concave, 0 at x=eps, capped at 1 from (1/delta + 1) eps on."""
    if not (np.all(np.asarray(delta) > 0) and np.all(np.asarray(eps) > 0)):
        raise ValueError("delta and eps must be > 0")
    x = np.asarray(x, dtype=np.float64)
    # the cap is applied on the same computed threshold the sandwich bound uses,
    # so rounding in x/eps cannot leave f just below 1 there
    cap = x >= (1.0 / np.asarray(delta) + 1.0) * eps
    out = np.where(cap, 1.0, np.minimum(delta * (x / eps - 1.0), 1.0))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class TestFunction:
    """Convex test function for the domination check."""

    name: str
    c: float = 1.0
    delta: float = 0.5
    eps: float = 0.5

    NAMES = ("identity", "x2", "x4", "exp", "neg_f_delta_eps")

    def __post_init__(self):
        if self.name not in self.NAMES:
            raise ValueError(f"unknown test function {self.name!r}; choose from {self.NAMES}")

    @property
    def linear(self) -> bool:
        return self.name == "identity"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.name == "identity":
            return x
        if self.name == "x2":
            return x * x
        if self.name == "x4":
            return (x * x) ** 2
        if self.name == "exp":
            return np.exp(x / self.c)
        return -f_delta_eps(self.delta, self.eps, x)


@dataclass(frozen=True)
class _DominationStats:
    """Paired block: f(M_{k+l}/M_k) on {M_k > 0}, one accumulator per test function."""

    k: int
    l: int
    fs: tuple[TestFunction, ...]

    def __call__(self, paths: np.ndarray, first_rep: int) -> dict:
        alive = np.flatnonzero(paths[:, self.k] > 0)
        ratio = paths[alive, self.k + self.l] / paths[alive, self.k]
        return {f"lhs{i}": MomentEstimate.from_values(f"lhs{i}", f(ratio)) for i, f in enumerate(self.fs)}


@dataclass(frozen=True)
class _IndependentStats:
    """Independent block: f(M_l)."""

    l: int
    fs: tuple[TestFunction, ...]

    def __call__(self, paths: np.ndarray, first_rep: int) -> dict:
        col = paths[:, self.l]
        return {f"rhs{i}": MomentEstimate.from_values(f"rhs{i}", f(col)) for i, f in enumerate(self.fs)}


@dataclass(frozen=True)
class DominationVerdict:
    sampler: str
    f: str
    k: int
    l: int
    lhs: MomentEstimate
    rhs: MomentEstimate
    surviving: int
    verdict: str
    two_sided: bool
    slack: float = 3.0

    @property
    def combined_se(self) -> float:
        return math.hypot(self.lhs.std_error, self.rhs.std_error)

    def to_record(self) -> dict:
        return {"statistic": f"domination[{self.f}](k={self.k},l={self.l})", "sampler": self.sampler,
                "N": self.lhs.sample_count, "mean": self.lhs.mean, "SE": self.lhs.std_error,
                "CI": list(self.lhs.ci), "rhs_mean": self.rhs.mean, "rhs_SE": self.rhs.std_error,
                "surviving": self.surviving, "verdict": self.verdict}


def domination_tests(sampler, fs: Sequence[TestFunction | str], k: int, l: int, reps: int, *,
                     workers: int | None = None, slack: float = 3.0) -> list[DominationVerdict]:
    """Compare the mean of f(M_{k+l}/M_k) on {M_k > 0} with the mean of f(M_l), for each f.

    Paired values use replicates 0..reps-1; the independent copy of M_l uses
    replicates reps..2*reps-1.
    """
    fs = tuple(TestFunction(f) if isinstance(f, str) else f for f in fs)
    _check_reps(reps)
    if k < 0 or l < 0:
        raise ValueError("k and l must be >= 0")
    lhs = run_replicates(sampler, k + l, reps, _DominationStats(k, l, fs), workers=workers)
    rhs = run_replicates(sampler, l, reps, _IndependentStats(l, fs), first_rep=reps, workers=workers)
    return [domination_verdict(sampler.label, f, k, l, lhs[f"lhs{i}"], rhs[f"rhs{i}"], slack)
            for i, f in enumerate(fs)]


def domination_test(sampler, f: TestFunction | str, k: int, l: int, reps: int, *,
                    workers: int | None = None, slack: float = 3.0) -> DominationVerdict:
    return domination_tests(sampler, [f], k, l, reps, workers=workers, slack=slack)[0]


def domination_verdict(label: str, f: TestFunction, k: int, l: int, lhs: MomentEstimate,
                       rhs: MomentEstimate, slack: float = 3.0) -> DominationVerdict:
    surviving = lhs.sample_count
    se = math.hypot(lhs.std_error, rhs.std_error) if surviving >= 2 else math.inf
    if surviving < MIN_SURVIVORS:
        verdict = "inconclusive"
    elif f.linear:
        verdict = "pass" if abs(lhs.mean - rhs.mean) <= slack * se else "fail"
    else:
        verdict = "pass" if lhs.mean <= rhs.mean + slack * se else "fail"
    return DominationVerdict(label, f.name, k, l, lhs, rhs, surviving, verdict, f.linear, slack)


def _epsilon(t: float, cap: float) -> float:
    """Largest eps <= cap (up to rounding) with t^eps <= 2."""
    eps = min(cap, math.log(2.0) / math.log(t))
    while t**eps > 2.0:
        eps = math.nextafter(eps, 0.0)
    return eps


@dataclass(frozen=True)
class Certificate:
    """Moment bound obtained from a running-extremum tail bound by the bootstrap inequality.

    ``lp``: E[M_n^{1+eps}] <= t^{1+eps} + (Kt)^{1+eps} P(tau <= n) E[M_n^{1+eps}], so a tail
    below 1/(4K^2 t) gives E[M_n^{1+eps}] <= 2 t^{1+eps}.  ``negative-moment``: same with
    exponent eps on M_n^{-eps} and tail below 1/(4K^2).
    """

    kind: str
    t: float
    K: float
    epsilon: float
    exponent: float
    bound: float
    witness: TailEstimate
    status: str
    requirement: float
    horizon: int
    label: str = "empirical"

    @property
    def certified(self) -> bool:
        return self.status == "certified"

    @property
    def gap(self) -> float:
        """upper_conf - requirement; positive means the hypothesis failed."""
        return self.witness.upper_conf - self.requirement

    @property
    def chain_factor(self) -> float:
        """(Kt)^a * P(tau <= n) with a the bootstrap exponent; at most 1/2 when certified."""
        a = self.exponent if self.kind == "lp" else self.epsilon
        return (self.K * self.t) ** a * self.witness.upper_conf

    @property
    def bootstrap_bound(self) -> float:
        """t^a / (1 - chain_factor): the bound the inequality itself yields."""
        a = self.exponent if self.kind == "lp" else self.epsilon
        c = self.chain_factor
        return self.t**a / (1.0 - c) if c < 1 else math.inf

    def to_record(self) -> dict:
        return {"statistic": f"certificate[{self.kind}]", "sampler": self.witness.sampler,
                "status": self.status, "t": self.t, "K": self.K, "epsilon": self.epsilon,
                "exponent": self.exponent, "bound": self.bound, "requirement": self.requirement,
                "N": self.witness.sample_count, "mean": self.witness.estimate,
                "CI": [self.witness.lower_conf, self.witness.upper_conf],
                "horizon": self.horizon, "label": self.label}


def _check_cert_args(tail: TailEstimate, K: float, kind: str) -> None:
    if not tail.threshold > 1:
        raise ValueError("certificate threshold t must be > 1")
    if not K >= 1:
        raise ValueError("ratio constant K must be >= 1")
    if tail.kind != kind:
        raise ValueError(f"witness must be a {kind!r} tail, got {tail.kind!r}")


def lp_certificate(tail: TailEstimate, K: float) -> Certificate:
    _check_cert_args(tail, K, "sup")
    t = tail.threshold
    need = 1.0 / (4.0 * K * K * t)
    eps = _epsilon(t, 1.0)
    if tail.upper_conf <= need:
        # guard both readings of the chain against rounding at the boundary;
        # back off geometrically since K^(eps-1) is flat near K = 1
        eps0, step = eps, math.ulp(eps)
        for _ in range(GUARD_STEPS):
            chain = (K * t) ** (1 + eps)
            if chain * tail.upper_conf <= 0.5 and chain * need <= t**eps / 4 <= 0.5:
                return Certificate("lp", t, K, eps, 1 + eps, 2.0 * t ** (1 + eps), tail, "certified",
                                   need, tail.horizon)
            eps = eps0 - step
            step *= 2
    return Certificate("lp", t, K, eps, 1 + eps, math.inf, tail, "refused", need, tail.horizon)


def neg_moment_certificate(tail: TailEstimate, K: float) -> Certificate:
    _check_cert_args(tail, K, "inf")
    t = tail.threshold
    need = 1.0 / (4.0 * K * K)
    eps = _epsilon(t, 1.0)
    if tail.upper_conf <= need:
        while (K * t) ** eps * tail.upper_conf > 0.5:
            eps = math.nextafter(eps, 0.0)
        return Certificate("negative-moment", t, K, eps, -eps, 2.0 * t**eps, tail, "certified", need,
                           tail.horizon)
    return Certificate("negative-moment", t, K, eps, -eps, math.inf, tail, "refused", need, tail.horizon)


@dataclass(frozen=True)
class StrongDisorderRecord:
    t: float
    K: float
    horizon: int
    floor: float
    estimate: float
    lower_conf: float
    upper_conf: float
    half_horizon: int
    hits_half: int
    hits_full: int
    trend_ok: bool
    status: str
    floor_support: float | None = None
    sampler: str = ""
    sample_count: int = 0

    def to_record(self) -> dict:
        d = asdict(self)
        d["statistic"] = f"strong_disorder_tail(t={self.t!r})"
        d.update(N=self.sample_count, mean=self.estimate, CI=[self.lower_conf, self.upper_conf])
        return d


def strong_disorder_bound_check(tail: TailEstimate, K: float, support_K: float | None = None) -> StrongDisorderRecord:
    """Finite-horizon tail P(M_n^* > t) against the floor 1/(4K^2 t). Informational only."""
    if not tail.threshold > 1:
        raise ValueError("threshold t must be > 1")
    if tail.kind != "sup" or not tail.hit_trace:
        raise ValueError("need a sup-tail estimate carrying its hit trace")
    t = tail.threshold
    floor = 1.0 / (4.0 * K * K * t)
    half = tail.horizon // 2
    trend_ok = all(a <= b for a, b in zip(tail.hit_trace, tail.hit_trace[1:]))
    trend_ok = trend_ok and tail.hits_at(half) <= tail.hit_count
    if tail.upper_conf >= floor:
        status = "consistent"
    else:
        status = "finite-horizon check fails; consistent only with weak disorder"
    fs = None if support_K is None else 1.0 / (4.0 * support_K**2 * t)
    return StrongDisorderRecord(t, K, tail.horizon, floor, tail.estimate, tail.lower_conf,
                                tail.upper_conf, half, tail.hits_at(half), tail.hit_count,
                                trend_ok, status, fs, tail.sampler, tail.sample_count)


def first_passage(path, t: float) -> int | None:
    """tau = inf{k : M_k > t}."""
    if not t > 0:
        raise ValueError("t must be > 0")
    values = np.asarray(getattr(path, "values", path))
    idx = np.flatnonzero(values > t)
    return int(idx[0]) if idx.size else None


@dataclass(frozen=True)
class DoobCheck:
    p: float
    horizon: int
    sup_norm: float
    bound: float
    se: float
    passed: bool


def doob_check(sampler, p: float, n: int, reps: int, *, workers: int | None = None, slack: float = 5.0) -> DoobCheck:
    """||M_n^*||_p <= p/(p-1) max_k ||M_k||_p, with ``slack`` delta-method SEs."""
    if not p > 1:
        raise ValueError("p must be > 1")
    _check_reps(reps)
    horizons = tuple(range(n + 1))
    acc = run_replicates(sampler, n, reps, PathStatistics(horizons=horizons, powers=(p,), sup_powers=(p,)),
                         workers=workers)
    star = acc[f"E[sup_(k<={n}) M_k^{p!r}]"]

    def root(est):
        m = est.mean
        return m ** (1 / p), (m ** (1 / p - 1) / p) * est.std_error

    lhs, lse = root(star)
    best = max((acc[moment_key(p, h)] for h in horizons), key=lambda e: e.mean)
    rhs, rse = root(best)
    rhs *= p / (p - 1)
    rse *= p / (p - 1)
    se = math.hypot(lse, rse)
    return DoobCheck(p, n, lhs, rhs, se, lhs <= rhs + slack * se)


def write_records(path, records: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, Fraction):
        return _frac_str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
