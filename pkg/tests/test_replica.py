import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polylab.disorder import DisorderDist, UnsupportedDistribution, log_mgf
from polylab.polymer import PolymerSampler
from polylab.replica import (CollisionWalkState, collision_exponent, collision_return_prob,
                             collision_return_probs, difference_step, difference_step_law,
                             l2_critical_beta, second_moment_exact)

RAD = DisorderDist.rademacher()


def _moment_by_enumeration(gamma, n, dim):
    """E[exp(gamma * #collisions)] over all pairs of walks, exact."""
    steps = [tuple(s if i == j else 0 for i in range(dim)) for j in range(dim) for s in (-1, 1)]
    total = 0.0
    for a in itertools.product(steps, repeat=n):
        for b in itertools.product(steps, repeat=n):
            da = np.cumsum(np.array(a) - np.array(b), axis=0)
            hits = int(np.sum(np.all(da == 0, axis=1)))
            total += math.exp(gamma * hits)
    return total / len(steps) ** (2 * n)


def test_collision_exponent_nonnegative():
    for beta in (0.0, 0.1, 0.5, 2.0):
        assert collision_exponent(RAD, beta) >= 0
    assert collision_exponent(RAD, 0.0) == 0.0
    assert collision_exponent(DisorderDist.gaussian(0, 1), 0.7) == pytest.approx(0.49, rel=1e-14)


def test_n1_closed_form():
    gamma = log_mgf(RAD, 1.0) - 2 * log_mgf(RAD, 0.5)
    assert abs(second_moment_exact(RAD, 0.5, 1, 1) - (1 + math.exp(gamma)) / 2) < 1e-12
    g = DisorderDist.discrete([(0, 0.3), (2, 0.7)])
    gg = collision_exponent(g, 0.8)
    assert abs(second_moment_exact(g, 0.8, 1, 1) - (1 + math.exp(gg)) / 2) < 1e-12


@pytest.mark.parametrize("dim,n", [(1, 5), (2, 3), (3, 2)])
def test_matches_pair_enumeration(dim, n):
    beta = 0.6
    exact = second_moment_exact(RAD, beta, n, dim)
    assert exact == pytest.approx(_moment_by_enumeration(collision_exponent(RAD, beta), n, dim), rel=1e-12)


def test_beta_zero_and_n_zero():
    assert second_moment_exact(RAD, 0.0, 10, 3) == 1.0
    assert second_moment_exact(RAD, 0.7, 0, 2) == 1.0


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 1.5), st.integers(1, 3))
def test_monotone_in_n(beta, dim):
    vals = [second_moment_exact(RAD, beta, n, dim) for n in range(0, 7)]
    assert vals[1] > 1
    assert all(b >= a * (1 - 1e-14) for a, b in zip(vals, vals[1:]))


def test_unsupported_distribution():
    # 2*beta*value overflows exp in the weight; lambda(2 beta) is still finite in log space
    assert math.isfinite(second_moment_exact(RAD, 400.0, 2, 1))
    with pytest.raises(UnsupportedDistribution):
        second_moment_exact(RAD, 1e308, 2, 1)
    # a -inf atom keeps lambda(2 beta) finite, so the moment is still defined
    perc = DisorderDist.discrete([(-math.inf, 0.5), (1.0, 0.5)])
    gamma = collision_exponent(perc, 0.5)
    assert second_moment_exact(perc, 0.5, 3, 1) == pytest.approx(_moment_by_enumeration(gamma, 3, 1), rel=1e-13)


def test_step_law():
    for d in (1, 2, 3):
        law = difference_step_law(d)
        assert math.fsum(law.values()) == 1.0
        for k, p in law.items():
            assert law[tuple(-v for v in k)] == p
        # DP kernel applied to a delta reproduces the enumeration
        r = 3
        a = np.zeros((2 * r + 1,) * d)
        a[(r,) * d] = 1.0
        b = difference_step(a)
        for k, p in law.items():
            assert b[tuple(r + v for v in k)] == pytest.approx(p, abs=1e-16)
    assert difference_step_law(1) == {(0,): 0.5, (2,): 0.25, (-2,): 0.25}


def test_collision_walk_state():
    s = CollisionWalkState.initial(2, 4)
    assert s.time == 0 and s.log_total == 0.0 and s.weights[s.origin] == 1.0
    up = s.step(0.4)
    down = s.step(-0.4)
    assert up.time == 1 and up.log_total >= 0 >= down.log_total


def test_return_probabilities():
    assert collision_return_prob(1, 1) == 0.5
    assert collision_return_prob(1, 2) == pytest.approx(0.625, abs=1e-15)
    seq = [collision_return_prob(1, h) for h in (10, 100, 1000)]
    assert seq[0] < seq[1] < seq[2] < 1
    assert seq[2] > 0.98
    for d in (1, 2, 3):
        probs = collision_return_probs(d, 40)
        assert probs[0] == 0
        assert np.all(np.diff(probs) >= 0)
        for h in range(1, 21):
            assert probs[2 * h] >= probs[h]


def test_return_probabilities_by_enumeration():
    """First-return probability in d=2 over all (4*4)^3 step pairs."""
    steps = [(1, 0), (-1, 0), (0, 1), (0, -1)]
    diffs = [np.subtract(a, b) for a in steps for b in steps]
    hit = 0
    for seq in itertools.product(range(16), repeat=3):
        pos = np.cumsum([diffs[i] for i in seq], axis=0)
        hit += bool(np.any(np.all(pos == 0, axis=1)))
    assert collision_return_prob(2, 3) == pytest.approx(hit / 16**3, abs=1e-15)


def test_window_matches_full_dp():
    """The windowed taboo DP gives the same probabilities as a full-box run."""
    h = 12
    r = h + 4
    w = np.zeros((2 * r + 1,) * 3)
    w[(r,) * 3] = 1.0
    full = [0.0]
    for _ in range(h):
        w = difference_step(w)
        full.append(full[-1] + w[(r,) * 3])
        w[(r,) * 3] = 0.0
    np.testing.assert_allclose(collision_return_probs(3, h), full, rtol=1e-13, atol=0)


def test_l2_threshold():
    assert l2_critical_beta(RAD, 1, 50) is None
    assert l2_critical_beta(RAD, 2, 20) is None
    g = DisorderDist.gaussian(0, 1)
    pi = collision_return_prob(3, 30)
    beta = l2_critical_beta(g, 3, 30)
    assert beta == pytest.approx(math.sqrt(-math.log(pi)), abs=1e-8)
    # more horizon, larger return probability, smaller threshold estimate
    assert l2_critical_beta(g, 3, 60) < beta
    # rademacher saturates at log 2, below -log pi_3
    assert l2_critical_beta(RAD, 3, 30) is None


def test_l2_threshold_for_bounded_law_with_root():
    d = DisorderDist.discrete([(0.0, 0.9), (1.0, 0.1)])
    beta = l2_critical_beta(d, 3, 30)
    assert beta is not None
    target = -math.log(collision_return_prob(3, 30))
    assert collision_exponent(d, beta) == pytest.approx(target, abs=1e-7)


@pytest.mark.parametrize("dim,beta,n", [(1, 0.5, 8), (2, 0.6, 10), (3, 0.8, 6)])
def test_exact_matches_monte_carlo(dim, beta, n):
    w = PolymerSampler(RAD, beta, dim, 21).sample_paths(0, 50_000, n)[:, -1]
    m2 = w * w
    se = m2.std(ddof=1) / math.sqrt(len(m2))
    assert abs(m2.mean() - second_moment_exact(RAD, beta, n, dim)) < 3 * se
