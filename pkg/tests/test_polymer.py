import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polylab.disorder import DisorderDist, log_mgf, ratio_bounds
from polylab.lattice import cone, cone_size, down_neighbors, up_neighbors
from polylab.paths import MartingalePath
from polylab.polymer import (EnvField, PolymerSampler, SliceState, brute_force_partition, dp_step,
                             endpoint_measure, log_shifted_martingales, polymer_slices,
                             product_identity_check, product_identity_residuals, run_polymer,
                             shifted_martingale)

RAD = DisorderDist.rademacher()


def _last(env, beta, n):
    *_, state = polymer_slices(env, beta, n)
    return state


def _paths_by_hand(env, beta, n):
    """Independent enumeration with itertools (d=1 only)."""
    terms = []
    for steps in itertools.product((-1, 1), repeat=n):
        x = np.cumsum(steps)
        h = sum(env.value(t + 1, [x[t]]) for t in range(n))
        terms.append(math.exp(beta * h))
    return math.log(math.fsum(terms) / 2**n)


def test_cone_reachability():
    for d in (1, 2, 3):
        for n in range(6):
            pts = cone(d, n)
            l1 = np.abs(pts).sum(axis=1)
            assert np.all(l1 <= n) and np.all((l1 - n) % 2 == 0)
            # every reachable point appears once
            assert len({tuple(p) for p in pts}) == len(pts) == cone_size(d, n)
    assert cone_size(1, 4) == 5
    assert cone_size(2, 2) == 9


def test_neighbor_tables_are_consistent():
    d, n = 2, 4
    down = down_neighbors(d, n)
    up = up_neighbors(d, n)
    nxt, cur = cone(d, n + 1), cone(d, n)
    for i, row in enumerate(down):
        for j in row[row >= 0]:
            assert np.abs(nxt[i] - cur[j]).sum() == 1
    assert np.all(up >= 0)
    for j, row in enumerate(up):
        assert all(np.abs(nxt[i] - cur[j]).sum() == 1 for i in row)


def test_dp_one_step_by_hand():
    env = EnvField(RAD, 4, 0, 1)
    a, b = env.value(1, [-1]), env.value(1, [1])
    beta = 0.9
    z1 = 0.5 * (math.exp(beta * a) + math.exp(beta * b))
    state = dp_step(SliceState.initial(1), env, beta)
    assert state.time == 1
    assert math.exp(state.log_partition) == pytest.approx(z1, rel=1e-15)
    assert state.log_lambda_n == log_mgf(RAD, beta)


def test_brute_force_two_steps_by_hand():
    env = EnvField(RAD, 8, 2, 1)
    beta = 0.6
    assert brute_force_partition(env, beta, 2) == pytest.approx(_paths_by_hand(env, beta, 2), abs=1e-14)
    assert brute_force_partition(env, beta, 0) == 0.0


def test_brute_force_matches_itertools_oracle():
    env = EnvField(RAD, 1, 5, 1)
    assert brute_force_partition(env, 0.7, 8) == pytest.approx(_paths_by_hand(env, 0.7, 8), abs=1e-12)


def test_brute_force_guard():
    with pytest.raises(ValueError, match="refused"):
        brute_force_partition(EnvField(RAD, 0, 0, 3), 1.0, 10)


def test_dp_matches_brute_force_d1_n6():
    env = EnvField(RAD, 0, 0, 1)
    dp = _last(env, 0.7, 6).log_partition
    bf = brute_force_partition(env, 0.7, 6)
    assert dp == pytest.approx(bf, rel=1e-10)


@pytest.mark.parametrize("seed", range(100))
def test_dp_matches_brute_force_d2_n5(seed):
    env = EnvField(RAD, seed, seed, 2)
    assert abs(_last(env, 0.8, 5).log_partition - brute_force_partition(env, 0.8, 5)) < 1e-10


def test_gaussian_dp_matches_brute_force():
    env = EnvField(DisorderDist.gaussian(0.2, 1.5), 3, 1, 2)
    assert abs(_last(env, 0.5, 4).log_partition - brute_force_partition(env, 0.5, 4)) < 1e-10


def test_beta_zero_is_srw():
    env = EnvField(RAD, 0, 0, 2)
    for state in polymer_slices(env, 0.0, 6):
        assert math.exp(state.log_partition) == pytest.approx(1.0, abs=1e-14)
    assert np.array_equal(run_polymer(env, 0.0, 6).values, np.ones(7))
    mu = endpoint_measure(_last(EnvField(RAD, 0, 0, 1), 0.0, 2))
    assert mu == pytest.approx({(-2,): 0.25, (0,): 0.5, (2,): 0.25})


def test_zero_environment_is_constant():
    env = EnvField(DisorderDist.point_mass(0.0), 0, 0, 3)
    assert np.allclose(run_polymer(env, 1.3, 5).values, 1.0, rtol=0, atol=1e-15)


def test_slice_support_and_initial_state():
    s0 = SliceState.initial(3)
    assert s0.as_dict() == {(0, 0, 0): 0.0}
    for state in polymer_slices(EnvField(RAD, 1, 1, 3), 0.5, 5):
        assert len(state.logz) == cone_size(3, state.time)
        assert np.isfinite(state.log_partition)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        dp_step(SliceState.initial(2), EnvField(RAD, 0, 0, 1), 0.5)
    with pytest.raises(ValueError):
        run_polymer(EnvField(RAD, 0, 0, 1), 0.5, 3, dim=2)
    with pytest.raises(ValueError):
        brute_force_partition(EnvField(RAD, 0, 0, 1), 0.5, 3, dim=2)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 3), st.floats(0, 2))
def test_endpoint_measure_normalized(seed, d, beta):
    mu = endpoint_measure(_last(EnvField(RAD, seed, 0, d), beta, 4))
    assert math.fsum(mu.values()) == pytest.approx(1.0, abs=1e-12)


def test_mirror_symmetric_environment_gives_symmetric_measure():
    """Symmetrize a rademacher field on x -> -x and rerun the recursion."""

    class Mirrored(EnvField):
        def values(self, t, points):
            points = np.asarray(points).reshape(-1, self.dim)
            return EnvField.values(self, t, np.abs(points))

    env = Mirrored(RAD, 7, 0, 1)
    mu = endpoint_measure(_last(env, 1.2, 7))
    for (x,), m in mu.items():
        assert m == pytest.approx(mu[(-x,)], rel=1e-13)


def test_environment_values_are_stable():
    env = EnvField(RAD, 99, 3, 2)
    pts = cone(2, 5)
    a = env.values(5, pts)
    b = EnvField(RAD, 99, 3, 2).values(5, pts[::-1])[::-1]
    assert np.array_equal(a, b)
    # the shift reads omega_{k+t, y+x}
    sh = env.shifted(2, (1, -1))
    assert sh.value(3, (0, 2)) == env.value(5, (1, 1))


def test_shifted_martingale_identities():
    env = EnvField(RAD, 5, 1, 2)
    assert shifted_martingale(env, 0, (0, 0), 6, 0.8) == pytest.approx(run_polymer(env, 0.8, 6).values[6], rel=1e-15)
    assert shifted_martingale(env, 4, (2, 0), 0, 0.8) == 1.0


def test_shifted_martingale_mean_is_one():
    vals = np.array([shifted_martingale(EnvField(RAD, 0, r, 1), 3, (1,), 5, 0.8) for r in range(3000)])
    assert abs(vals.mean() - 1) < 3 * vals.std(ddof=1) / math.sqrt(len(vals))


def test_backward_dp_matches_direct_shifts():
    env = EnvField(RAD, 2, 0, 2)
    k, l, beta = 3, 4, 0.9
    pts, logw = log_shifted_martingales(env, k, l, beta)
    for p, lw in zip(pts, logw):
        assert math.exp(lw) == pytest.approx(shifted_martingale(env, k, p, l, beta), rel=1e-12)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_product_identity(d):
    for seed in range(3):
        res = product_identity_residuals(EnvField(RAD, seed, 0, d), 12 if d < 3 else 8, 0.8)
        assert max(res.values()) < 1e-10


def test_product_identity_special_cases():
    env = EnvField(RAD, 1, 0, 1)
    assert product_identity_check(env, 4, 4, 0.8) < 1e-10 * run_polymer(env, 0.8, 8).values[8]
    assert product_identity_check(env, 3, 5, 0.0) == 0.0
    assert product_identity_check(env, 0, 5, 0.8) < 1e-14


def test_identity_reports_dead_polymer():
    perc = DisorderDist.discrete([(0.0, 0.3), (-math.inf, 0.7)])
    env = next(EnvField(perc, 0, r, 1) for r in range(100) if run_polymer(EnvField(perc, 0, r, 1), 1.0, 3).values[3] == 0)
    with pytest.raises(RuntimeError):
        product_identity_check(env, 3, 2, 1.0)


@pytest.mark.parametrize("dist", [RAD, DisorderDist.gaussian(0, 1), DisorderDist.discrete([(0, .2), (1, .5), (3, .3)])])
@pytest.mark.parametrize("d", [1, 2, 3])
def test_kernel_matches_log_space_dp(dist, d):
    smp = PolymerSampler(dist, 0.9, d, master_seed=12)
    paths = smp.sample_paths(5, 6, 7)
    for i in range(6):
        ref = run_polymer(smp.env(5 + i), 0.9, 7).values
        np.testing.assert_allclose(paths[i], ref, rtol=1e-13, atol=0)


def test_kernel_percolation_mode():
    perc = DisorderDist.discrete([(0.0, 0.4), (-math.inf, 0.6)])
    smp = PolymerSampler(perc, 1.0, 1, 0)
    paths = smp.sample_paths(0, 200, 25)
    assert not np.isnan(paths).any()
    assert np.all(paths[:, -1] == 0)
    for r in (0, 7, 100):
        np.testing.assert_allclose(paths[r], run_polymer(smp.env(r), 1.0, 25).values, rtol=1e-13, atol=0)
    assert not smp.strictly_positive


def test_kernel_replicates_independent_of_batching():
    smp = PolymerSampler(RAD, 0.7, 2, 3)
    whole = smp.sample_paths(0, 50, 9)
    parts = np.vstack([smp.sample_paths(s, 10, 9) for s in range(0, 50, 10)])
    assert np.array_equal(whole, parts)
    # a longer horizon extends every path without changing its prefix
    assert np.array_equal(smp.sample_paths(0, 50, 12)[:, :10], whole)


@pytest.mark.parametrize("d,beta", [(1, 1.0), (2, 0.5), (3, 1.5)])
def test_per_path_ratio_bounds(d, beta):
    smp = PolymerSampler(RAD, beta, d, 1)
    paths = smp.sample_paths(0, 2000, 12)
    ratio = paths[:, 1:] / paths[:, :-1]
    upper, lower = ratio_bounds(RAD, beta, d)
    assert np.all(ratio <= upper * (1 + 1e-12)) and np.all(ratio >= lower * (1 - 1e-12))


def test_martingale_mean_d1():
    w = PolymerSampler(RAD, 1.0, 1, 0).sample_paths(0, 100_000, 10)[:, -1]
    assert abs(w.mean() - 1) < 3 * w.std(ddof=1) / math.sqrt(len(w))


def test_martingale_path_fields():
    p = MartingalePath([1.0, 3.0, 0.5])
    assert p.running_max == 3.0 and p.running_min == 0.5 and p.horizon == 2 and len(p) == 3
    with pytest.raises(ValueError):
        p.values[0] = 2.0
    path = run_polymer(EnvField(RAD, 0, 0, 1), 0.5, 5, dim=1)
    assert path.values[0] == 1.0 and path.beta == 0.5 and path.dim == 1
