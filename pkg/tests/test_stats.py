import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from applife.stats import binomial_band, bootstrap_mean_ci, entropy_bits, ks_test


def brute_ks_D(a, b):
    xs = np.union1d(a, b)
    fa = np.array([np.mean(np.asarray(a) <= x) for x in xs])
    fb = np.array([np.mean(np.asarray(b) <= x) for x in xs])
    return float(np.max(np.abs(fa - fb)))


def test_ks_identical():
    r = ks_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert r.D == 0 and r.p_value == 1.0


def test_ks_disjoint():
    assert ks_test([0, 0, 0], [1, 1, 1]).D == 1.0


def test_ks_shift_detected():
    rng = np.random.default_rng(4)
    r = ks_test(rng.normal(0, 1, 1000), rng.normal(0.5, 1, 1000))
    assert r.p_value < 0.01


def test_ks_against_asymptotic_reference():
    # Kolmogorov tail series at the corrected lambda, evaluated independently
    rng = np.random.default_rng(8)
    a, b = rng.normal(0, 1, 300), rng.normal(0.2, 1, 400)
    r = ks_test(a, b)
    D = brute_ks_D(a, b)
    ne = 300 * 400 / 700
    lam = (math.sqrt(ne) + 0.12 + 0.11 / math.sqrt(ne)) * D
    q = 2 * sum((-1) ** (j - 1) * math.exp(-2 * j * j * lam * lam) for j in range(1, 200))
    assert r.D == pytest.approx(D, abs=1e-12)
    assert r.p_value == pytest.approx(min(max(q, 0), 1), abs=1e-9)


def test_ks_empty():
    with pytest.raises(ValueError):
        ks_test([], [1.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-20, 20), min_size=1, max_size=30), st.lists(st.integers(-20, 20), min_size=1, max_size=30))
def test_ks_properties(a, b):
    r = ks_test(a, b)
    assert r.D == pytest.approx(brute_ks_D(a, b), abs=1e-12)
    assert ks_test(b, a).D == r.D
    # strictly monotone transform
    assert ks_test(np.exp(np.array(a) / 5), np.exp(np.array(b) / 5)).D == pytest.approx(r.D, abs=1e-12)
    assert 0 <= r.p_value <= 1


def test_bootstrap_constant():
    b = bootstrap_mean_ci([3.0] * 20, n_boot=200, seed=1)
    for lo, hi in b.bands.values():
        assert lo == hi == 3.0


def test_bootstrap_determinism_and_nesting():
    x = np.random.default_rng(0).random(50)
    a = bootstrap_mean_ci(x, 300, seed=5)
    b = bootstrap_mean_ci(x, 300, seed=5)
    assert a.bands == b.bands and a.estimate == b.estimate
    (l68, h68), (l95, h95), (l99, h99) = (a.bands[k] for k in sorted(a.bands))
    assert l99 <= l95 <= l68 <= h68 <= h95 <= h99


def test_bootstrap_clt_width():
    x = np.random.default_rng(1).random(10_000)
    b = bootstrap_mean_ci(x, 2000, seed=2)
    lo, hi = b.bands[0.95]
    target = 1.96 / math.sqrt(12 * 10_000)
    assert abs((hi - lo) / 2 - target) <= 0.2 * target


def test_binomial_band():
    assert binomial_band(0.5, 10_000) == 4.4172 * 0.005
    assert binomial_band(0.0, 10) == 0 and binomial_band(1.0, 10) == 0
    assert binomial_band(0.5, 1) == pytest.approx(2.2086, abs=1e-12)


def test_entropy():
    assert entropy_bits([0.5, 0.5]) == 1.0
    assert entropy_bits([1.0]) == 0.0
    assert entropy_bits([0.25, 0.75]) == pytest.approx(0.811278, abs=1e-6)
    with pytest.raises(ValueError):
        entropy_bits([-0.1, 1.1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=12).filter(lambda v: sum(v) > 0))
def test_entropy_bounded_by_uniform(w):
    p = np.array(w) / sum(w)
    h = entropy_bits(p)
    assert -1e-12 <= h <= math.log2(len(p)) + 1e-9
