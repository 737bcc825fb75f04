import math

import numpy as np
import pytest

from applife.core import ActivityLog, AppEvents
from applife.retention import (RetentionFit, compute_retention, curve_from_probabilities, fit_exponential,
                               fit_timedep, fits_to_csv, predict_retention)
from applife.simulator import AppRegime, simulate_cohort

T = np.arange(31)


def test_single_user_curve():
    lg = ActivityLog({0: AppEvents.from_pairs([0, 0, 0], [5, 6, 8])}, 20)
    c = compute_retention(lg, 0, max_offset=5)
    assert c.N.tolist() == [1, 1, 0, 1, 0, 0]
    np.testing.assert_array_equal(c.P, [1, 1, 0, 1, 0, 0])
    assert c.n0 == 1


def test_censoring():
    # user 1 logs in first 2 days before the end of the log
    lg = ActivityLog({0: AppEvents.from_pairs([0, 1], [0, 17])}, 20)
    c = compute_retention(lg, 0, max_offset=5)
    assert c.eligible.tolist() == [2, 2, 2, 1, 1, 1]
    assert np.all(np.diff(c.eligible) <= 0)
    assert c.P[0] == 1.0


def test_errors():
    lg = ActivityLog({0: AppEvents.from_pairs([0], [0])}, 20)
    with pytest.raises(KeyError):
        compute_retention(lg, 7)
    with pytest.raises(ValueError):
        compute_retention(lg, 0, max_offset=20)


def test_full_engagement_is_flat():
    reg = AppRegime(alpha=0.1, beta=0.0, retention_a=0.0, retention_xa=1e-9, engagement_rho=1.0, horizon=60)
    ev = simulate_cohort(500, reg, seed=1, horizon=60)
    c = compute_retention(ActivityLog({0: ev}, 60), 0, 30)
    np.testing.assert_array_equal(c.P, 1.0)


def test_exponential_closed_form():
    f = fit_exponential(curve_from_probabilities(np.exp(-0.1 * T)))
    assert f.A == pytest.approx(1, abs=1e-9) and f.x0 == pytest.approx(0.1, abs=1e-9)
    assert f.rmse < 1e-9 and f.fit_range == (2, 30)
    f = fit_exponential(curve_from_probabilities(0.5 * np.exp(-0.2 * T)))
    assert f.A == pytest.approx(0.5, rel=1e-9) and f.x0 == pytest.approx(0.2, rel=1e-9)


def test_exponential_zero_counts_fall_back():
    P = np.exp(-0.3 * T)
    P[25:] = 0
    f = fit_exponential(curve_from_probabilities(P))
    assert f.fallback and f.x0 == pytest.approx(0.3, rel=0.05)


def test_too_few_eligible():
    with pytest.raises(ValueError):
        fit_exponential(curve_from_probabilities(np.exp(-0.1 * T), eligible=10))


def test_timedep_closed_form():
    f = fit_timedep(curve_from_probabilities(np.exp(-0.4 * np.sqrt(T))))
    assert abs(f.a - 0.5) < 1e-3 and abs(f.x_a - 0.2) < 1e-3
    assert 0 <= f.a <= 0.99 and f.rmse >= 0


@pytest.mark.parametrize("x", [0.01, 0.1, 0.37])
def test_nesting(x):
    curve = curve_from_probabilities(np.exp(-x * T))
    pinned = fit_timedep(curve, fix_a=0.0, t_min=2)
    assert abs(pinned.x_a - fit_exponential(curve).x0) < 1e-9
    e = RetentionFit("exponential", A=1.0, x0=pinned.x_a)
    np.testing.assert_allclose(predict_retention(pinned, T[1:]), predict_retention(e, T[1:]), rtol=1e-12)


def test_timedep_beats_amplitude_free_exponential():
    rng = np.random.default_rng(0)
    for _ in range(10):
        a, x = rng.uniform(0.1, 0.8), rng.uniform(0.05, 0.5)
        P = np.exp(-x * T ** (1 - a) / (1 - a)) * np.exp(rng.normal(0, 0.02, len(T)))
        P = np.clip(P, 0, 1)
        P[0] = 1
        c = curve_from_probabilities(P)
        assert fit_timedep(c).rmse <= fit_timedep(c, fix_a=0.0).rmse + 1e-12


def test_cohort_recovery():
    reg = AppRegime(alpha=0.1, beta=0.0, retention_a=0.4, retention_xa=0.3, engagement_rho=1.0, horizon=130)
    ev = simulate_cohort(100_000, reg, seed=3, adoption_spread=90, horizon=130)
    f = fit_timedep(compute_retention(ActivityLog({0: ev}, 130), 0, 30))
    assert f.a == pytest.approx(0.4, rel=0.05) and f.x_a == pytest.approx(0.3, rel=0.05)


def test_exponential_cohort_recovery():
    reg = AppRegime(alpha=0.1, beta=0.0, retention_a=0.0, retention_xa=0.1, engagement_rho=0.6, horizon=130)
    ev = simulate_cohort(100_000, reg, seed=4, adoption_spread=90, horizon=130)
    f = fit_exponential(compute_retention(ActivityLog({0: ev}, 130), 0, 30))
    assert f.x0 == pytest.approx(0.1, rel=0.1)
    assert f.A == pytest.approx(0.6, rel=0.1)


def test_predict_values():
    assert predict_retention(RetentionFit("exponential", A=1.0, x0=0.0), 17) == 1.0
    assert predict_retention(RetentionFit("timedep", a=0.0, x_a=0.1), 10) == pytest.approx(math.exp(-1))
    assert predict_retention(RetentionFit("timedep", a=0.5, x_a=0.2), 100) == pytest.approx(0.01832, abs=1e-5)
    with pytest.raises(ValueError):
        predict_retention(RetentionFit("timedep", a=0.5, x_a=0.2), -1)


def test_predict_decreasing_and_clamped():
    t = np.linspace(0, 50, 200)
    for fit in (RetentionFit("exponential", A=2.0, x0=0.05), RetentionFit("timedep", a=0.7, x_a=0.3)):
        v = predict_retention(fit, t)
        assert np.all((v >= 0) & (v <= 1))
    v = predict_retention(RetentionFit("timedep", a=0.7, x_a=0.3), t)
    assert np.all(np.diff(v) < 0)


def test_csv():
    text = fits_to_csv([(3, fit_exponential(curve_from_probabilities(np.exp(-0.1 * T))))])
    head, row = text.strip().split("\n")
    assert head == "app_id,model,A,x0,a,x_a,rmse,converged"
    assert row.startswith("3,exponential,") and row.endswith(",1")
