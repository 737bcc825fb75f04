import numpy as np
import pytest

from applife.core import log_to_csv
from applife.simulator import (AppRegime, EcosystemSpec, GraphGenConfig, assign_attributes, default_distributions,
                               draw_lifetimes, generate_graph, simulate_app, simulate_cohort, simulate_ecosystem,
                               substream)
from applife.sociality import sociality_point

from conftest import path_graph


def er(n, p, seed=0):
    return generate_graph(GraphGenConfig(model="erdos_renyi", node_count=n, edge_prob=p, seed=seed))


def test_er_extremes():
    assert er(10, 0.0).edge_count == 0
    assert er(10, 1.0).edge_count == 45


def test_ba_mean_degree_and_determinism():
    cfg = GraphGenConfig(model="barabasi_albert", node_count=1000, attach_degree=3, seed=7)
    g = generate_graph(cfg)
    assert g.degree.mean() == pytest.approx(6.0, abs=0.1)
    assert generate_graph(cfg) == g


def test_infeasible_graph_params():
    with pytest.raises(ValueError):
        GraphGenConfig(model="barabasi_albert", node_count=5, attach_degree=5)
    with pytest.raises(ValueError):
        GraphGenConfig(model="nope", node_count=5)


def test_degree_cap_applied_to_generated_graph():
    g = generate_graph(GraphGenConfig(model="barabasi_albert", node_count=2000, attach_degree=3, degree_cap=40, seed=1))
    assert g.degree.max() <= 40


def test_attribute_marginals_without_homophily():
    g = er(20_000, 0.0005, seed=3)
    at = assign_attributes(g, homophily_weight=0.0, seed=4)
    n = g.node_count
    for c, p in default_distributions()["country"].items():
        sd = np.sqrt(n * p * (1 - p))
        assert abs(np.sum(at.country == c) - n * p) <= 3 * sd


def test_full_homophily_single_country():
    g = path_graph(200)
    at = assign_attributes(g, homophily_weight=1.0, seed=9)
    assert len(set(at.country)) == 1


def test_fb_l7_point_mass():
    g = er(100, 0.05)
    at = assign_attributes(g, {"fb_l7": {7: 1.0}}, seed=1)
    assert np.all(at.fb_l7 == 7)


def test_no_adoption_channel():
    g = er(500, 0.01)
    ev = simulate_app(g, None, AppRegime(alpha=0.0, beta=0.0, horizon=30), seed=1)
    assert len(ev) == 0


def test_everyone_adopts_and_stays():
    g = er(300, 0.01)
    reg = AppRegime(alpha=1.0, engagement_rho=1.0, retention_xa=1e-12, horizon=20)
    ev = simulate_app(g, None, reg, seed=2)
    assert len(ev) == 300 * 20
    users, first = ev.first_days()
    assert len(users) == 300 and np.all(first == 0)


def test_null_model_sociality_ratio():
    g = er(10_000, 10 / 10_000, seed=5)
    reg = AppRegime(alpha=0.01, beta=0.0, horizon=100)
    ev = simulate_app(g, None, reg, seed=6)
    from applife.core import ActivityLog
    pt = sociality_point(ActivityLog({0: ev}, 100), g, 0, 99)
    assert 0.9 <= pt.ratio <= 1.1


def test_events_within_window():
    g = er(400, 0.02)
    reg = AppRegime(alpha=0.01, beta=0.02, reactivation_eps=0.3, horizon=60)
    ev = simulate_app(g, None, reg, seed=3, launch_day=10)
    assert ev.days.min() >= 10 and ev.days.max() < 60


def test_lifetime_survival_matches_model():
    rng = np.random.default_rng(0)
    a, xa = 0.4, 0.3
    life = draw_lifetimes(rng, 200_000, a, xa)
    for t in (1, 5, 20):
        expected = np.exp(-xa * t ** (1 - a) / (1 - a))
        assert np.mean(life >= t) == pytest.approx(expected, abs=0.005)


def test_cohort_retention_thinning():
    reg = AppRegime(alpha=1.0, engagement_rho=0.6, retention_a=0.0, retention_xa=0.1, horizon=40)
    ev = simulate_cohort(20_000, reg, seed=1)
    # day-1 activity = rho * survival(1)
    frac = np.mean(ev.days == 1) * len(ev) / 20_000
    assert frac == pytest.approx(0.6 * np.exp(-0.1), abs=0.015)


def test_empty_ecosystem():
    g = er(20, 0.1)
    eco = simulate_ecosystem(EcosystemSpec(0, ((AppRegime(), 1.0),)), g, None)
    assert eco.log.app_ids == []


def test_regime_mixture_counts():
    g = er(30, 0.1)
    spec = EcosystemSpec(500, ((AppRegime(name="a", horizon=2), 1.0), (AppRegime(name="b", horizon=2), 1.0)), seed=11)
    eco = simulate_ecosystem(spec, g, None)
    n_a = sum(v == "a" for v in eco.ground_truth.values())
    assert abs(n_a - 250) <= 3 * np.sqrt(500 * 0.25)


def test_ecosystem_determinism_and_workers():
    g = er(300, 0.02, seed=2)
    at = assign_attributes(g, seed=1)
    spec = EcosystemSpec(6, ((AppRegime(alpha=0.01, beta=0.01, social_mode="components", horizon=40), 1.0),
                             (AppRegime(alpha=0.02, beta=0.03, social_mode="edges", reactivation_eps=0.2,
                                        target_country="US", affinity_boost=3.0, horizon=40), 1.0)),
                         seed=4, launch_window=10)
    a = simulate_ecosystem(spec, g, at)
    b = simulate_ecosystem(spec, g, at)
    c = simulate_ecosystem(spec, g, at, workers=2)
    assert log_to_csv(a.log) == log_to_csv(b.log) == log_to_csv(c.log)
    assert a.ground_truth == c.ground_truth


def test_spec_roundtrip():
    spec = EcosystemSpec(3, ((AppRegime(name="x", beta=0.1), 2.0),), seed=5, launch_window=7)
    assert EcosystemSpec.from_dict(spec.to_dict()) == spec


def test_regime_validation():
    with pytest.raises(ValueError):
        AppRegime(alpha=1.5)
    with pytest.raises(ValueError):
        AppRegime(social_mode="triangles")
    with pytest.raises(ValueError):
        AppRegime.from_dict({"gamma": 1})


def test_substreams_independent_of_order():
    a = substream(3, 1).random(3)
    substream(3, 0).random(10)
    assert np.array_equal(a, substream(3, 1).random(3))
