import numpy as np
import pytest

from applife.core import ActivityLog, SocialGraph


def path_graph(n):
    return SocialGraph(n, [(i, i + 1) for i in range(n - 1)])


def random_graph(rng, n, p):
    iu = np.triu_indices(n, 1)
    keep = rng.random(len(iu[0])) < p
    return SocialGraph(n, list(zip(iu[0][keep].tolist(), iu[1][keep].tolist())))


def log_from(records, horizon):
    return ActivityLog.from_records(records, horizon)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def two_regime_spec(app_count=80, horizon=240, seed=3, launch_window=100, sustain_weight=1.0, collapse_weight=1.0):
    from applife.simulator import AppRegime, EcosystemSpec
    sustain = AppRegime(name="sustain", alpha=1.5e-3, beta=1e-3, retention_a=0.7, retention_xa=0.03,
                        engagement_rho=0.5, susceptible_frac=0.05, horizon=horizon)
    collapse = AppRegime(name="collapse", alpha=1.5e-2, beta=1e-3, retention_a=0.2, retention_xa=0.3,
                         susceptible_frac=0.05, horizon=horizon)
    return EcosystemSpec(app_count, ((sustain, sustain_weight), (collapse, collapse_weight)), seed=seed,
                         launch_window=launch_window)


def graded_spec(app_count=200, horizon=300, seed=3, launch_window=150, levels=4):
    """Regimes ordered from long-lived to short-lived."""
    from applife.simulator import AppRegime, EcosystemSpec
    regs = [AppRegime(name=f"q{i}", alpha=float(10 ** (-3 + 1.3 * f)), beta=1e-3, retention_a=0.7 - 0.5 * f,
                      retention_xa=0.03 + 0.27 * f, susceptible_frac=0.05, horizon=horizon)
            for i, f in enumerate(np.linspace(0, 1, levels))]
    return EcosystemSpec(app_count, tuple((r, 1.0) for r in regs), seed=seed, launch_window=launch_window)


@pytest.fixture(scope="session")
def small_world():
    from applife.simulator import GraphGenConfig, assign_attributes, generate_graph
    g = generate_graph(GraphGenConfig(model="erdos_renyi", node_count=3000, edge_prob=15 / 3000, seed=1))
    return g, assign_attributes(g, seed=2)


@pytest.fixture(scope="session")
def two_regime(small_world):
    from applife.simulator import simulate_ecosystem
    g, at = small_world
    return simulate_ecosystem(two_regime_spec(), g, at)


@pytest.fixture(scope="session")
def graded(small_world):
    from applife.simulator import simulate_ecosystem
    return simulate_ecosystem(graded_spec(), small_world[0], None)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
