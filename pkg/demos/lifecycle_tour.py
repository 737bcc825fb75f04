"""Walk through one small simulated ecosystem: adoption, sociality, retention,
DAU shapes and the binary success task.

    python demos/lifecycle_tour.py
"""
import numpy as np

from applife.features import FeatureOptions
from applife.forest import ForestConfig
from applife.retention import compute_retention, fit_exponential, fit_timedep
from applife.simulator import (AppRegime, EcosystemSpec, GraphGenConfig, assign_attributes, generate_graph,
                               simulate_ecosystem)
from applife.sociality import sociality_point
from applife.tasks import run_binary_task
from applife.timeseries import kmeans_cluster, launch_window, peak_normalize

H = 300
graph = generate_graph(GraphGenConfig(model="erdos_renyi", node_count=5000, edge_prob=15 / 5000, seed=1))
attrs = assign_attributes(graph, seed=2)
print(f"graph: {graph.node_count} nodes, {graph.edge_count} edges")

sustain = AppRegime(name="sustain", alpha=1.5e-3, beta=1e-3, retention_a=0.7, retention_xa=0.03,
                    susceptible_frac=0.05, horizon=H)
collapse = AppRegime(name="collapse", alpha=1.5e-2, beta=1e-3, retention_a=0.2, retention_xa=0.3,
                     susceptible_frac=0.05, horizon=H)
eco = simulate_ecosystem(EcosystemSpec(120, ((sustain, 1), (collapse, 1)), seed=3, launch_window=120), graph, attrs)

# who uses each app, and how social is that use
for a in eco.log.app_ids[:4]:
    pt = sociality_point(eco.log, graph, a, H - 1)
    print(f"app {a:3d} ({eco.ground_truth[a]:8s}) users={pt.n_users:4d} "
          f"p(x|y)={pt.sociality_conditional:.3f} ratio={pt.ratio:.2f}")

# retention: both decay models on the same curve
for a in eco.log.app_ids[:4]:
    curve = compute_retention(eco.log, a, 30)
    try:
        td, ex = fit_timedep(curve), fit_exponential(curve)
    except ValueError:
        continue
    print(f"app {a:3d} a={td.a:.2f} x_a={td.x_a:.3f} rmse={td.rmse:.3f} | A={ex.A:.2f} x0={ex.x0:.3f} rmse={ex.rmse:.3f}")

# DAU shapes after launch
windows = [launch_window(eco.log, a, 100) for a in eco.log.app_ids]
series = [peak_normalize(w) for w in windows if w is not None and w.values.max() > 0]
for k in (1, 2, 3, 4):
    r = kmeans_cluster(series, k, restarts=20, seed=0)
    print(f"k={k} train={r.train_score:.3f} test={r.test_score:.3f}")

reports, labeling, _ = run_binary_task(eco.log, graph, attrs, 179, 269, cfg=ForestConfig(n_trees=50, seed=0),
                                       options=FeatureOptions(months=3), seed=0)
print(f"\n{len(labeling.apps)} labelled apps, {labeling.positive_fraction:.2f} positive")
for r in reports:
    print(f"{r.feature_set:12s} acc={r.accuracy:.3f} baseline={r.baseline:.3f} "
          f"prec={np.round(r.precision, 2).tolist()} top={r.top_within_class[0][0]}")
