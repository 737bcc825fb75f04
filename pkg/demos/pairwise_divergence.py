"""Pairwise success prediction: accuracy as the outcome deciles of the two apps
move apart.  Training pairs use (t0 -> t1), test pairs use (t1 -> t2).

    python demos/pairwise_divergence.py [seed]
"""
import sys

import numpy as np
from scipy.stats import spearmanr

from applife.features import FeatureOptions
from applife.forest import ForestConfig
from applife.simulator import AppRegime, EcosystemSpec, GraphGenConfig, generate_graph, simulate_ecosystem
from applife.tasks import run_pairwise_task

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
H = 480
graph = generate_graph(GraphGenConfig(model="erdos_renyi", node_count=5000, edge_prob=20 / 5000, seed=seed))
regimes = [AppRegime(name=f"q{i}", alpha=float(10 ** (-3 + 1.3 * f)), beta=1e-3, retention_a=0.7 - 0.5 * f,
                     retention_xa=0.03 + 0.27 * f, susceptible_frac=0.05, horizon=H)
           for i, f in enumerate(np.linspace(0, 1, 8))]
eco = simulate_ecosystem(EcosystemSpec(500, tuple((r, 1) for r in regimes), seed=seed, launch_window=270), graph, None)

rep = run_pairwise_task(eco.log, graph, None, 119, 299, 479, cfg=ForestConfig(n_trees=30, seed=seed, importance=False),
                        options=FeatureOptions(months=3), seed=seed, max_pairs=1000)
acc = rep.accuracy["Temporal"]
for k in rep.ks:
    print(f"k={k} accuracy={acc[k]:.3f} test pairs={rep.n_test[k]}")
print("spearman", round(spearmanr(rep.ks, [acc[k] for k in rep.ks]).statistic, 3))
