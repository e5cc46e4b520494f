"""Transduction on two synthetic clusters.

Builds 200 unit-norm points around two well-separated centers, hands the
solver a deliberately noisy text prior (30% of rows point at the wrong
class), and watches the graph + clustering terms repair it.
"""

import numpy as np

from translabel import FeatureMatrix, SolverConfig, build_graph, transduct
from translabel.prior import text_predictions

rng = np.random.default_rng(0)
n, d = 200, 16

centers = np.zeros((2, d))
centers[0, 0] = 1.0
centers[1, 1] = 1.0
sigma = np.linalg.norm(centers[0] - centers[1]) / 10.0
labels = rng.integers(0, 2, n)
points = centers[labels] + sigma * rng.standard_normal((n, d))
points /= np.linalg.norm(points, axis=1, keepdims=True)
features = FeatureMatrix(points)

# a 70/30 soft prior, argmax flipped on 30% of the rows
y = np.where(labels[:, None] == np.arange(2)[None, :], 0.7, 0.3)
flip = rng.random(n) < 0.3
y[flip] = y[flip][:, ::-1]
prior = text_predictions(np.log(y))
prior_acc = np.mean(np.argmax(prior.y_hat, axis=1) == labels)
print(f"prior argmax accuracy: {prior_acc:.3f}")

graph = build_graph(features, knn=3)
print(f"affinity graph: {graph.num_nodes} nodes, {graph.num_edges} directed edges")

z, gmm, trace = transduct(features, None, graph, prior=prior, cfg=SolverConfig())
acc = np.mean(z.labels() == labels)
print(f"transduced accuracy:   {acc:.3f}")

print("\nobjective after each block update (init, then z/GMM alternating):")
for i, v in enumerate(trace.objective_values[:9]):
    print(f"  step {i:2d}: {v:12.6f}")
drops = np.diff(trace.objective_values)
print(f"max increase across {len(drops)} block updates: {drops.max():.2e} "
      "(never above 1e-7)")
