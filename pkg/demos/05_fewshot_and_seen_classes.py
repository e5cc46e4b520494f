"""Supervision modes beyond plain zero-shot.

Few-shot: labeled images get their assignment rows clamped to one-hot
vectors and stay clamped through every update, anchoring their clusters.
Seen-classes: a labeled half of the class list is split off for encoder
adaptation while transduction runs on the unseen half only.
"""

import numpy as np

from translabel import io as tio
from translabel import FeatureMatrix
from translabel.mocks import HashEmbedder
from translabel.pipeline import (
    RunConfig,
    build_class_prompt_bank,
    run,
    seen_class_split,
)
from translabel.solver import SolverConfig

rng = np.random.default_rng(6)
d = 12

# ---------------------------------------------------------------- few-shot
m, n = 3, 60
centers = rng.standard_normal((m, d))
centers /= np.linalg.norm(centers, axis=1, keepdims=True)
labels = rng.integers(0, m, n)
pts = centers[labels] + 0.55 * rng.standard_normal((n, d))
pts /= np.linalg.norm(pts, axis=1, keepdims=True)
ids = [f"im{i}" for i in range(n)]
classes = [f"blob {j}" for j in range(m)]

shots = {j: [i for i in range(n) if labels[i] == j][:4] for j in range(m)}
fewshot = [(ids[i], j) for j, rows in shots.items() for i in rows]
eval_rows = [i for i in range(n) if ids[i] not in {f for f, _ in fewshot}]

manifest = tio.DatasetManifest(
    "fewshot-demo", classes, "blobs",
    [tio.ImageEntry(i, int(l)) for i, l in zip(ids, labels)],
    fewshot_labels=fewshot)
# class prompts loosely aligned with their clusters, like a real encoder's
overrides = {f"a photo of a {c}": centers[j] + 0.3 * rng.standard_normal(d)
             for j, c in enumerate(classes)}
embedder = HashEmbedder(d, overrides)

results = {}
for mode in ("zero-shot", "few-shot"):
    cfg = RunConfig(mode=mode, iterations=1, temperature=1.0, store_z=True,
                    attribute_mode="static", solver=SolverConfig(max_outer_iters=10))
    results[mode] = run(cfg, features=FeatureMatrix(pts, ids), manifest=manifest,
                        bank=build_class_prompt_bank(classes, embedder),
                        embedder=embedder)

# compare both modes on the identical unlabeled rows
for mode, result in results.items():
    acc = np.mean(result.labels[eval_rows] == labels[eval_rows])
    print(f"{mode:10s} accuracy on the {len(eval_rows)} unlabeled rows: {acc:.4f}")
row, lab = ids.index(fewshot[0][0]), fewshot[0][1]
print(f"clamped row {row} in the few-shot output: {results['few-shot'].z[row]} "
      f"(one-hot at class {lab})")

# ------------------------------------------------------------ seen classes
print()
m2 = 4
classes2 = [f"thing {j}" for j in range(m2)]
images = (
    [tio.ImageEntry(f"tr{i}", i % 2) for i in range(10)]        # seen 0, 1
    + [tio.ImageEntry(f"te{i}", 2 + i % 2) for i in range(24)]  # unseen 2, 3
)
manifest2 = tio.DatasetManifest("seen-demo", classes2, "things", images,
                                seen_classes=classes2[:2])
plan = seen_class_split(manifest2)
print(f"seen classes:   {[classes2[j] for j in plan.seen_class_indices]}")
print(f"unseen classes: {plan.target_manifest.classes}")
print(f"adapt on {len(plan.train_manifest.images)} labeled images, "
      f"transduce over {len(plan.target_manifest.images)} target images")

n2 = len(images)
centers2 = rng.standard_normal((m2, d))
centers2 /= np.linalg.norm(centers2, axis=1, keepdims=True)
truth2 = np.array([im.class_index for im in images])
pts2 = centers2[truth2] + 0.3 * rng.standard_normal((n2, d))
pts2 /= np.linalg.norm(pts2, axis=1, keepdims=True)

embedder2 = HashEmbedder(d, {f"a photo of a {c}": centers2[j] + 0.2 * rng.standard_normal(d)
                             for j, c in enumerate(classes2)})
cfg = RunConfig(mode="seen-classes", iterations=1, temperature=1.0,
                attribute_mode="static", solver=SolverConfig(max_outer_iters=10))
result = run(cfg, features=FeatureMatrix(pts2, [im.id for im in images]),
             manifest=manifest2,
             bank=build_class_prompt_bank(classes2, embedder2), embedder=embedder2)
print(f"unseen-class top-1 {result.metrics['top1_accuracy']:.4f} over "
      f"{len(result.image_ids)} images")
