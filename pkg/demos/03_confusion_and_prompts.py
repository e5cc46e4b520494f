"""Confusion mining and the two prompt shapes.

Mines the images whose top-2 assignment probabilities sit within the
margin threshold, aggregates them into class pairs, greedily selects the
pairs that cover 5% of the confusion mass, and prints the exact prompts
that would be sent out for the winning pair (both directions).
"""

import numpy as np

from translabel.attributes import pairwise_prompt, static_prompt
from translabel.confusion import mine, select_pairs

rng = np.random.default_rng(4)
n, m = 400, 6
classes = ["Western Gull", "California Gull", "Least Flycatcher",
           "Olive-sided Flycatcher", "American Crow", "Common Raven"]

# synthetic soft assignments: mostly confident, with two deliberately
# confusable pairs injected
z = rng.dirichlet(np.full(m, 0.25), size=n)
for i in range(0, 60):                      # gulls fight over these rows
    a = rng.uniform(0.4, 0.5)
    z[i] = 0.01
    z[i, 0], z[i, 1] = a, a - rng.uniform(0, 0.08)
    z[i] /= z[i].sum()
for i in range(60, 90):                     # flycatchers over these
    a = rng.uniform(0.4, 0.5)
    z[i] = 0.01
    z[i, 2], z[i, 3] = a, a - rng.uniform(0, 0.08)
    z[i] /= z[i].sum()

report = mine(z, alpha=0.1)
print(f"{report.total_entries} confused images out of {n}")
print("pair counts (top 5):")
for pair, count in sorted(report.pair_counts.items(), key=lambda kv: -kv[1])[:5]:
    print(f"  {classes[pair[0]]} / {classes[pair[1]]}: {count}")

selected = select_pairs(report, coverage_fraction=0.05)
print("\nselected for attribute generation (5% cover):")
for c1, c2 in selected:
    print(f"  {classes[c1]} vs {classes[c2]}")

c1, c2 = selected[0]
attrs1 = ["bird with a dark slate-gray back", "bird with pink legs"]
attrs2 = ["bird with a yellow bill with a black ring"]

print("\n--- bootstrap prompt for one class ---")
print(static_prompt(classes[c1], "birds"))
print("\n--- pairwise prompt, first direction ---")
print(pairwise_prompt(classes[c1], attrs1, classes[c2], attrs2))
print("\n--- pairwise prompt, second direction ---")
print(pairwise_prompt(classes[c2], attrs2, classes[c1], attrs1))
