"""The attribute bank and its averaged text prior.

Shows how per-class attribute lists turn into class scores: the mean
embedding of each class's attributes is matched against every image, and
a temperature-scaled softmax gives the prior.  Also demonstrates the two
bank invariants that matter in practice: duplicates never enter, and
duplicating an embedding never changes the prior.
"""

import numpy as np

from translabel import AttributeBank, AttributeRecord, FeatureMatrix, validate
from translabel.mocks import HashEmbedder
from translabel.prior import compute_text_prior

rng = np.random.default_rng(1)
d = 32
embed = HashEmbedder(d)

classes = ["Western Gull", "California Gull"]
texts = {
    "Western Gull": [
        "a photo of a Western Gull",
        "bird with a dark slate-gray back",
        "bird with pink legs",
    ],
    "California Gull": [
        "a photo of a California Gull",
        "bird with a yellow bill with a black ring",
    ],
}
bank = AttributeBank(classes)
for j, name in enumerate(classes):
    for t in texts[name]:
        bank.add(j, AttributeRecord(t, embed.embed_one(t)))

print("bank sizes per class:", bank.snapshot_sizes())
print("validate(bank):", validate(bank) or "ok")

# duplicates are rejected at the door (case/whitespace-insensitive)
added = bank.add(0, AttributeRecord("BIRD WITH  PINK LEGS", embed.embed_one("x")))
print("adding a duplicate returned:", added, "| sizes:", bank.snapshot_sizes())

# a small synthetic image set: 6 points near each class's mean embedding
means = bank.class_embedding_means()
pts = np.vstack([
    means[0] + 0.1 * rng.standard_normal((6, d)),
    means[1] + 0.1 * rng.standard_normal((6, d)),
])
pts /= np.linalg.norm(pts, axis=1, keepdims=True)
features = FeatureMatrix(pts)

prior = compute_text_prior(features, bank, temperature=0.05)
print("\nprior (rows sum to one):")
for i, row in enumerate(prior.y_hat):
    print(f"  image {i:2d}: " + "  ".join(f"{v:.3f}" for v in row))

# the prior depends on the attribute MEAN: doubling a class's whole list
# (every embedding repeated once) leaves it untouched
bank2 = AttributeBank(classes, [list(r) for r in bank.attrs])
for k, rec in enumerate(list(bank2.attrs[1])):
    bank2.attrs[1].append(AttributeRecord(f"alias {k}", rec.embedding))
p2 = compute_text_prior(features, bank2, temperature=0.05)
print("\nmax prior shift after doubling class 1's attribute list: "
      f"{np.max(np.abs(p2.y_hat - prior.y_hat)):.2e}")
