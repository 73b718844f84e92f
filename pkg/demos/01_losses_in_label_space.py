"""
Label-space losses on hand-placed embeddings
=============================================

Both branches emit c-dimensional scores that are regressed onto one-hot
class vectors. On top of that, triplet hinges compare distances between an
anchor, a same-class positive and a different-class negative, where the
three slots may come from different modalities.
"""

# %%
import numpy as np

from crosstriplet.data import one_hot_matrix
from crosstriplet.losses import cross_triplet_loss, label_loss, total_loss, triplet_hinge

labels = np.array([0, 0, 1, 1])
onehot = one_hot_matrix(labels, 2)
print(onehot)

# %%
# Embeddings sitting exactly on their one-hot corners have zero label loss.
# Moving them off by a residual R costs ||R||_F / n per modality.
print("on target:", label_loss(onehot, onehot, onehot))
print("all zeros:", label_loss(np.zeros((4, 2)), np.zeros((4, 2)), onehot))

# %%
# A single hinge is zero once the negative is at least `margin` further away
# than the positive, and grows linearly inside that boundary.
for d_an in [3.0, 2.0, 1.5, 1.0]:
    print(f"d_ap=1.0 d_an={d_an}: hinge={triplet_hinge(1.0, d_an, 1.0)}")

# %%
# The cross-triplet loss enumerates every admissible triple for each
# modality pattern of a combination set and averages the hinges.
rng = np.random.default_rng(0)
audio = onehot + 0.4 * rng.normal(size=onehot.shape)
visual = onehot + 0.4 * rng.normal(size=onehot.shape)
for combos in ["baseline1", "baseline4", "full"]:
    value, active = cross_triplet_loss(audio, visual, labels, combos, margin=1.0)
    print(f"{combos:>10}: loss={value:.4f} active triplets={active}")

# %%
# The training objective is the plain sum of both parts.
b = total_loss(audio, visual, labels, onehot)
print(b)
assert b.total == b.label_loss + b.cross_triplet_loss
