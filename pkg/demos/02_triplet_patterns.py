"""
Modality patterns and triplet enumeration
=========================================

A pattern such as (A, V, V) says: audio anchor, visual positive, visual
negative. The named presets reproduce the ablation sets, and
``enumerate_triplets`` lists the concrete batch indices for one pattern.
"""

# %%
from crosstriplet.triplets import PRESET_NAMES, TripletPattern, enumerate_triplets, preset

for name in PRESET_NAMES:
    print(f"{name:>10}: {preset(name).describe()}")

# %%
# Within one modality an anchor cannot be its own positive. Across
# modalities it can: the clip's other view is the most natural positive.
labels = [0, 0, 1, 1]
print("(A,A,V):", enumerate_triplets(labels, TripletPattern.parse("AAV")).tolist())
print("(A,V,V):", enumerate_triplets(labels, TripletPattern.parse("AVV")).tolist())

# %%
# For large batches a seeded subsample per anchor bounds the cost.
big = [k % 4 for k in range(40)]
full = enumerate_triplets(big, TripletPattern.parse("VAV"))
sampled = enumerate_triplets(big, TripletPattern.parse("VAV"), "sampled:5:0")
print(len(full), "admissible triples,", len(sampled), "kept by sampled:5")
