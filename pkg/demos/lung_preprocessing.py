"""
From synthetic CT to network inputs
===================================

The phantom gives a noisy chest volume in Hounsfield units. Preprocessing
extracts the lung field, computes the distance to its border and maps
intensities onto 0..255.
"""

import numpy as np

from connseg.phantom import PhantomConfig, generate
from connseg.preprocess import clip_normalize, distance_transform, extract_lung_mask, lung_bbox

ct, airway, lung_truth = generate(PhantomConfig(seed=0))
print("CT shape", ct.shape, "HU range", float(ct.data.min()), "to", float(ct.data.max()))

# %%
# Lung extraction: smooth each slice, threshold air, drop the air outside
# the body, keep the two largest components and repair each slice.
lung = extract_lung_mask(ct.data)
overlap = (lung & lung_truth).sum() / lung_truth.sum()
print(f"lung mask: {int(lung.sum())} voxels, covers {overlap:.1%} of the phantom lungs")
print("airway voxels outside the lung mask:", int((airway & ~lung).sum()))
print("lung bounding box:", lung_bbox(lung))

# %%
# Distance to the lung border; deeper voxels sit further from the pleura.
dist = distance_transform(lung)
print(f"max distance {dist.max():.2f} voxels, mean inside lung {dist[lung].mean():.2f}")

# %%
# Intensity window -1000..600 HU mapped onto 0..255.
image = clip_normalize(ct.data)
print(f"airway lumen mean {image[airway].mean():.1f}, lung parenchyma mean {image[lung & ~airway].mean():.1f}")

# %%
# A coarse text view of the central coronal slice: '#' airway, '.' lung.
mid = ct.shape[2] // 2 - ct.shape[2] // 4
rows = []
for z in range(0, ct.shape[0], 2):
    rows.append("".join("#" if airway[z, y, mid] else "." if lung[z, y, mid] else " " for y in range(ct.shape[1])))
print("\n".join(rows))
