"""
Closing gaps with fuzzy connectedness
=====================================

Candidate voxels seed a widest-path search through the lung. A voxel joins
when some path from a seed never crosses an intensity step that is too
steep for the chosen affinity width.
"""

import numpy as np

from connseg.fuzzyconn import AffinityParams, connectedness_map, consolidate_candidates

rng = np.random.default_rng(0)
image = np.full((20, 9, 9), 200.0) + rng.normal(0, 0.3, (20, 9, 9))
tube = np.zeros(image.shape, bool)
tube[:, 3:6, 3:6] = True
image[tube] = 0.3 * rng.normal(size=tube.sum())
lung = np.ones(image.shape, bool)

# %%
# The candidate mask misses a stretch in the middle of the tube.
candidates = tube.copy()
candidates[8:12] = False
print("missed lumen voxels:", int((tube & ~candidates).sum()))

# %%
# Strength along the tube axis, starting from the candidates.
params = AffinityParams(sigma=1.0, theta=0.9)
strength = connectedness_map(image, candidates, lung, params)
print("strength on the axis:", np.round(strength[:, 4, 4], 3).tolist())
print("strength outside the tube:", round(float(strength[~tube].max()), 6))

# %%
# Consolidation keeps the candidates and adds voxels above theta.
final = consolidate_candidates(candidates, image, lung, params)
print("recovered:", int((final & ~candidates).sum()), "false additions:", int((final & ~tube).sum()))
